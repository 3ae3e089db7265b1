#pragma once

#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mprlab/errors.hpp"
#include "mprlab/expr.hpp"
#include "mprlab/io.hpp"

// Scenario definitions: the plant/exosystem/output bundle plus initial
// conditions and receding-horizon settings, loadable from a line-oriented
// text format or taken from the two built-in examples.

namespace mprlab {

struct MprSettings {
    int horizon = 4;
    int degree = 2;                // terminal cost degree
    std::optional<double> umax;    // |u| <= umax when present
};

struct ScenarioSpec {
    std::string name = "scenario";
    Dims dims;
    std::vector<Expr> plant_f;     // n entries in (x, u, w)
    Expr output_h;
    std::vector<Expr> exo_a;       // k entries in w

    bool continuous = false;       // plant_f is a continuous-time field in x
    double t_s = 0.0;              // sample time when continuous
    std::vector<double> control_column; // G appended after discretization

    std::vector<double> x0;
    std::vector<double> w0;
    MprSettings mpr;

    void validate() const {
        if (dims.n < 1 || dims.k < 1) throw StructuralError("scenario: dims must have n >= 1, k >= 1");
        if (static_cast<int>(plant_f.size()) != dims.n)
            throw StructuralError("scenario: plant_f length != n");
        if (static_cast<int>(exo_a.size()) != dims.k)
            throw StructuralError("scenario: exo_a length != k");
        if (continuous) {
            if (!(t_s > 0.0)) throw StructuralError("scenario: continuous-time plant needs ts > 0");
            if (static_cast<int>(control_column.size()) != dims.n)
                throw StructuralError("scenario: control column G must have n entries");
        }
        if (static_cast<int>(x0.size()) != dims.n) throw StructuralError("scenario: x0 length != n");
        if (static_cast<int>(w0.size()) != dims.k) throw StructuralError("scenario: w0 length != k");
        if (mpr.horizon < 1) throw StructuralError("scenario: horizon must be >= 1");
        if (mpr.degree < 2) throw StructuralError("scenario: terminal degree must be >= 2");
    }

    // Discrete-time plant map. Continuous scenarios are discretized by the
    // third-degree Lie series of the unforced field, with the control
    // entering afterwards through the constant column G.
    std::vector<Expr> discrete_plant() const {
        if (!continuous) return plant_f;
        std::vector<Expr> unforced;
        unforced.reserve(plant_f.size());
        Expr::Substitution sub;
        sub.u = Expr::constant(0.0);
        for (const auto& f : plant_f) unforced.push_back(f.substitute(sub));
        std::vector<Expr> fd = lie_discretize(unforced, t_s);
        for (int i = 0; i < dims.n; ++i)
            fd[i] = fd[i] + Expr::constant(control_column[i]) * Expr::variable(VarClass::u, 0);
        return fd;
    }
};

// ---------------------------------------------------------------------------
// Built-in scenarios
// ---------------------------------------------------------------------------

// Triple integrator-like linear plant with an oscillator exosystem.
// Everything about it (Francis solution, DP solution) is known in closed
// form, so it doubles as a calibration target.
inline ScenarioSpec scenario_linear_example() {
    ScenarioSpec s;
    s.name = "linear";
    s.dims = Dims{3, 2};
    s.plant_f = {
        parse_expr("x2", s.dims),
        parse_expr("x3 + u", s.dims),
        parse_expr("0.5 * u", s.dims),
    };
    s.output_h = parse_expr("x1 - w1", s.dims);
    s.exo_a = {
        parse_expr("-w2", s.dims),
        parse_expr("w1", s.dims),
    };
    s.x0 = {0.0, 0.0, 0.0};
    s.w0 = {1.0, 0.0};
    s.mpr.horizon = 4;
    s.mpr.degree = 2;
    return s;
}

// Asymmetrically damped pendulum tracking an oscillator of period 8. The
// continuous-time dynamics are sampled at t_s = pi/6 via the third-degree
// Lie series, so the undamped linearization has period about 12.
inline ScenarioSpec scenario_pendulum() {
    ScenarioSpec s;
    s.name = "pendulum";
    s.dims = Dims{2, 2};
    s.plant_f = {
        parse_expr("x2", s.dims),
        parse_expr("-sin(x1) - (x2 + x2^2 + x2^3) + u", s.dims),
    };
    s.output_h = parse_expr("x1 - w1", s.dims);
    const double c = std::sqrt(2.0) / 2.0; // rotation by pi/4
    const Expr w1 = Expr::variable(VarClass::w, 0);
    const Expr w2 = Expr::variable(VarClass::w, 1);
    s.exo_a = {
        Expr::constant(c) * w1 - Expr::constant(c) * w2,
        Expr::constant(c) * w1 + Expr::constant(c) * w2,
    };
    s.continuous = true;
    s.t_s = std::acos(-1.0) / 6.0;
    s.control_column = {0.0, 1.0};
    s.x0 = {0.0, 0.0};
    s.w0 = {1.0, 0.0};
    s.mpr.horizon = 4;
    s.mpr.degree = 4;
    return s;
}

// ---------------------------------------------------------------------------
// Scenario file format: `[section]` headers, `key = value` lines,
// `#` comments, whitespace-insensitive.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<double> parse_number_list(const std::string& src, int line_no) {
    std::vector<double> out;
    std::stringstream ss(src);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty())
            throw ParseError("scenario: empty entry in number list (line " +
                             std::to_string(line_no) + ")", line_no);
        char* end = nullptr;
        const double v = std::strtod(item.c_str(), &end);
        if (end != item.c_str() + item.size())
            throw ParseError("scenario: bad number '" + item + "' (line " +
                             std::to_string(line_no) + ")", line_no);
        out.push_back(v);
    }
    return out;
}

} // namespace detail

inline ScenarioSpec parse_scenario(const std::string& text, const std::string& name = "scenario") {
    using detail::trim;
    struct RawEntry {
        std::string key, value;
        int line;
    };
    std::vector<std::pair<std::string, std::vector<RawEntry>>> sections;
    {
        std::stringstream ss(text);
        std::string line;
        int line_no = 0;
        std::string current;
        while (std::getline(ss, line)) {
            ++line_no;
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']')
                    throw ParseError("scenario: malformed section header (line " +
                                     std::to_string(line_no) + ")", line_no);
                current = trim(line.substr(1, line.size() - 2));
                sections.emplace_back(current, std::vector<RawEntry>{});
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos || current.empty())
                throw ParseError("scenario: expected 'key = value' (line " +
                                 std::to_string(line_no) + ")", line_no);
            sections.back().second.push_back(
                {trim(line.substr(0, eq)), trim(line.substr(eq + 1)), line_no});
        }
    }

    ScenarioSpec s;
    s.name = name;

    auto find_section = [&](const std::string& sec) -> const std::vector<RawEntry>* {
        for (const auto& [n, entries] : sections)
            if (n == sec) return &entries;
        return nullptr;
    };

    const auto* dims_sec = find_section("dims");
    if (!dims_sec) throw ParseError("scenario: missing [dims] section", 0);
    for (const auto& e : *dims_sec) {
        if (e.key == "n")
            s.dims.n = std::atoi(e.value.c_str());
        else if (e.key == "k")
            s.dims.k = std::atoi(e.value.c_str());
        else
            throw ParseError("scenario: unknown key '" + e.key + "' in [dims] (line " +
                             std::to_string(e.line) + ")", e.line);
    }
    if (s.dims.n < 1 || s.dims.k < 1)
        throw ParseError("scenario: [dims] must set n >= 1 and k >= 1", 0);

    s.plant_f.assign(s.dims.n, Expr::constant(0.0));
    s.exo_a.assign(s.dims.k, Expr::constant(0.0));
    std::vector<bool> f_set(s.dims.n, false), a_set(s.dims.k, false);
    bool h_set = false;

    auto indexed = [](const std::string& key, const std::string& prefix) -> int {
        if (key.size() <= prefix.size() || key.compare(0, prefix.size(), prefix) != 0) return -1;
        for (std::size_t i = prefix.size(); i < key.size(); ++i)
            if (!std::isdigit(static_cast<unsigned char>(key[i]))) return -1;
        return std::atoi(key.c_str() + prefix.size());
    };

    for (const auto& [sec, entries] : sections) {
        if (sec == "dims") continue;
        for (const auto& e : entries) {
            try {
                if (sec == "plant") {
                    if (int i = indexed(e.key, "f"); i >= 1) {
                        if (i > s.dims.n)
                            throw ParseError("scenario: f index out of range", e.line);
                        s.plant_f[i - 1] = parse_expr(e.value, s.dims);
                        f_set[i - 1] = true;
                    } else if (e.key == "h") {
                        s.output_h = parse_expr(e.value, s.dims);
                        h_set = true;
                    } else if (e.key == "continuous") {
                        s.continuous = (e.value == "true" || e.value == "1");
                    } else if (e.key == "ts") {
                        s.t_s = std::strtod(e.value.c_str(), nullptr);
                    } else if (e.key == "G") {
                        s.control_column = detail::parse_number_list(e.value, e.line);
                    } else {
                        throw ParseError("scenario: unknown key '" + e.key + "' in [plant]", e.line);
                    }
                } else if (sec == "exo") {
                    if (int i = indexed(e.key, "a"); i >= 1) {
                        if (i > s.dims.k)
                            throw ParseError("scenario: a index out of range", e.line);
                        s.exo_a[i - 1] = parse_expr(e.value, s.dims);
                        a_set[i - 1] = true;
                        if (s.exo_a[i - 1].depends_on(VarClass::x) ||
                            s.exo_a[i - 1].depends_on(VarClass::u))
                            throw ParseError("scenario: exosystem map may depend on w only", e.line);
                    } else {
                        throw ParseError("scenario: unknown key '" + e.key + "' in [exo]", e.line);
                    }
                } else if (sec == "init") {
                    if (e.key == "x0")
                        s.x0 = detail::parse_number_list(e.value, e.line);
                    else if (e.key == "w0")
                        s.w0 = detail::parse_number_list(e.value, e.line);
                    else
                        throw ParseError("scenario: unknown key '" + e.key + "' in [init]", e.line);
                } else if (sec == "mpr") {
                    if (e.key == "horizon")
                        s.mpr.horizon = std::atoi(e.value.c_str());
                    else if (e.key == "degree")
                        s.mpr.degree = std::atoi(e.value.c_str());
                    else if (e.key == "umax")
                        s.mpr.umax = std::strtod(e.value.c_str(), nullptr);
                    else
                        throw ParseError("scenario: unknown key '" + e.key + "' in [mpr]", e.line);
                } else {
                    throw ParseError("scenario: unknown section [" + sec + "]", e.line);
                }
            } catch (const ParseError&) {
                throw;
            } catch (const Error& err) {
                throw ParseError(std::string(err.what()) + " (line " + std::to_string(e.line) + ")",
                                 e.line);
            }
        }
    }

    for (int i = 0; i < s.dims.n; ++i)
        if (!f_set[i]) throw ParseError("scenario: missing f" + std::to_string(i + 1), 0);
    for (int i = 0; i < s.dims.k; ++i)
        if (!a_set[i]) throw ParseError("scenario: missing a" + std::to_string(i + 1), 0);
    if (!h_set) throw ParseError("scenario: missing output h", 0);
    if (s.x0.empty()) s.x0.assign(s.dims.n, 0.0);
    if (s.w0.empty()) s.w0.assign(s.dims.k, 0.0);

    s.validate();
    return s;
}

inline std::string scenario_to_string(const ScenarioSpec& s) {
    std::string out;
    out += "# scenario: " + s.name + "\n";
    out += "[dims]\n";
    out += "n = " + std::to_string(s.dims.n) + "\n";
    out += "k = " + std::to_string(s.dims.k) + "\n";
    out += "[plant]\n";
    for (int i = 0; i < s.dims.n; ++i)
        out += "f" + std::to_string(i + 1) + " = " + s.plant_f[i].to_string() + "\n";
    out += "h = " + s.output_h.to_string() + "\n";
    if (s.continuous) {
        out += "continuous = true\n";
        out += "ts = " + format_double(s.t_s) + "\n";
        std::string g;
        for (int i = 0; i < s.dims.n; ++i) {
            if (i) g += ", ";
            g += format_double(s.control_column[i]);
        }
        out += "G = " + g + "\n";
    }
    out += "[exo]\n";
    for (int i = 0; i < s.dims.k; ++i)
        out += "a" + std::to_string(i + 1) + " = " + s.exo_a[i].to_string() + "\n";
    out += "[init]\n";
    std::string xs, ws;
    for (int i = 0; i < s.dims.n; ++i) {
        if (i) xs += ", ";
        xs += format_double(s.x0[i]);
    }
    for (int i = 0; i < s.dims.k; ++i) {
        if (i) ws += ", ";
        ws += format_double(s.w0[i]);
    }
    out += "x0 = " + xs + "\n";
    out += "w0 = " + ws + "\n";
    out += "[mpr]\n";
    out += "horizon = " + std::to_string(s.mpr.horizon) + "\n";
    out += "degree = " + std::to_string(s.mpr.degree) + "\n";
    if (s.mpr.umax) out += "umax = " + format_double(*s.mpr.umax) + "\n";
    return out;
}

} // namespace mprlab
