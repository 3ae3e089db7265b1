#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <string>
#include <vector>

#include "mprlab/errors.hpp"
#include "mprlab/expr.hpp"
#include "mprlab/io.hpp"
#include "mprlab/linalg.hpp"
#include "mprlab/poly.hpp"
#include "mprlab/rng.hpp"
#include "mprlab/scenario.hpp"

// Plant + output + exosystem bundle with cached Taylor data, the j-step
// output chain h^(j), relative degree detection, and the structural
// hypotheses (neutrally stable exosystem, linearly minimum phase plant,
// stabilizability) that regulation synthesis relies on.

namespace mprlab {

class SystemModel {
public:
    SystemModel(std::vector<Expr> f, Expr h, std::vector<Expr> a, Dims dims, int jet_cap)
        : dims_(dims), jet_cap_(jet_cap), f_(std::move(f)), h_(std::move(h)), a_(std::move(a)) {
        if (static_cast<int>(f_.size()) != dims_.n)
            throw StructuralError("model: plant map must have n entries");
        if (static_cast<int>(a_.size()) != dims_.k)
            throw StructuralError("model: exosystem map must have k entries");
        if (jet_cap_ < 1) throw StructuralError("model: jet cap must be >= 1");

        // the origin must be the operating point
        const std::vector<double> x0(dims_.n, 0.0), w0(dims_.k, 0.0);
        for (const auto& fi : f_)
            if (std::fabs(fi.eval(x0, 0.0, w0)) > 1e-10)
                throw StructuralError("model: f(0,0,0) != 0");
        if (std::fabs(h_.eval(x0, 0.0, w0)) > 1e-10)
            throw StructuralError("model: h(0,0,0) != 0");
        for (const auto& ai : a_)
            if (std::fabs(ai.eval(x0, 0.0, w0)) > 1e-10)
                throw StructuralError("model: a(0) != 0");
        for (const auto& ai : a_)
            if (ai.depends_on(VarClass::x) || ai.depends_on(VarClass::u))
                throw StructuralError("model: exosystem map may depend on w only");

        const auto lay = Expr::JetLayout::xuw(dims_);
        const auto lay_w = Expr::JetLayout::w_only(dims_);
        std::vector<TruncatedPoly> fj, aj;
        for (const auto& fi : f_) fj.push_back(fi.jet(lay, jet_cap_));
        for (const auto& ai : a_) aj.push_back(ai.jet(lay_w, jet_cap_));
        f_jets_ = PolyVector(std::move(fj));
        a_jets_ = PolyVector(std::move(aj));
        h_jet_ = h_.jet(lay, jet_cap_);

        df_dx_ = expr_jacobian(f_, VarClass::x, dims_.n);
        df_du_.reserve(f_.size());
        for (const auto& fi : f_) df_du_.push_back(fi.derivative(VarClass::u, 0));

        // compiled tapes for the hot paths: plain stepping, and stepping
        // with both Jacobians in one shared-subexpression pass
        compiled_step_ = CompiledExprs(std::span<const Expr>(f_));
        std::vector<Expr> with_jacobians = f_;
        for (int i = 0; i < dims_.n; ++i)
            for (int j = 0; j < dims_.n; ++j) with_jacobians.push_back(df_dx_[i][j]);
        for (int i = 0; i < dims_.n; ++i) with_jacobians.push_back(df_du_[i]);
        compiled_step_jacobians_ = CompiledExprs(std::span<const Expr>(with_jacobians));
        compiled_output_ = CompiledExprs(std::span<const Expr>(&h_, 1));
        compiled_exo_ = CompiledExprs(std::span<const Expr>(a_));
    }

    static SystemModel from_scenario(const ScenarioSpec& s, int jet_cap) {
        s.validate();
        return SystemModel(s.discrete_plant(), s.output_h, s.exo_a, s.dims, jet_cap);
    }

    const Dims& dims() const { return dims_; }
    int n() const { return dims_.n; }
    int k() const { return dims_.k; }
    int jet_cap() const { return jet_cap_; }

    const std::vector<Expr>& f() const { return f_; }
    const Expr& h() const { return h_; }
    const std::vector<Expr>& a() const { return a_; }

    const PolyVector& f_jets() const { return f_jets_; }   // (x, u, w) space
    const TruncatedPoly& h_jet() const { return h_jet_; }  // (x, u, w) space
    const PolyVector& a_jets() const { return a_jets_; }   // w space

    const std::vector<std::vector<Expr>>& df_dx() const { return df_dx_; }
    const std::vector<Expr>& df_du() const { return df_du_; }

    std::vector<double> step(const std::vector<double>& x, double u,
                             const std::vector<double>& w) const {
        std::vector<double> out(dims_.n);
        compiled_step_.eval(x, u, w, out);
        return out;
    }

    double output(const std::vector<double>& x, double u, const std::vector<double>& w) const {
        double y = 0.0;
        compiled_output_.eval(x, u, w, std::span<double>(&y, 1));
        return y;
    }

    std::vector<double> exo_step(const std::vector<double>& w) const {
        std::vector<double> out(dims_.k);
        compiled_exo_.eval({}, 0.0, w, out);
        return out;
    }

    // outputs [f (n)]
    const CompiledExprs& compiled_step() const { return compiled_step_; }
    // outputs [f (n), df/dx row-major (n*n), df/du (n)]
    const CompiledExprs& compiled_step_jacobians() const { return compiled_step_jacobians_; }

private:
    Dims dims_;
    int jet_cap_;
    std::vector<Expr> f_;
    Expr h_;
    std::vector<Expr> a_;
    PolyVector f_jets_;
    TruncatedPoly h_jet_;
    PolyVector a_jets_;
    std::vector<std::vector<Expr>> df_dx_;
    std::vector<Expr> df_du_;
    CompiledExprs compiled_step_;
    CompiledExprs compiled_step_jacobians_;
    CompiledExprs compiled_output_;
    CompiledExprs compiled_exo_;
};

// Grade-1 Taylor data of the combined system:
//   x+ = F x + G u + B w + ...,  y = H x + J u + D w + ...,  w+ = A w + ...
struct LinearData {
    Mat F, G, B, H, J, D, A;
};

inline LinearData linearize(const SystemModel& m) {
    const int n = m.n(), k = m.k();
    LinearData ld{Mat(n, n), Mat(n, 1), Mat(n, k), Mat(1, n), Mat(1, 1), Mat(1, k), Mat(k, k)};
    auto coeff_of = [](const TruncatedPoly& p, int arity, int var) {
        std::vector<int> e(arity, 0);
        e[var] = 1;
        return p.coeff(std::move(e));
    };
    const int arity = n + 1 + k;
    for (int i = 0; i < n; ++i) {
        const auto& fj = m.f_jets()[i];
        for (int j = 0; j < n; ++j) ld.F(i, j) = coeff_of(fj, arity, j);
        ld.G(i, 0) = coeff_of(fj, arity, n);
        for (int j = 0; j < k; ++j) ld.B(i, j) = coeff_of(fj, arity, n + 1 + j);
    }
    for (int j = 0; j < n; ++j) ld.H(0, j) = coeff_of(m.h_jet(), arity, j);
    ld.J(0, 0) = coeff_of(m.h_jet(), arity, n);
    for (int j = 0; j < k; ++j) ld.D(0, j) = coeff_of(m.h_jet(), arity, n + 1 + j);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) ld.A(i, j) = coeff_of(m.a_jets()[i], k, j);
    return ld;
}

// Eigenvalues of a small dense matrix with a certified determinant
// residual on every value.
inline std::vector<Cplx> eig_small(const Mat& m) {
    auto eigs = eigenvalues(m);
    for (const auto& lambda : eigs) {
        if (eig_residual(m, lambda) > 1e-8)
            throw NumericError("model: eigenvalue failed the determinant residual check");
    }
    return eigs;
}

// The j-step output expressions h^(0) ... h^(r) together with the
// relative degree r (first j whose output is influenced by u(t)).
struct OutputChain {
    std::vector<Expr> h;       // h[j] = h^(j)(x, u, w)
    int relative_degree = 0;
    bool certified = false;    // u-(in)dependence verified on a sampled box
    double certificate_box = 0.0;
};

struct OutputChainOptions {
    double u_threshold = 1e-9; // |dh/du| below this counts as independent
    int cert_samples = 100;
    double cert_box = 0.5;
    std::uint64_t seed = 0;
};

inline OutputChain build_output_chain(const SystemModel& m, int max_r,
                                      const OutputChainOptions& opt = {}) {
    if (max_r < 1) throw StructuralError("model: max_r must be >= 1");
    OutputChain chain;
    chain.certificate_box = opt.cert_box;

    // substitution x_i -> f_i(x,u,w), w_j -> a_j(w); u stays
    Expr::Substitution advance;
    advance.x.resize(m.n());
    advance.w.resize(m.k());
    for (int i = 0; i < m.n(); ++i) advance.x[i] = m.f()[i];
    for (int j = 0; j < m.k(); ++j) advance.w[j] = m.a()[j];

    const std::vector<double> x0(m.n(), 0.0), w0(m.k(), 0.0);
    chain.h.push_back(m.h());
    int r = -1;
    for (int j = 0; j <= max_r; ++j) {
        if (j > 0) chain.h.push_back(chain.h.back().substitute(advance));
        const Expr dh_du = chain.h[j].derivative(VarClass::u, 0);
        if (std::fabs(dh_du.eval(x0, 0.0, w0)) > opt.u_threshold) {
            r = j;
            break;
        }
    }
    if (r < 0)
        throw RelativeDegreeError("model: no u-dependence found in the output chain through step " +
                                  std::to_string(max_r));
    chain.relative_degree = r;
    chain.h.resize(r + 1);

    // sampled certificate: u-independence below r and non-vanishing at r
    Rng rng(opt.seed);
    chain.certified = true;
    std::vector<Expr> dh_du;
    for (const auto& hj : chain.h) dh_du.push_back(hj.derivative(VarClass::u, 0));
    for (int s = 0; s < opt.cert_samples && chain.certified; ++s) {
        const auto xs = rng.box_point(m.n(), opt.cert_box);
        const auto ws = rng.box_point(m.k(), opt.cert_box);
        const double us = rng.uniform(-opt.cert_box, opt.cert_box);
        for (int j = 0; j < r; ++j)
            if (std::fabs(dh_du[j].eval(xs, us, ws)) > opt.u_threshold) chain.certified = false;
        if (std::fabs(dh_du[r].eval(xs, us, ws)) <= opt.u_threshold) chain.certified = false;
    }
    return chain;
}

// Plant zeros from the feedback-invariant form: the r eigenvalues that
//   Fbar = F - G (H F^r) / (H F^{r-1} G)
// places at the origin are removed; the remaining n - r are the zeros.
inline std::vector<Cplx> plant_zeros(const LinearData& ld, int r) {
    const std::size_t n = ld.F.rows();
    Mat HFr = ld.H;
    for (int i = 0; i < r; ++i) HFr = HFr * ld.F;
    Mat HFr1 = ld.H;
    for (int i = 0; i + 1 < r; ++i) HFr1 = HFr1 * ld.F;
    const double denom = (HFr1 * ld.G)(0, 0);
    if (std::fabs(denom) <= 1e-9)
        throw RelativeDegreeError("model: H F^{r-1} G vanishes; inconsistent relative degree");
    const Mat fbar = ld.F - ld.G * (HFr * (1.0 / denom));
    auto eigs = eig_small(fbar);
    std::sort(eigs.begin(), eigs.end(),
              [](const Cplx& a, const Cplx& b) { return std::abs(a) < std::abs(b); });
    std::vector<Cplx> zeros(eigs.begin() + std::min<std::size_t>(r, n), eigs.end());
    std::sort(zeros.begin(), zeros.end(), [](const Cplx& a, const Cplx& b) {
        if (a.real() != b.real()) return a.real() < b.real();
        return a.imag() < b.imag();
    });
    return zeros;
}

struct StructureReport {
    int relative_degree = 0;
    std::vector<Cplx> plant_poles;
    std::vector<Cplx> plant_zeros;
    std::vector<Cplx> exo_poles;
    bool stabilizable = false;
    bool linearly_minimum_phase = false;
    bool exo_neutral = false;
    bool relative_degree_certified = false;
    double certificate_box = 0.0;

    bool all_ok() const { return stabilizable && linearly_minimum_phase && exo_neutral; }

    // zero dynamics may be hyperbolic yet unstable; synthesis requires the
    // stronger minimum-phase flag, so this is reported separately
    bool hyperbolic_zero_dynamics() const {
        for (const auto& z : plant_zeros)
            if (std::fabs(std::abs(z) - 1.0) <= 1e-6) return false;
        return true;
    }

    KeyValues to_key_values() const {
        KeyValues kv;
        kv.emplace_back("relative_degree", std::to_string(relative_degree));
        auto list = [](const std::vector<Cplx>& v) {
            std::string s;
            for (std::size_t i = 0; i < v.size(); ++i) {
                if (i) s += "; ";
                s += format_double(v[i].real()) + (v[i].imag() < 0 ? " - " : " + ") +
                     format_double(std::fabs(v[i].imag())) + "i";
            }
            return s.empty() ? std::string("none") : s;
        };
        kv.emplace_back("plant_poles", list(plant_poles));
        kv.emplace_back("plant_zeros", list(plant_zeros));
        kv.emplace_back("exo_poles", list(exo_poles));
        kv.emplace_back("stabilizable", stabilizable ? "true" : "false");
        kv.emplace_back("linearly_minimum_phase", linearly_minimum_phase ? "true" : "false");
        kv.emplace_back("exo_neutral", exo_neutral ? "true" : "false");
        kv.emplace_back("hyperbolic_zero_dynamics", hyperbolic_zero_dynamics() ? "true" : "false");
        kv.emplace_back("relative_degree_certified",
                        relative_degree_certified ? "true" : "false");
        kv.emplace_back("certificate_box", format_double(certificate_box));
        return kv;
    }

    std::string summary() const {
        std::string s = "structure report\n";
        for (const auto& [k, v] : to_key_values()) s += "  " + k + " = " + v + "\n";
        s += all_ok() ? "  verdict: regulation hypotheses hold\n"
                      : "  verdict: regulation hypotheses VIOLATED\n";
        return s;
    }
};

struct StructureOptions {
    int max_r = 8;
    double unit_circle_margin = 1e-6;
    OutputChainOptions chain;
};

inline StructureReport structure_report(const SystemModel& m, const StructureOptions& opt = {}) {
    StructureReport rep;
    const LinearData ld = linearize(m);
    const OutputChain chain = build_output_chain(m, opt.max_r, opt.chain);
    rep.relative_degree = chain.relative_degree;
    rep.relative_degree_certified = chain.certified;
    rep.certificate_box = chain.certificate_box;
    rep.plant_poles = eig_small(ld.F);
    rep.plant_zeros = plant_zeros(ld, chain.relative_degree);
    rep.exo_poles = eig_small(ld.A);

    rep.exo_neutral = true;
    for (const auto& p : rep.exo_poles)
        if (std::fabs(std::abs(p) - 1.0) > opt.unit_circle_margin) rep.exo_neutral = false;

    rep.linearly_minimum_phase = true;
    for (const auto& z : rep.plant_zeros)
        if (std::abs(z) >= 1.0 - opt.unit_circle_margin) rep.linearly_minimum_phase = false;

    // PBH: rank [lambda I - F, G] = n at every unstable/marginal pole
    rep.stabilizable = true;
    const int n = m.n();
    for (const auto& lambda : rep.plant_poles) {
        if (std::abs(lambda) < 1.0 - 1e-9) continue;
        std::vector<std::vector<Cplx>> pbh(n, std::vector<Cplx>(n + 1));
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j)
                pbh[i][j] = (i == j ? lambda : Cplx(0.0, 0.0)) - Cplx(ld.F(i, j), 0.0);
            pbh[i][n] = Cplx(ld.G(i, 0), 0.0);
        }
        if (rank_complex(pbh) < static_cast<std::size_t>(n)) rep.stabilizable = false;
    }
    return rep;
}

// Running cost l = (h^(0))^2 + (h^(r))^2: zero exactly on the zero
// manifold, positive semidefinite everywhere.
inline Expr build_running_cost(const OutputChain& chain) {
    if (chain.relative_degree < 1)
        throw StructuralError("model: running cost needs relative degree >= 1");
    return Expr::pow(chain.h.front(), 2) + Expr::pow(chain.h.back(), 2);
}

} // namespace mprlab
