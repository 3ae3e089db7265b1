#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mprlab/errors.hpp"
#include "mprlab/io.hpp"

// Multivariate polynomials truncated at a fixed total degree, stored as
// sparse monomial->coefficient maps in graded-lex order. These carry all
// Taylor-series data in the toolkit: plant jets, tracking-manifold series,
// terminal costs and feedbacks, and the graded residuals that certify them.

namespace mprlab {

// Coefficients with magnitude below this are dropped after every
// operation, which makes canonical-form equality meaningful.
inline constexpr double kCoeffPrune = 1e-14;

struct Monomial {
    std::vector<int> exponents;

    int degree() const { return std::accumulate(exponents.begin(), exponents.end(), 0); }

    bool operator==(const Monomial& o) const { return exponents == o.exponents; }
};

// Graded lexicographic: lower total degree first; within a degree,
// lexicographically larger exponent vectors first (z1^2 before z1 z2).
struct GradedLexLess {
    bool operator()(const Monomial& a, const Monomial& b) const {
        const int da = a.degree(), db = b.degree();
        if (da != db) return da < db;
        return std::lexicographical_compare(b.exponents.begin(), b.exponents.end(),
                                            a.exponents.begin(), a.exponents.end());
    }
};

class TruncatedPoly {
public:
    using TermMap = std::map<Monomial, double, GradedLexLess>;

    TruncatedPoly() : arity_(0), cap_(0) {}

    static TruncatedPoly zero(int arity, int cap) { return TruncatedPoly(arity, cap); }

    static TruncatedPoly constant(int arity, int cap, double value) {
        TruncatedPoly p(arity, cap);
        p.add_term(Monomial{std::vector<int>(arity, 0)}, value);
        return p;
    }

    static TruncatedPoly variable(int arity, int cap, int index) {
        if (index < 0 || index >= arity) throw StructuralError("poly: variable index out of range");
        TruncatedPoly p(arity, cap);
        if (cap >= 1) {
            Monomial m{std::vector<int>(arity, 0)};
            m.exponents[index] = 1;
            p.add_term(m, 1.0);
        }
        return p;
    }

    static TruncatedPoly monomial(int arity, int cap, std::vector<int> exponents, double coeff) {
        if (static_cast<int>(exponents.size()) != arity)
            throw StructuralError("poly: exponent vector length != arity");
        TruncatedPoly p(arity, cap);
        p.add_term(Monomial{std::move(exponents)}, coeff);
        return p;
    }

    int arity() const { return arity_; }
    int degree_cap() const { return cap_; }
    const TermMap& terms() const { return terms_; }
    bool is_zero() const { return terms_.empty(); }
    std::size_t term_count() const { return terms_.size(); }

    double coeff(const Monomial& m) const {
        auto it = terms_.find(m);
        return it == terms_.end() ? 0.0 : it->second;
    }

    double coeff(std::vector<int> exponents) const { return coeff(Monomial{std::move(exponents)}); }

    double constant_term() const { return coeff(Monomial{std::vector<int>(arity_, 0)}); }

    double max_abs_coeff() const {
        double s = 0.0;
        for (const auto& [m, c] : terms_) s = std::max(s, std::fabs(c));
        return s;
    }

    bool operator==(const TruncatedPoly& o) const {
        return arity_ == o.arity_ && cap_ == o.cap_ && terms_ == o.terms_;
    }

    TruncatedPoly operator-() const {
        TruncatedPoly r(arity_, cap_);
        for (const auto& [m, c] : terms_) r.terms_.emplace(m, -c);
        return r;
    }

    TruncatedPoly operator+(const TruncatedPoly& o) const {
        check_compatible(o);
        TruncatedPoly r = *this;
        for (const auto& [m, c] : o.terms_) r.add_term(m, c);
        return r;
    }

    TruncatedPoly operator-(const TruncatedPoly& o) const {
        check_compatible(o);
        TruncatedPoly r = *this;
        for (const auto& [m, c] : o.terms_) r.add_term(m, -c);
        return r;
    }

    TruncatedPoly operator*(double s) const {
        TruncatedPoly r(arity_, cap_);
        for (const auto& [m, c] : terms_) r.add_term(m, c * s);
        return r;
    }

    // product with every term of degree > cap discarded
    TruncatedPoly operator*(const TruncatedPoly& o) const {
        check_compatible(o);
        TruncatedPoly r(arity_, cap_);
        Monomial prod{std::vector<int>(arity_, 0)};
        for (const auto& [ma, ca] : terms_) {
            const int da = ma.degree();
            for (const auto& [mb, cb] : o.terms_) {
                if (da + mb.degree() > cap_) continue;
                for (int i = 0; i < arity_; ++i) prod.exponents[i] = ma.exponents[i] + mb.exponents[i];
                r.add_term(prod, ca * cb);
            }
        }
        r.prune();
        return r;
    }

    TruncatedPoly pow(int e) const {
        if (e < 0) throw StructuralError("poly: negative power");
        TruncatedPoly r = constant(arity_, cap_, 1.0);
        TruncatedPoly base = *this;
        while (e > 0) {
            if (e & 1) r = r * base;
            e >>= 1;
            if (e) base = base * base;
        }
        return r;
    }

    // this(inner[0], ..., inner[arity-1]); exact on polynomial identities up
    // to the cap whenever the inner entries have zero constant term.
    TruncatedPoly compose(std::span<const TruncatedPoly> inner) const {
        if (static_cast<int>(inner.size()) != arity_)
            throw StructuralError("poly: compose inner length != outer arity");
        for (const auto& p : inner) {
            if (!inner.empty() && (p.arity() != inner[0].arity() || p.degree_cap() != cap_))
                throw StructuralError("poly: compose inner polys must share arity and the outer cap");
        }
        const int in_arity = inner.empty() ? 0 : inner[0].arity();
        TruncatedPoly r = zero(in_arity, cap_);
        // cache powers of each inner entry as needed
        std::vector<std::vector<TruncatedPoly>> pows(arity_);
        for (int i = 0; i < arity_; ++i) pows[i].push_back(constant(in_arity, cap_, 1.0));
        auto power_of = [&](int i, int e) -> const TruncatedPoly& {
            auto& cache = pows[i];
            while (static_cast<int>(cache.size()) <= e) cache.push_back(cache.back() * inner[i]);
            return cache[e];
        };
        for (const auto& [m, c] : terms_) {
            TruncatedPoly term = constant(in_arity, cap_, c);
            for (int i = 0; i < arity_; ++i)
                if (m.exponents[i] > 0) term = term * power_of(i, m.exponents[i]);
            r = r + term;
        }
        r.prune();
        return r;
    }

    // formal partial derivative; the stored cap does not change
    TruncatedPoly partial(int var_index) const {
        if (var_index < 0 || var_index >= arity_)
            throw StructuralError("poly: partial index out of range");
        TruncatedPoly r(arity_, cap_);
        for (const auto& [m, c] : terms_) {
            const int e = m.exponents[var_index];
            if (e == 0) continue;
            Monomial d = m;
            d.exponents[var_index] = e - 1;
            r.add_term(d, c * e);
        }
        r.prune();
        return r;
    }

    // homogeneous degree-d part; out-of-range d gives the zero polynomial
    TruncatedPoly grade(int d) const {
        TruncatedPoly r(arity_, cap_);
        for (const auto& [m, c] : terms_)
            if (m.degree() == d) r.terms_.emplace(m, c);
        return r;
    }

    double eval(std::span<const double> point) const {
        if (static_cast<int>(point.size()) != arity_)
            throw StructuralError("poly: eval point length != arity");
        double sum = 0.0;
        for (const auto& [m, c] : terms_) {
            double t = c;
            for (int i = 0; i < arity_; ++i)
                for (int e = 0; e < m.exponents[i]; ++e) t *= point[i];
            sum += t;
        }
        return sum;
    }

    double eval(const std::vector<double>& point) const {
        return eval(std::span<const double>(point));
    }

    // re-index into a larger variable tuple: old variable i becomes
    // variable var_map[i] of the new space
    TruncatedPoly embed(int new_arity, const std::vector<int>& var_map) const {
        if (static_cast<int>(var_map.size()) != arity_)
            throw StructuralError("poly: embed map length != arity");
        for (int v : var_map)
            if (v < 0 || v >= new_arity) throw StructuralError("poly: embed target out of range");
        TruncatedPoly r(new_arity, cap_);
        for (const auto& [m, c] : terms_) {
            Monomial nm{std::vector<int>(new_arity, 0)};
            for (int i = 0; i < arity_; ++i) nm.exponents[var_map[i]] += m.exponents[i];
            r.add_term(nm, c);
        }
        r.prune();
        return r;
    }

    // graded-lex term listing: one "coef * z1^a z2^b" line per term
    std::string to_debug_string(const std::vector<std::string>& names = {}) const {
        if (terms_.empty()) return "0\n";
        std::string out;
        for (const auto& [m, c] : terms_) {
            out += format_double(c);
            bool any = false;
            for (int i = 0; i < arity_; ++i) {
                const int e = m.exponents[i];
                if (e == 0) continue;
                out += any ? " " : " * ";
                any = true;
                out += i < static_cast<int>(names.size()) ? names[i] : "z" + std::to_string(i + 1);
                if (e > 1) out += "^" + std::to_string(e);
            }
            out += '\n';
        }
        return out;
    }

private:
    TruncatedPoly(int arity, int cap) : arity_(arity), cap_(cap) {
        if (arity < 0 || cap < 0) throw StructuralError("poly: arity and cap must be non-negative");
    }

    void check_compatible(const TruncatedPoly& o) const {
        if (arity_ != o.arity_ || cap_ != o.cap_)
            throw StructuralError("poly: arity/cap mismatch");
    }

    void add_term(const Monomial& m, double c) {
        if (m.degree() > cap_) return;
        auto [it, inserted] = terms_.try_emplace(m, c);
        if (!inserted) it->second += c;
        if (std::fabs(it->second) < kCoeffPrune) terms_.erase(it);
    }

    void prune() {
        for (auto it = terms_.begin(); it != terms_.end();) {
            if (std::fabs(it->second) < kCoeffPrune)
                it = terms_.erase(it);
            else
                ++it;
        }
    }

    int arity_;
    int cap_;
    TermMap terms_;
};

inline TruncatedPoly operator*(double s, const TruncatedPoly& p) { return p * s; }

// An ordered tuple of polynomials over one shared variable space
// (a vector field or a coordinate map as a series).
struct PolyVector {
    std::vector<TruncatedPoly> entries;

    PolyVector() = default;
    explicit PolyVector(std::vector<TruncatedPoly> e) : entries(std::move(e)) { validate(); }

    void validate() const {
        for (const auto& p : entries)
            if (p.arity() != entries[0].arity() || p.degree_cap() != entries[0].degree_cap())
                throw StructuralError("poly: PolyVector entries must share arity and cap");
    }

    std::size_t size() const { return entries.size(); }
    const TruncatedPoly& operator[](std::size_t i) const { return entries[i]; }
    TruncatedPoly& operator[](std::size_t i) { return entries[i]; }

    std::vector<double> eval(std::span<const double> point) const {
        std::vector<double> out;
        out.reserve(entries.size());
        for (const auto& p : entries) out.push_back(p.eval(point));
        return out;
    }

    PolyVector grade(int d) const {
        PolyVector g;
        g.entries.reserve(entries.size());
        for (const auto& p : entries) g.entries.push_back(p.grade(d));
        return g;
    }

    double max_abs_coeff() const {
        double s = 0.0;
        for (const auto& p : entries) s = std::max(s, p.max_abs_coeff());
        return s;
    }
};

// all exponent vectors of total degree exactly d over `arity` variables,
// in graded-lex order
inline std::vector<Monomial> monomials_of_degree(int arity, int d) {
    std::vector<Monomial> out;
    if (arity == 0) {
        if (d == 0) out.push_back(Monomial{{}});
        return out;
    }
    std::vector<int> exps(arity, 0);
    // recursive enumeration, first variable takes the largest share first
    auto rec = [&](auto&& self, int pos, int remaining) -> void {
        if (pos == arity - 1) {
            exps[pos] = remaining;
            out.push_back(Monomial{exps});
            return;
        }
        for (int e = remaining; e >= 0; --e) {
            exps[pos] = e;
            self(self, pos + 1, remaining - e);
        }
    };
    rec(rec, 0, d);
    return out;
}

} // namespace mprlab
