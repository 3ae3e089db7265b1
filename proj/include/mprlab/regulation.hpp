#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mprlab/errors.hpp"
#include "mprlab/linalg.hpp"
#include "mprlab/model.hpp"
#include "mprlab/poly.hpp"
#include "mprlab/rng.hpp"

// Tracking-manifold machinery: the linear Francis equations for (T, L)
// and the degree-by-degree homogeneous corrections (theta^[d], alpha^[d])
// to the invariance equations
//     f(theta(w), alpha(w), w) = theta(a(w)),   h(theta(w), alpha(w), w) = 0.

namespace mprlab {

struct FrancisSolution {
    Mat T; // n x k
    Mat L; // 1 x k
    double residual = 0.0;
};

inline double francis_residual(const LinearData& ld, const Mat& T, const Mat& L) {
    const Mat plant = ld.F * T + ld.G * L - T * ld.A + ld.B;
    const Mat output = ld.H * T + ld.J * L + ld.D;
    return plant.frobenius_norm() + output.frobenius_norm();
}

// Solve  [F G; H J][T; L] - [T; 0] A = -[B; D]  by vectorizing the
// (n+1) x k unknown into one dense linear system.
inline FrancisSolution solve_francis_linear(const LinearData& ld) {
    const int n = static_cast<int>(ld.F.rows());
    const int k = static_cast<int>(ld.A.rows());
    const int rows = n + 1;
    const int sz = rows * k;
    auto idx = [&](int i, int j) { return i * k + j; }; // row i of [T; L], column j

    Mat sys(sz, sz);
    std::vector<double> rhs(sz, 0.0);
    for (int j = 0; j < k; ++j) {
        for (int i = 0; i < n; ++i) { // plant block, entry (i, j)
            const int e = idx(i, j);
            for (int l = 0; l < n; ++l) sys(e, idx(l, j)) += ld.F(i, l);
            sys(e, idx(n, j)) += ld.G(i, 0);
            for (int l = 0; l < k; ++l) sys(e, idx(i, l)) -= ld.A(l, j);
            rhs[e] = -ld.B(i, j);
        }
        const int e = idx(n, j); // output block, entry j
        for (int l = 0; l < n; ++l) sys(e, idx(l, j)) += ld.H(0, l);
        sys(e, idx(n, j)) += ld.J(0, 0);
        rhs[e] = -ld.D(0, j);
    }

    Lu lu(sys);
    if (lu.singular())
        throw ResonanceError("regulation: Francis equations singular "
                             "(plant zeros resonate with exosystem poles)");
    const auto sol = lu.solve(rhs);

    FrancisSolution out{Mat(n, k), Mat(1, k), 0.0};
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) out.T(i, j) = sol[idx(i, j)];
    for (int j = 0; j < k; ++j) out.L(0, j) = sol[idx(n, j)];
    out.residual = francis_residual(ld, out.T, out.L);
    if (out.residual > 1e-10)
        throw NumericError("regulation: Francis residual " + format_double(out.residual) +
                           " exceeds 1e-10");
    return out;
}

// Power-series solution of the FBI equations through `degree`:
// theta(w) = T w + theta^[2](w) + ... , alpha(w) = L w + alpha^[2](w) + ...
struct FbiSolution {
    Mat T;
    Mat L;
    PolyVector theta;     // w space, all grades 1..degree
    TruncatedPoly alpha;  // w space
    int degree = 1;
    std::vector<double> graded_conds; // condition estimate per solved degree (2..)

    PolyVector theta_hi() const { // grades 2..degree only
        PolyVector hi = theta;
        for (auto& p : hi.entries) p = p - p.grade(1);
        return hi;
    }
    TruncatedPoly alpha_hi() const { return alpha - alpha.grade(1); }
};

namespace detail {

// inner tuple (theta_1..theta_n, alpha, w_1..w_k) for composing the
// cached (x, u, w) jets with the manifold series
inline std::vector<TruncatedPoly> manifold_inner(const SystemModel& m, const FbiSolution& sol) {
    std::vector<TruncatedPoly> inner;
    inner.reserve(m.n() + 1 + m.k());
    for (int i = 0; i < m.n(); ++i) inner.push_back(sol.theta[i]);
    inner.push_back(sol.alpha);
    for (int j = 0; j < m.k(); ++j)
        inner.push_back(TruncatedPoly::variable(m.k(), m.jet_cap(), j));
    return inner;
}

} // namespace detail

// Series residual of the FBI equations at the solution's cap:
// plant rows f(theta, alpha, w) - theta(a(w)) and output row h(theta, alpha, w).
inline std::pair<PolyVector, TruncatedPoly> fbi_series_residual(const SystemModel& m,
                                                                const FbiSolution& sol) {
    const auto inner = detail::manifold_inner(m, sol);
    std::vector<TruncatedPoly> plant;
    plant.reserve(m.n());
    const std::span<const TruncatedPoly> a_inner(m.a_jets().entries);
    for (int i = 0; i < m.n(); ++i)
        plant.push_back(m.f_jets()[i].compose(inner) - sol.theta[i].compose(a_inner));
    TruncatedPoly output = m.h_jet().compose(inner);
    return {PolyVector(std::move(plant)), std::move(output)};
}

inline double fbi_graded_residual_norm(const SystemModel& m, const FbiSolution& sol, int d) {
    const auto [plant, output] = fbi_series_residual(m, sol);
    double norm = output.grade(d).max_abs_coeff();
    for (const auto& p : plant.entries) norm = std::max(norm, p.grade(d).max_abs_coeff());
    return norm;
}

// One homogeneous level: given a solution complete through degree d-1,
// solve the degree-d graded FBI equations. The linear operator acts on
// the stacked coefficient vector of all degree-d monomials; the right
// side substitutes the partial solution into f, h, a and takes grade d.
inline std::pair<PolyVector, TruncatedPoly> solve_fbi_homogeneous(const SystemModel& m,
                                                                  const FbiSolution& partial, int d,
                                                                  double* cond_out = nullptr) {
    if (d < 2) throw StructuralError("regulation: homogeneous solve needs d >= 2");
    if (partial.degree < d - 1)
        throw StructuralError("regulation: partial FBI solution incomplete through degree d-1");
    const int n = m.n(), k = m.k(), cap = m.jet_cap();
    if (d > cap) throw StructuralError("regulation: degree exceeds the model jet cap");

    const LinearData ld = linearize(m);
    const auto monos = monomials_of_degree(k, d);
    const int mcount = static_cast<int>(monos.size());
    const int sz = (n + 1) * mcount;
    auto col_of = [&](int block, int q) { return block * mcount + q; };

    // linear action of the exosystem on w-monomials: q -> monomial(Aw)^q
    std::vector<TruncatedPoly> lin_a;
    lin_a.reserve(k);
    for (int j = 0; j < k; ++j) {
        TruncatedPoly row = TruncatedPoly::zero(k, cap);
        for (int l = 0; l < k; ++l)
            row = row + ld.A(j, l) * TruncatedPoly::variable(k, cap, l);
        lin_a.push_back(row);
    }
    std::vector<TruncatedPoly> shifted; // monomial composed with Aw
    shifted.reserve(mcount);
    for (const auto& mono : monos)
        shifted.push_back(
            TruncatedPoly::monomial(k, cap, mono.exponents, 1.0).compose(std::span<const TruncatedPoly>(lin_a)));

    Mat sys(sz, sz);
    auto put_poly = [&](int eq_row, const TruncatedPoly& p, int col, double scale) {
        for (int q = 0; q < mcount; ++q) {
            const double c = p.coeff(monos[q].exponents);
            if (c != 0.0) sys(eq_row * mcount + q, col) += scale * c;
        }
    };
    for (int q = 0; q < mcount; ++q) {
        const TruncatedPoly unit = TruncatedPoly::monomial(k, cap, monos[q].exponents, 1.0);
        for (int i = 0; i < n; ++i) { // unknown theta_i^[d] = unit
            const int col = col_of(i, q);
            for (int e = 0; e < n; ++e)
                if (ld.F(e, i) != 0.0) put_poly(e, unit, col, ld.F(e, i));
            put_poly(i, shifted[q], col, -1.0);
            if (ld.H(0, i) != 0.0) put_poly(n, unit, col, ld.H(0, i));
        }
        const int col = col_of(n, q); // unknown alpha^[d] = unit
        for (int e = 0; e < n; ++e)
            if (ld.G(e, 0) != 0.0) put_poly(e, unit, col, ld.G(e, 0));
        if (ld.J(0, 0) != 0.0) put_poly(n, unit, col, ld.J(0, 0));
    }

    const auto [plant_res, output_res] = fbi_series_residual(m, partial);
    std::vector<double> rhs(sz, 0.0);
    for (int e = 0; e < n; ++e) {
        const TruncatedPoly g = plant_res[e].grade(d);
        for (int q = 0; q < mcount; ++q) rhs[e * mcount + q] = -g.coeff(monos[q].exponents);
    }
    {
        const TruncatedPoly g = output_res.grade(d);
        for (int q = 0; q < mcount; ++q) rhs[n * mcount + q] = -g.coeff(monos[q].exponents);
    }

    Lu lu(sys);
    if (lu.singular())
        throw ResonanceError("regulation: graded FBI system singular at degree " +
                             std::to_string(d));
    if (cond_out) *cond_out = cond1(sys);
    const auto sol = lu.solve(rhs);

    std::vector<TruncatedPoly> theta_d(n, TruncatedPoly::zero(k, cap));
    TruncatedPoly alpha_d = TruncatedPoly::zero(k, cap);
    for (int q = 0; q < mcount; ++q) {
        for (int i = 0; i < n; ++i)
            theta_d[i] = theta_d[i] +
                         TruncatedPoly::monomial(k, cap, monos[q].exponents, sol[col_of(i, q)]);
        alpha_d = alpha_d + TruncatedPoly::monomial(k, cap, monos[q].exponents, sol[col_of(n, q)]);
    }
    return {PolyVector(std::move(theta_d)), std::move(alpha_d)};
}

// Full FBI series through `degree` (>= 1). Degree 1 is the Francis pair.
inline FbiSolution solve_fbi(const SystemModel& m, int degree) {
    if (degree < 1) throw StructuralError("regulation: FBI degree must be >= 1");
    const int n = m.n(), k = m.k(), cap = m.jet_cap();
    const LinearData ld = linearize(m);
    const FrancisSolution fr = solve_francis_linear(ld);

    FbiSolution sol;
    sol.T = fr.T;
    sol.L = fr.L;
    sol.degree = 1;
    std::vector<TruncatedPoly> theta;
    theta.reserve(n);
    for (int i = 0; i < n; ++i) {
        TruncatedPoly row = TruncatedPoly::zero(k, cap);
        for (int j = 0; j < k; ++j)
            row = row + fr.T(i, j) * TruncatedPoly::variable(k, cap, j);
        theta.push_back(row);
    }
    sol.theta = PolyVector(std::move(theta));
    sol.alpha = TruncatedPoly::zero(k, cap);
    for (int j = 0; j < k; ++j)
        sol.alpha = sol.alpha + fr.L(0, j) * TruncatedPoly::variable(k, cap, j);

    for (int d = 2; d <= degree; ++d) {
        double cond = 0.0;
        auto [theta_d, alpha_d] = solve_fbi_homogeneous(m, sol, d, &cond);
        sol.graded_conds.push_back(cond);
        for (int i = 0; i < n; ++i) sol.theta[i] = sol.theta[i] + theta_d[i];
        sol.alpha = sol.alpha + alpha_d;
        sol.degree = d;
    }
    return sol;
}

// Sampled certificate that the true FBI residual vanishes to order
// degree+1: max over directions of ||residual(eps * w_hat)|| / eps^{D+1}.
inline double fbi_residual_ratio(const SystemModel& m, const FbiSolution& sol, int samples,
                                 double eps, std::uint64_t seed = 0) {
    Rng rng(seed);
    double worst = 0.0;
    for (int s = 0; s < samples; ++s) {
        const auto dir = rng.unit_vector(m.k());
        std::vector<double> w(m.k());
        for (int j = 0; j < m.k(); ++j) w[j] = eps * dir[j];
        std::vector<double> theta_w(m.n());
        for (int i = 0; i < m.n(); ++i) theta_w[i] = sol.theta[i].eval(w);
        const double alpha_w = sol.alpha.eval(w);
        const auto w_next = m.exo_step(w);
        double res = std::fabs(m.output(theta_w, alpha_w, w));
        const auto f_val = m.step(theta_w, alpha_w, w);
        for (int i = 0; i < m.n(); ++i)
            res = std::max(res, std::fabs(f_val[i] - sol.theta[i].eval(w_next)));
        worst = std::max(worst, res / std::pow(eps, sol.degree + 1));
    }
    return worst;
}

inline double fbi_residual_order(const SystemModel& m, const FbiSolution& sol, int samples = 32,
                                 std::uint64_t seed = 0) {
    double worst = 0.0;
    for (double eps : {1e-1, 1e-2})
        worst = std::max(worst, fbi_residual_ratio(m, sol, samples, eps, seed));
    return worst;
}

} // namespace mprlab
