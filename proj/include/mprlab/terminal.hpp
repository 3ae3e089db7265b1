#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mprlab/errors.hpp"
#include "mprlab/linalg.hpp"
#include "mprlab/model.hpp"
#include "mprlab/poly.hpp"
#include "mprlab/regulation.hpp"
#include "mprlab/rng.hpp"

// Terminal cost and feedback synthesis. The quadratic level is an LQR
// problem in the transverse coordinates z = x - theta(w), v = u - alpha(w);
// higher levels solve the graded dynamic-programming equations one degree
// at a time (the discrete-time power-series method), and the assembled law
//   pi(x, w) = rho(x - theta(w), w),  kappa(x, w) = alpha(w) + beta(x - theta(w), w)
// is certified by a sampled decrease region and a DP residual order test.
//
// Variable spaces: "zvw" = (z1..zn, v, w1..wk), "zw"/"xw" = (z1..zn, w1..wk).

namespace mprlab {

struct QuadCost {
    Mat Q; // n x n
    Mat S; // n x 1
    Mat R; // 1 x 1
};

// Quadratic part of (h^(0))^2 + (h^(r))^2 in transverse coordinates:
//   |Hz|^2 + |H(F^r z + F^{r-1} G v)|^2 = z'Qz + 2z'Sv + v'Rv.
inline QuadCost transverse_quadratic_cost(const LinearData& ld, int r) {
    if (r < 1) throw StructuralError("terminal: transverse cost needs relative degree >= 1");
    if (std::fabs(ld.J(0, 0)) > 1e-12)
        throw StructuralError("terminal: direct feedthrough J != 0 contradicts r >= 1");
    Mat HFr = ld.H;
    for (int i = 0; i < r; ++i) HFr = HFr * ld.F;
    Mat HFr1G = ld.H;
    for (int i = 0; i + 1 < r; ++i) HFr1G = HFr1G * ld.F;
    HFr1G = HFr1G * ld.G; // 1 x 1
    QuadCost qc;
    qc.Q = ld.H.transpose() * ld.H + HFr.transpose() * HFr;
    qc.S = HFr.transpose() * HFr1G;
    qc.R = HFr1G.transpose() * HFr1G;
    return qc;
}

struct RiccatiSolution {
    Mat P; // n x n, symmetric PSD
    Mat K; // 1 x n
    std::vector<Cplx> closed_loop; // spectrum of F + G K
    int iterations = 0;
    double identity_residual = 0.0;
};

// Stationary discrete Riccati solution by value iteration, switching to
// policy iteration (Lyapunov solves accelerated by squaring) if plain
// iteration is slow. Problems here are at most a few states.
inline RiccatiSolution solve_dare(const LinearData& ld, const QuadCost& qc) {
    const std::size_t n = ld.F.rows();
    const Mat& F = ld.F;
    const Mat& G = ld.G;
    const Mat& Q = qc.Q;
    const Mat& S = qc.S;
    const double R = qc.R(0, 0);
    if (R <= 0.0) throw SynthesisError("terminal: transverse control weight R must be positive");

    auto gain_for = [&](const Mat& P) {
        const double rbar = R + (G.transpose() * P * G)(0, 0);
        if (rbar <= 0.0) throw SynthesisError("terminal: R + G'PG lost positivity");
        return (G.transpose() * P * F + S.transpose()) * (-1.0 / rbar);
    };
    auto policy_value_step = [&](const Mat& P, const Mat& K) {
        const Mat M = F + G * K;
        Mat Pn = Q + S * K + K.transpose() * S.transpose() + K.transpose() * K * R +
                 M.transpose() * P * M;
        // enforce symmetry against roundoff drift
        Pn = (Pn + Pn.transpose()) * 0.5;
        return Pn;
    };

    Mat P = Q;
    int iters = 0;
    bool converged = false;
    for (; iters < 300; ++iters) {
        const Mat K = gain_for(P);
        const Mat Pn = policy_value_step(P, K);
        const double delta = (Pn - P).max_abs();
        P = Pn;
        if (delta <= 1e-12) {
            converged = true;
            break;
        }
    }
    if (!converged) {
        // Hewer policy iteration: evaluate each policy exactly via the
        // doubling form of the discrete Lyapunov sum.
        for (int pi_iter = 0; pi_iter < 60 && !converged; ++pi_iter) {
            const Mat K = gain_for(P);
            const Mat M = F + G * K;
            Mat acc = Q + S * K + K.transpose() * S.transpose() + K.transpose() * K * R;
            Mat X = M;
            for (int t = 0; t < 200; ++t) {
                const Mat inc = X.transpose() * acc * X;
                acc = acc + inc;
                X = X * X;
                if (X.max_abs() < 1e-160 || inc.max_abs() < 1e-15 * std::max(1.0, acc.max_abs()))
                    break;
            }
            acc = (acc + acc.transpose()) * 0.5;
            const double delta = (acc - P).max_abs();
            P = acc;
            ++iters;
            if (delta <= 1e-12) converged = true;
        }
    }
    if (!converged)
        throw SynthesisError("terminal: Riccati iteration did not converge "
                             "(is the plant stabilizable and linearly minimum phase?)");

    RiccatiSolution sol;
    sol.P = P;
    sol.K = gain_for(P);
    sol.iterations = iters;
    const double rbar = R + (G.transpose() * P * G)(0, 0);
    const Mat identity_rhs =
        F.transpose() * P * F - sol.K.transpose() * sol.K * rbar + Q;
    sol.identity_residual = (P - identity_rhs).max_abs();
    if (sol.identity_residual > 1e-9)
        throw NumericError("terminal: Riccati identity residual " +
                           format_double(sol.identity_residual) + " exceeds 1e-9");
    sol.closed_loop = eig_small(F + G * sol.K);
    for (const auto& lambda : sol.closed_loop)
        if (std::abs(lambda) >= 1.0)
            throw SynthesisError("terminal: closed loop F + GK not strictly stable "
                                 "(stabilizable / linearly_minimum_phase flag violated)");
    (void)n;
    return sol;
}

// ---------------------------------------------------------------------------
// Al'brekht-style higher-degree corrections
// ---------------------------------------------------------------------------

namespace detail {

// embed a w-space poly into (z1..zn, w1..wk)
inline TruncatedPoly w_to_zw(const TruncatedPoly& p, int n) {
    std::vector<int> map(p.arity());
    for (int j = 0; j < p.arity(); ++j) map[j] = n + j;
    return p.embed(n + p.arity(), map);
}

// embed a w-space poly into (z1..zn, v, w1..wk)
inline TruncatedPoly w_to_zvw(const TruncatedPoly& p, int n) {
    std::vector<int> map(p.arity());
    for (int j = 0; j < p.arity(); ++j) map[j] = n + 1 + j;
    return p.embed(n + 1 + p.arity(), map);
}

inline TruncatedPoly keep_grades_up_to(const TruncatedPoly& p, int d) {
    TruncatedPoly out = TruncatedPoly::zero(p.arity(), p.degree_cap());
    for (int g = 0; g <= d; ++g) out = out + p.grade(g);
    return out;
}

} // namespace detail

// Transverse jets: fbar(z,v,w) = f(z + theta(w), v + alpha(w), w) - theta(a(w))
// and lbar(z,v,w) = l(z + theta(w), v + alpha(w), w), both in zvw space.
struct TransverseJets {
    PolyVector fbar;
    TruncatedPoly lbar;
};

inline TransverseJets transverse_jets(const SystemModel& m, const FbiSolution& fbi,
                                      const Expr& running_cost) {
    const int n = m.n(), k = m.k(), cap = m.jet_cap();
    std::vector<TruncatedPoly> inner; // (x, u, w) -> expressions in (z, v, w)
    inner.reserve(n + 1 + k);
    for (int i = 0; i < n; ++i)
        inner.push_back(TruncatedPoly::variable(n + 1 + k, cap, i) +
                        detail::w_to_zvw(fbi.theta[i], n));
    inner.push_back(TruncatedPoly::variable(n + 1 + k, cap, n) + detail::w_to_zvw(fbi.alpha, n));
    for (int j = 0; j < k; ++j) inner.push_back(TruncatedPoly::variable(n + 1 + k, cap, n + 1 + j));

    TransverseJets tj;
    std::vector<TruncatedPoly> fbar;
    fbar.reserve(n);
    const std::span<const TruncatedPoly> a_span(m.a_jets().entries);
    for (int i = 0; i < n; ++i)
        fbar.push_back(m.f_jets()[i].compose(inner) -
                       detail::w_to_zvw(fbi.theta[i].compose(a_span), n));
    tj.fbar = PolyVector(std::move(fbar));
    tj.lbar = running_cost.jet(Expr::JetLayout::xuw(m.dims()), cap).compose(inner);
    return tj;
}

struct AlbrekhtCorrection {
    TruncatedPoly rho;  // homogeneous degree d+1, zw space
    TruncatedPoly beta; // homogeneous degree d, zw space
};

// Degree-by-degree solver for the transverse DP equations. After
// construction rho = z'Pz and beta = Kz; each advance() solves the next
// graded value equation
//   rho^[d+1](z,w) - rho^[d+1]((F+GK)z, Aw) = known lower-degree terms
// and then the stationarity equation for beta^[d] (R + G'PG > 0 makes the
// latter a diagonal solve).
class AlbrekhtSolver {
public:
    AlbrekhtSolver(const SystemModel& m, const FbiSolution& fbi, const RiccatiSolution& ric,
                   const QuadCost& qc, const Expr& running_cost)
        : n_(m.n()), k_(m.k()), cap_(m.jet_cap()), tj_(transverse_jets(m, fbi, running_cost)) {
        const LinearData ld = linearize(m);
        closed_loop_ = ld.F + ld.G * ric.K;
        exo_linear_ = ld.A;
        rbar_ = qc.R(0, 0) + (ld.G.transpose() * ric.P * ld.G)(0, 0);

        // a(w) jets embedded into zw / zvw spaces for composition
        for (const auto& aj : m.a_jets().entries) {
            a_zw_.push_back(detail::w_to_zw(aj, n_));
            a_zvw_.push_back(detail::w_to_zvw(aj, n_));
        }

        rho_ = TruncatedPoly::zero(n_ + k_, cap_);
        for (int i = 0; i < n_; ++i)
            for (int j = 0; j < n_; ++j)
                rho_ = rho_ + ric.P(i, j) * (TruncatedPoly::variable(n_ + k_, cap_, i) *
                                             TruncatedPoly::variable(n_ + k_, cap_, j));
        beta_ = TruncatedPoly::zero(n_ + k_, cap_);
        for (int j = 0; j < n_; ++j)
            beta_ = beta_ + ric.K(0, j) * TruncatedPoly::variable(n_ + k_, cap_, j);
        feedback_degree_ = 1;
    }

    int feedback_degree() const { return feedback_degree_; }
    int cost_degree() const { return feedback_degree_ + 1; }
    const TruncatedPoly& rho() const { return rho_; }   // zw space
    const TruncatedPoly& beta() const { return beta_; } // zw space

    // solve level d = feedback_degree() + 1, returning (rho^[d+1], beta^[d])
    AlbrekhtCorrection advance() {
        const int d = feedback_degree_ + 1;
        if (d + 1 > cap_)
            throw StructuralError("terminal: correction degree exceeds the model jet cap");

        // closed-loop substitution v = beta(z, w) applied to the zvw jets
        std::vector<TruncatedPoly> to_zw;
        to_zw.reserve(n_ + 1 + k_);
        for (int i = 0; i < n_; ++i) to_zw.push_back(TruncatedPoly::variable(n_ + k_, cap_, i));
        to_zw.push_back(beta_);
        for (int j = 0; j < k_; ++j)
            to_zw.push_back(TruncatedPoly::variable(n_ + k_, cap_, n_ + j));

        std::vector<TruncatedPoly> next_state; // (fbar(z,beta,w), a(w)) in zw space
        next_state.reserve(n_ + k_);
        for (int i = 0; i < n_; ++i) next_state.push_back(tj_.fbar[i].compose(to_zw));
        for (int j = 0; j < k_; ++j) next_state.push_back(a_zw_[j]);

        const TruncatedPoly value_known =
            rho_.compose(std::span<const TruncatedPoly>(next_state)) + tj_.lbar.compose(to_zw);
        const TruncatedPoly rhs = value_known.grade(d + 1);

        AlbrekhtCorrection corr;
        corr.rho = solve_graded_lyapunov(rhs, d + 1);
        rho_ = rho_ + corr.rho;

        // stationarity: gradient of rho(fbar(z,v,w), a(w)) + lbar in v,
        // evaluated at v = beta_{<d}, grade d
        std::vector<TruncatedPoly> next_state_v; // zvw space
        next_state_v.reserve(n_ + k_);
        for (int i = 0; i < n_; ++i) next_state_v.push_back(tj_.fbar[i]);
        for (int j = 0; j < k_; ++j) next_state_v.push_back(a_zvw_[j]);
        const TruncatedPoly grad_v =
            (rho_.compose(std::span<const TruncatedPoly>(next_state_v)) + tj_.lbar).partial(n_);
        const TruncatedPoly grad_at_beta = grad_v.compose(to_zw).grade(d);

        corr.beta = grad_at_beta * (-1.0 / (2.0 * rbar_));
        // the optimal feedback vanishes on the manifold; pure-w residue can
        // only come from FBI truncation error
        double pure_w = 0.0;
        TruncatedPoly cleaned = TruncatedPoly::zero(n_ + k_, cap_);
        for (const auto& [mono, c] : corr.beta.terms()) {
            bool has_z = false;
            for (int i = 0; i < n_; ++i)
                if (mono.exponents[i] > 0) has_z = true;
            if (has_z)
                cleaned = cleaned + TruncatedPoly::monomial(n_ + k_, cap_, mono.exponents, c);
            else
                pure_w = std::max(pure_w, std::fabs(c));
        }
        if (pure_w > 1e-9)
            throw SynthesisError("terminal: feedback correction has pure-w terms of size " +
                                 format_double(pure_w) + "; FBI series degree is insufficient");
        corr.beta = cleaned;
        beta_ = beta_ + corr.beta;
        feedback_degree_ = d;
        return corr;
    }

    void advance_to_cost_degree(int cost_degree) {
        while (this->cost_degree() < cost_degree) advance();
    }

private:
    // solve p(z,w) - p(Mz, Aw) = rhs for homogeneous degree-deg p; the
    // substitution preserves (z-degree, w-degree) so the system splits
    // into one block per bidegree
    TruncatedPoly solve_graded_lyapunov(const TruncatedPoly& rhs, int deg) const {
        TruncatedPoly result = TruncatedPoly::zero(n_ + k_, cap_);

        // pure-w block: the substitution operator has modulus-one spectrum
        // there, so any significant right side means genuine resonance
        double pure_w = 0.0;
        for (const auto& [mono, c] : rhs.terms()) {
            bool has_z = false;
            for (int i = 0; i < n_; ++i)
                if (mono.exponents[i] > 0) has_z = true;
            if (!has_z) pure_w = std::max(pure_w, std::fabs(c));
        }
        if (pure_w > 1e-9)
            throw ResonanceError("terminal: graded value equation resonant on pure-w terms "
                                 "(size " + format_double(pure_w) + ") at degree " +
                                 std::to_string(deg));

        // linear substitution polys for (Mz, Aw)
        std::vector<TruncatedPoly> lin;
        lin.reserve(n_ + k_);
        for (int i = 0; i < n_; ++i) {
            TruncatedPoly row = TruncatedPoly::zero(n_ + k_, cap_);
            for (int j = 0; j < n_; ++j)
                row = row + closed_loop_(i, j) * TruncatedPoly::variable(n_ + k_, cap_, j);
            lin.push_back(row);
        }
        for (int i = 0; i < k_; ++i) {
            TruncatedPoly row = TruncatedPoly::zero(n_ + k_, cap_);
            for (int j = 0; j < k_; ++j)
                row = row + exo_linear_(i, j) * TruncatedPoly::variable(n_ + k_, cap_, n_ + j);
            lin.push_back(row);
        }

        for (int zdeg = 1; zdeg <= deg; ++zdeg) {
            const int wdeg = deg - zdeg;
            const auto zmonos = monomials_of_degree(n_, zdeg);
            const auto wmonos = monomials_of_degree(k_, wdeg);
            const int bcount = static_cast<int>(zmonos.size() * wmonos.size());
            std::vector<Monomial> basis;
            basis.reserve(bcount);
            for (const auto& zm : zmonos)
                for (const auto& wm : wmonos) {
                    Monomial mono{std::vector<int>(n_ + k_, 0)};
                    for (int i = 0; i < n_; ++i) mono.exponents[i] = zm.exponents[i];
                    for (int j = 0; j < k_; ++j) mono.exponents[n_ + j] = wm.exponents[j];
                    basis.push_back(std::move(mono));
                }

            Mat sys(bcount, bcount);
            for (int q = 0; q < bcount; ++q) {
                const TruncatedPoly unit =
                    TruncatedPoly::monomial(n_ + k_, cap_, basis[q].exponents, 1.0);
                const TruncatedPoly shifted = unit.compose(std::span<const TruncatedPoly>(lin));
                for (int p = 0; p < bcount; ++p) {
                    double v = (p == q ? 1.0 : 0.0) - shifted.coeff(basis[p].exponents);
                    sys(p, q) = v;
                }
            }
            std::vector<double> b(bcount);
            for (int p = 0; p < bcount; ++p) b[p] = rhs.coeff(basis[p].exponents);
            Lu lu(sys);
            if (lu.singular())
                throw ResonanceError("terminal: graded value equation singular at degree " +
                                     std::to_string(deg));
            const auto sol = lu.solve(b);
            for (int q = 0; q < bcount; ++q)
                result = result + TruncatedPoly::monomial(n_ + k_, cap_, basis[q].exponents, sol[q]);
        }
        return result;
    }

    int n_, k_, cap_;
    TransverseJets tj_;
    Mat closed_loop_; // F + G K
    Mat exo_linear_;  // A
    double rbar_ = 0.0;
    std::vector<TruncatedPoly> a_zw_, a_zvw_;
    TruncatedPoly rho_, beta_;
    int feedback_degree_ = 1;
};

// ---------------------------------------------------------------------------
// Assembled law in plant coordinates
// ---------------------------------------------------------------------------

struct TerminalLaw {
    TruncatedPoly pi;    // (x, w) space, degree <= cost_degree
    TruncatedPoly kappa; // (x, w) space, degree <= cost_degree - 1
    int cost_degree = 2;
    std::optional<double> level; // certified Lyapunov level c*
    std::vector<Cplx> closed_loop;

    double pi_value(const std::vector<double>& x, const std::vector<double>& w) const {
        std::vector<double> xw(x);
        xw.insert(xw.end(), w.begin(), w.end());
        return pi.eval(xw);
    }

    double feedback(const std::vector<double>& x, const std::vector<double>& w) const {
        std::vector<double> xw(x);
        xw.insert(xw.end(), w.begin(), w.end());
        return kappa.eval(xw);
    }

    std::string to_string(int n, int k) const {
        std::vector<std::string> names;
        for (int i = 0; i < n; ++i) names.push_back("x" + std::to_string(i + 1));
        for (int j = 0; j < k; ++j) names.push_back("w" + std::to_string(j + 1));
        std::string out;
        out += "cost_degree = " + std::to_string(cost_degree) + "\n";
        out += "level = " + (level ? format_double(*level) : std::string("unset")) + "\n";
        std::string spec;
        for (std::size_t i = 0; i < closed_loop.size(); ++i) {
            if (i) spec += "; ";
            spec += format_double(closed_loop[i].real()) +
                    (closed_loop[i].imag() < 0 ? " - " : " + ") +
                    format_double(std::fabs(closed_loop[i].imag())) + "i";
        }
        out += "closed_loop_spectrum = " + spec + "\n";
        out += "[pi]\n" + pi.to_debug_string(names);
        out += "[kappa]\n" + kappa.to_debug_string(names);
        return out;
    }
};

// Substitute z = x - theta(w) (and shift by alpha for the feedback) to
// express the transverse solution in plant coordinates, truncated at the
// cost degree.
inline TerminalLaw assemble_terminal(const SystemModel& m, const FbiSolution& fbi,
                                     const RiccatiSolution& ric, const AlbrekhtSolver& solver,
                                     int cost_degree) {
    if (solver.cost_degree() < cost_degree)
        throw StructuralError("terminal: solver has not reached the requested cost degree");
    const int n = m.n(), k = m.k(), cap = m.jet_cap();

    std::vector<TruncatedPoly> inner; // (z, w) -> (x - theta(w), w)
    inner.reserve(n + k);
    for (int i = 0; i < n; ++i)
        inner.push_back(TruncatedPoly::variable(n + k, cap, i) - detail::w_to_zw(fbi.theta[i], n));
    for (int j = 0; j < k; ++j) inner.push_back(TruncatedPoly::variable(n + k, cap, n + j));
    const std::span<const TruncatedPoly> inner_span(inner);

    TerminalLaw law;
    law.cost_degree = cost_degree;
    law.closed_loop = ric.closed_loop;
    law.pi = detail::keep_grades_up_to(
        detail::keep_grades_up_to(solver.rho(), cost_degree).compose(inner_span), cost_degree);
    law.kappa = detail::keep_grades_up_to(
        detail::w_to_zw(fbi.alpha, n) +
            detail::keep_grades_up_to(solver.beta(), cost_degree - 1).compose(inner_span),
        cost_degree - 1);
    return law;
}

// ---------------------------------------------------------------------------
// Certification
// ---------------------------------------------------------------------------

enum class LyapunovMode { feedback, clf };

struct LyapunovOptions {
    int samples = 2000;
    double x_box = 3.0;    // sampling box for x
    int grid_size = 24;
    double c_min = 1e-3;
    double clf_span = 4.0; // u search interval half-width around kappa
    int clf_iters = 60;
    std::uint64_t seed = 0;
};

// Largest grid level c such that the (control) Lyapunov decrease holds at
// every drawn sample with pi(x, w) <= c inside the sampling box. Returns 0
// with no certified region when even the smallest level fails.
inline double estimate_lyapunov_region(const SystemModel& m, const TerminalLaw& law,
                                       LyapunovMode mode, double w_bound,
                                       const LyapunovOptions& opt = {}) {
    Rng rng(opt.seed);
    struct Sample {
        double pi;
        bool decrease_ok;
    };
    std::vector<Sample> samples;
    samples.reserve(opt.samples);
    double c_max = 0.0;
    for (int s = 0; s < opt.samples; ++s) {
        const auto x = rng.box_point(m.n(), opt.x_box);
        const auto w = rng.box_point(m.k(), w_bound);
        const double pi_here = law.pi_value(x, w);
        const auto w_next = m.exo_step(w);
        double pi_next;
        if (mode == LyapunovMode::feedback) {
            const double u = law.feedback(x, w);
            pi_next = law.pi_value(m.step(x, u, w), w_next);
        } else {
            // golden-section minimization of u -> pi(f(x,u,w), a(w))
            const double kappa_u = law.feedback(x, w);
            double lo = kappa_u - opt.clf_span, hi = kappa_u + opt.clf_span;
            const double gr = 0.6180339887498949;
            double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
            auto value = [&](double u) { return law.pi_value(m.step(x, u, w), w_next); };
            double f1 = value(x1), f2 = value(x2);
            for (int it = 0; it < opt.clf_iters; ++it) {
                if (f1 <= f2) {
                    hi = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = hi - gr * (hi - lo);
                    f1 = value(x1);
                } else {
                    lo = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = lo + gr * (hi - lo);
                    f2 = value(x2);
                }
            }
            pi_next = std::min(f1, f2);
        }
        const bool ok = pi_next <= pi_here + 1e-12 * (1.0 + std::fabs(pi_here));
        samples.push_back({pi_here, ok});
        c_max = std::max(c_max, pi_here);
    }
    if (c_max <= opt.c_min) c_max = opt.c_min * 2.0;

    double best = 0.0;
    for (int g = opt.grid_size - 1; g >= 0; --g) {
        const double c = opt.c_min * std::pow(c_max / opt.c_min,
                                              static_cast<double>(g) / (opt.grid_size - 1));
        bool all_ok = true;
        for (const auto& s : samples)
            if (s.pi <= c && !s.decrease_ok) {
                all_ok = false;
                break;
            }
        if (all_ok) {
            best = c;
            break;
        }
    }
    return best;
}

// Max |e| over sampled rays (x, w) = (theta(eps*w_hat) + eps*z_hat, eps*w_hat)
// of the DP defect e = pi(f(x,kappa,w), a(w)) + l(x,kappa,w) - pi(x,w).
inline double dp_residual_raw(const SystemModel& m, const TerminalLaw& law, const Expr& running_cost,
                              const PolyVector& theta, double eps, int samples = 32,
                              std::uint64_t seed = 0) {
    Rng rng(seed);
    double worst = 0.0;
    for (int s = 0; s < samples; ++s) {
        const auto dir = rng.unit_vector(m.n() + m.k());
        std::vector<double> w(m.k());
        for (int j = 0; j < m.k(); ++j) w[j] = eps * dir[m.n() + j];
        std::vector<double> x(m.n());
        for (int i = 0; i < m.n(); ++i) x[i] = theta[i].eval(w) + eps * dir[i];
        const double u = law.feedback(x, w);
        const auto x_next = m.step(x, u, w);
        const auto w_next = m.exo_step(w);
        const double e = law.pi_value(x_next, w_next) + running_cost.eval(x, u, w) -
                         law.pi_value(x, w);
        worst = std::max(worst, std::fabs(e));
    }
    return worst;
}

inline double dp_residual_ratio(const SystemModel& m, const TerminalLaw& law,
                                const Expr& running_cost, const PolyVector& theta, double eps,
                                int samples = 32, std::uint64_t seed = 0) {
    return dp_residual_raw(m, law, running_cost, theta, eps, samples, seed) /
           std::pow(eps, law.cost_degree + 1);
}

// Bounded value over the standard epsilon ladder certifies that the DP
// defect vanishes to order cost_degree + 1.
inline double dp_residual_order(const SystemModel& m, const TerminalLaw& law,
                                const Expr& running_cost, const PolyVector& theta,
                                int samples = 32, std::uint64_t seed = 0) {
    double worst = 0.0;
    for (double eps : {1e-1, 3e-2, 1e-2})
        worst = std::max(worst, dp_residual_ratio(m, law, running_cost, theta, eps, samples, seed));
    return worst;
}

} // namespace mprlab
