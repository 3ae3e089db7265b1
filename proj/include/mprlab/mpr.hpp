#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "mprlab/errors.hpp"
#include "mprlab/model.hpp"
#include "mprlab/sim.hpp"
#include "mprlab/terminal.hpp"

// The on-line half of the method: a single-shooting finite-horizon
// optimizer (projected limited-memory quasi-Newton with adjoint
// gradients), shift-and-append warm starting, and the receding-horizon
// closed loop.

namespace mprlab {

// Running cost with its symbolic derivatives cached for the adjoint pass,
// plus compiled tapes: the squared output-chain expressions and their
// derivatives share most of their subtrees, so grouped evaluation is an
// order of magnitude cheaper than walking each tree.
struct RunningCost {
    Expr l;
    std::vector<Expr> dl_dx;
    Expr dl_du;
    CompiledExprs value;         // outputs [l]
    CompiledExprs with_gradient; // outputs [l, dl/dx (n), dl/du]

    static RunningCost make(const SystemModel& m, const OutputChain& chain) {
        RunningCost rc;
        rc.l = build_running_cost(chain);
        for (int i = 0; i < m.n(); ++i) rc.dl_dx.push_back(rc.l.derivative(VarClass::x, i));
        rc.dl_du = rc.l.derivative(VarClass::u, 0);
        rc.value = CompiledExprs(std::span<const Expr>(&rc.l, 1));
        std::vector<Expr> group{rc.l};
        group.insert(group.end(), rc.dl_dx.begin(), rc.dl_dx.end());
        group.push_back(rc.dl_du);
        rc.with_gradient = CompiledExprs(std::span<const Expr>(group));
        return rc;
    }
};

struct MprConfig {
    int horizon = 4;
    TerminalLaw terminal;
    std::optional<std::pair<double, double>> u_box;
    std::optional<double> terminal_level;    // enforce pi(x(t+T), w(t+T)) <= c*
    double grad_tol = 1e-8;                  // on the projected gradient, sup norm
    int max_iterations = 600;                // cold starts at far states need the headroom
    double penalty_init = 100.0;             // terminal-set penalty schedule
    double penalty_factor = 10.0;
    int penalty_rounds = 3;
    int lbfgs_memory = 10;
};

struct HorizonSolution {
    std::vector<double> controls;              // u*(t) ... u*(t+T-1)
    std::vector<std::vector<double>> states;   // x(t) ... x(t+T), derived from the controls
    double objective = 0.0;
    int iterations = 0;
    double grad_norm = 0.0;
    bool terminal_ok = true;                   // terminal-level constraint satisfied
    double terminal_value = 0.0;               // pi at the horizon end
    std::vector<double> objective_history;     // accepted line-search values
};

namespace detail {

class ShootingProblem {
public:
    ShootingProblem(const SystemModel& m, const RunningCost& rc, const MprConfig& cfg,
                    std::vector<double> x_t, std::vector<std::vector<double>> w_traj)
        : m_(m), rc_(rc), cfg_(cfg), x_t_(std::move(x_t)), w_(std::move(w_traj)) {
        for (int i = 0; i < m_.n() + m_.k(); ++i) dpi_.push_back(cfg_.terminal.pi.partial(i));
    }

    // The series terminal cost is only meaningful where it is nonnegative;
    // its negative pockets (a truncation artifact) would otherwise reward
    // parking the endpoint in them. Hinge at zero with a narrow C1 blend
    // so gradient methods see a smooth landscape.
    static constexpr double kHingeWidth = 1e-6;

    static double clamped_terminal(double pi) {
        if (pi <= 0.0) return 0.0;
        if (pi >= kHingeWidth) return pi - 0.5 * kHingeWidth;
        return 0.5 * pi * pi / kHingeWidth;
    }

    static double clamped_terminal_slope(double pi) {
        if (pi <= 0.0) return 0.0;
        if (pi >= kHingeWidth) return 1.0;
        return pi / kHingeWidth;
    }

    int horizon() const { return cfg_.horizon; }

    double clamp(double u) const {
        if (!cfg_.u_box) return u;
        return std::min(std::max(u, cfg_.u_box->first), cfg_.u_box->second);
    }

    void clamp_all(std::vector<double>& u) const {
        for (auto& v : u) v = clamp(v);
    }

    // rollout; returns +inf on any non-finite state or cost
    double objective(const std::vector<double>& u, std::vector<std::vector<double>>* states_out,
                     double* terminal_value_out = nullptr) const {
        const int T = cfg_.horizon;
        const int n = m_.n();
        std::vector<std::vector<double>> xs(T + 1);
        xs[0] = x_t_;
        double cost = 0.0;
        double stage = 0.0;
        for (int s = 0; s < T; ++s) {
            rc_.value.eval(xs[s], u[s], w_[s], std::span<double>(&stage, 1));
            cost += stage;
            xs[s + 1].resize(n);
            m_.compiled_step().eval(xs[s], u[s], w_[s], xs[s + 1]);
            for (double v : xs[s + 1])
                if (!std::isfinite(v)) return std::numeric_limits<double>::infinity();
        }
        const double pi_end = cfg_.terminal.pi_value(xs[T], w_[T]);
        cost += clamped_terminal(pi_end);
        if (cfg_.terminal_level) {
            const double excess = std::max(0.0, pi_end - *cfg_.terminal_level);
            cost += penalty_ * excess * excess;
        }
        if (!std::isfinite(cost)) return std::numeric_limits<double>::infinity();
        if (states_out) *states_out = std::move(xs);
        if (terminal_value_out) *terminal_value_out = pi_end;
        return cost;
    }

    // one backward pass through the rollout
    std::vector<double> gradient(const std::vector<double>& u,
                                 const std::vector<std::vector<double>>& xs) const {
        const int T = cfg_.horizon;
        const int n = m_.n();
        std::vector<double> xw(xs[T]);
        xw.insert(xw.end(), w_[T].begin(), w_[T].end());
        const double pi_end = cfg_.terminal.pi.eval(xw);
        double scale = clamped_terminal_slope(pi_end);
        if (cfg_.terminal_level) {
            const double excess = std::max(0.0, pi_end - *cfg_.terminal_level);
            scale += 2.0 * penalty_ * excess;
        }
        std::vector<double> lambda(n);
        for (int i = 0; i < n; ++i) lambda[i] = scale * dpi_[i].eval(xw);

        // per-stage buffers: [l, dl/dx (n), dl/du] and [f, df/dx, df/du]
        std::vector<double> lbuf(1 + n + 1);
        std::vector<double> dbuf(n + n * n + n);
        std::vector<double> grad(T);
        for (int s = T; s-- > 0;) {
            rc_.with_gradient.eval(xs[s], u[s], w_[s], lbuf);
            m_.compiled_step_jacobians().eval(xs[s], u[s], w_[s], dbuf);
            grad[s] = lbuf[1 + n];
            for (int i = 0; i < n; ++i) grad[s] += lambda[i] * dbuf[n + n * n + i];
            if (s == 0) break;
            std::vector<double> prev(n, 0.0);
            for (int j = 0; j < n; ++j) {
                prev[j] = lbuf[1 + j];
                for (int i = 0; i < n; ++i) prev[j] += lambda[i] * dbuf[n + i * n + j];
            }
            lambda = std::move(prev);
        }
        return grad;
    }

    // terminal-feedback rollout used as the default initial guess
    std::vector<double> terminal_feedback_guess() const {
        const int T = cfg_.horizon;
        std::vector<double> u(T, 0.0);
        std::vector<double> x = x_t_;
        for (int s = 0; s < T; ++s) {
            u[s] = clamp(cfg_.terminal.feedback(x, w_[s]));
            if (!std::isfinite(u[s])) u[s] = 0.0;
            x = m_.step(x, u[s], w_[s]);
        }
        return u;
    }

    void set_penalty(double p) { penalty_ = p; }
    double penalty() const { return penalty_; }

private:
    const SystemModel& m_;
    const RunningCost& rc_;
    const MprConfig& cfg_;
    std::vector<double> x_t_;
    std::vector<std::vector<double>> w_;
    std::vector<TruncatedPoly> dpi_;
    double penalty_ = 0.0;
};

// Exact-curvature step on the free variables: central finite-difference
// Hessian of the adjoint gradient, Levenberg-damped solve, best decrease
// over the damping ladder. The squared output-chain cost composes
// high-degree terms, so shooting objectives develop razor-thin curved
// valleys (directional curvature beyond 1e7) in which secant steps crawl;
// with at most ~20 decision variables the exact solve is cheap.
inline bool newton_step(ShootingProblem& prob, std::vector<double>& u, double& jval,
                        std::vector<std::vector<double>>& xs, std::vector<double>& grad,
                        const std::vector<bool>& active) {
    const int T = static_cast<int>(u.size());
    std::vector<int> free_idx;
    for (int i = 0; i < T; ++i)
        if (!active[i]) free_idx.push_back(i);
    const int nf = static_cast<int>(free_idx.size());
    if (nf == 0) return false;

    Mat hess(nf, nf);
    for (int c = 0; c < nf; ++c) {
        const int i = free_idx[c];
        const double h = 1e-6 * (1.0 + std::fabs(u[i]));
        auto up = u, um = u;
        up[i] += h;
        um[i] -= h;
        std::vector<std::vector<double>> xs_p, xs_m;
        if (!std::isfinite(prob.objective(up, &xs_p)) || !std::isfinite(prob.objective(um, &xs_m)))
            return false;
        const auto gp = prob.gradient(up, xs_p);
        const auto gm = prob.gradient(um, xs_m);
        for (int r = 0; r < nf; ++r)
            hess(r, c) = (gp[free_idx[r]] - gm[free_idx[r]]) / (2.0 * h);
    }
    // symmetrize; FD noise breaks exact symmetry
    for (int r = 0; r < nf; ++r)
        for (int c = r + 1; c < nf; ++c) {
            const double v = 0.5 * (hess(r, c) + hess(c, r));
            hess(r, c) = v;
            hess(c, r) = v;
        }
    double scale = hess.max_abs();
    if (!(scale > 0.0) || !std::isfinite(scale)) scale = 1.0;

    double best_j = jval;
    std::vector<double> best_u;
    for (double mu = 1e-10 * scale; mu <= 1e6 * scale; mu *= 10.0) {
        Mat damped = hess;
        for (int r = 0; r < nf; ++r) damped(r, r) += mu;
        Lu lu(damped);
        if (lu.singular()) continue;
        std::vector<double> rhs(nf);
        for (int r = 0; r < nf; ++r) rhs[r] = -grad[free_idx[r]];
        const auto dn = lu.solve(rhs);
        auto u_new = u;
        for (int r = 0; r < nf; ++r) u_new[free_idx[r]] = prob.clamp(u[free_idx[r]] + dn[r]);
        const double j_new = prob.objective(u_new, nullptr);
        if (std::isfinite(j_new) && j_new < best_j) {
            best_j = j_new;
            best_u = std::move(u_new);
        }
    }
    if (best_u.empty() || best_j >= jval - 1e-15 * std::max(1.0, std::fabs(jval))) return false;
    u = std::move(best_u);
    jval = prob.objective(u, &xs);
    grad = prob.gradient(u, xs);
    return true;
}

struct FirstOrderState {
    std::vector<double> u;
    std::vector<std::vector<double>> xs;
    std::vector<double> grad;
    double jval = 0.0;
    double pg = 0.0;
};

inline std::vector<bool> bound_active_set(const ShootingProblem& prob,
                                          const std::vector<double>& u,
                                          const std::vector<double>& g) {
    const int T = static_cast<int>(u.size());
    std::vector<bool> active(T, false);
    for (int i = 0; i < T; ++i) {
        const double eps = 1e-12 * (1.0 + std::fabs(u[i]));
        if (std::fabs(u[i] - prob.clamp(u[i] - eps)) < eps * 0.5 && g[i] > 0.0)
            active[i] = true; // pinned at the lower bound
        if (std::fabs(u[i] - prob.clamp(u[i] + eps)) < eps * 0.5 && g[i] < 0.0)
            active[i] = true; // pinned at the upper bound
    }
    return active;
}

inline double projected_gradient_norm(const ShootingProblem& prob, const std::vector<double>& u,
                                      const std::vector<double>& g) {
    double norm = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i)
        norm = std::max(norm, std::fabs(u[i] - prob.clamp(u[i] - g[i])));
    return norm;
}

// One pass of projected L-BFGS with Armijo backtracking. Returns the
// number of iterations spent; *progress reports whether the pass moved
// the objective by more than roundoff.
inline int lbfgs_pass(ShootingProblem& prob, FirstOrderState& st, int budget, double grad_tol,
                      int memory, std::vector<double>& objective_history, bool* progress) {
    const int T = static_cast<int>(st.u.size());
    std::deque<std::pair<std::vector<double>, std::vector<double>>> hist; // (s, y)
    *progress = false;

    int iter = 0;
    int stalls = 0;
    double step_start = 1.0;
    std::vector<bool> prev_active = bound_active_set(prob, st.u, st.grad);
    for (; iter < budget && st.pg > grad_tol; ++iter) {
        const std::vector<bool> active = bound_active_set(prob, st.u, st.grad);
        if (active != prev_active) hist.clear();
        prev_active = active;

        // two-loop recursion on the free components
        std::vector<double> d(st.grad);
        for (int i = 0; i < T; ++i)
            if (active[i]) d[i] = 0.0;
        std::vector<double> alpha_mem(hist.size());
        for (int h = static_cast<int>(hist.size()) - 1; h >= 0; --h) {
            const auto& [sh, yh] = hist[h];
            double sy = 0.0, sd = 0.0;
            for (int i = 0; i < T; ++i) sy += sh[i] * yh[i];
            for (int i = 0; i < T; ++i) sd += sh[i] * d[i];
            alpha_mem[h] = sd / sy;
            for (int i = 0; i < T; ++i) d[i] -= alpha_mem[h] * yh[i];
        }
        if (!hist.empty()) {
            const auto& [sh, yh] = hist.back();
            double sy = 0.0, yy = 0.0;
            for (int i = 0; i < T; ++i) sy += sh[i] * yh[i];
            for (int i = 0; i < T; ++i) yy += yh[i] * yh[i];
            const double gamma = sy / yy;
            for (auto& v : d) v *= gamma;
        }
        for (int h = 0; h < static_cast<int>(hist.size()); ++h) {
            const auto& [sh, yh] = hist[h];
            double sy = 0.0, yd = 0.0;
            for (int i = 0; i < T; ++i) sy += sh[i] * yh[i];
            for (int i = 0; i < T; ++i) yd += yh[i] * d[i];
            const double beta = yd / sy;
            for (int i = 0; i < T; ++i) d[i] += (alpha_mem[h] - beta) * sh[i];
        }
        for (int i = 0; i < T; ++i) d[i] = active[i] ? -st.grad[i] : -d[i];
        double descent = 0.0;
        for (int i = 0; i < T; ++i) descent += d[i] * st.grad[i];
        bool finite_dir = true;
        for (double v : d)
            if (!std::isfinite(v)) finite_dir = false;
        if (!finite_dir || descent >= 0.0) {
            for (int i = 0; i < T; ++i) d[i] = -st.grad[i];
        }

        // Armijo backtracking on the projected step, starting from twice
        // the previously accepted step
        const double c1 = 1e-4;
        double step = std::min(1.0, 2.0 * step_start);
        std::vector<double> u_new(T);
        std::vector<std::vector<double>> xs_new;
        double j_new = 0.0;
        bool accepted = false;
        for (int ls = 0; ls < 80; ++ls) {
            for (int i = 0; i < T; ++i) u_new[i] = prob.clamp(st.u[i] + step * d[i]);
            double dir_deriv = 0.0;
            for (int i = 0; i < T; ++i) dir_deriv += st.grad[i] * (u_new[i] - st.u[i]);
            j_new = prob.objective(u_new, &xs_new);
            if (std::isfinite(j_new) && dir_deriv <= 0.0 && j_new <= st.jval + c1 * dir_deriv) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;
        step_start = step;

        const bool tiny = st.jval - j_new <= 1e-14 * std::max(1.0, std::fabs(st.jval));
        if (!tiny) *progress = true;
        std::vector<double> grad_new = prob.gradient(u_new, xs_new);
        std::vector<double> s_vec(T), y_vec(T);
        double sy = 0.0, ss = 0.0, yy = 0.0;
        for (int i = 0; i < T; ++i) {
            s_vec[i] = u_new[i] - st.u[i];
            y_vec[i] = grad_new[i] - st.grad[i];
            sy += s_vec[i] * y_vec[i];
            ss += s_vec[i] * s_vec[i];
            yy += y_vec[i] * y_vec[i];
        }
        if (sy > 1e-12 * std::sqrt(ss * yy)) {
            hist.emplace_back(std::move(s_vec), std::move(y_vec));
            while (static_cast<int>(hist.size()) > memory) hist.pop_front();
        }
        st.u = std::move(u_new);
        st.xs = std::move(xs_new);
        st.jval = j_new;
        st.grad = std::move(grad_new);
        st.pg = projected_gradient_norm(prob, st.u, st.grad);
        objective_history.push_back(st.jval);
        if (tiny) {
            if (++stalls >= 2) {
                ++iter;
                break;
            }
        } else {
            stalls = 0;
        }
    }
    return iter;
}

// Alternate first-order passes with exact-curvature steps until the
// projected gradient meets the tolerance, nothing makes progress, or the
// iteration budget runs out.
inline HorizonSolution minimize(ShootingProblem& prob, std::vector<double> warm_guess,
                                bool have_warm, int max_iters, double grad_tol, int memory) {
    const int T = static_cast<int>(warm_guess.size());

    // candidate starts: the warm sequence when given, plus the
    // terminal-feedback rollout and the zero sequence; take the best
    // finite one
    std::vector<std::vector<double>> candidates;
    if (have_warm) candidates.push_back(std::move(warm_guess));
    candidates.push_back(prob.terminal_feedback_guess());
    candidates.push_back(std::vector<double>(T, 0.0));

    FirstOrderState st;
    st.jval = std::numeric_limits<double>::infinity();
    for (auto& cand : candidates) {
        prob.clamp_all(cand);
        std::vector<std::vector<double>> cand_xs;
        const double j = prob.objective(cand, &cand_xs);
        if (j < st.jval) {
            st.jval = j;
            st.u = std::move(cand);
            st.xs = std::move(cand_xs);
        }
    }
    if (!std::isfinite(st.jval))
        throw DivergedRollout("mpr: shooting rollout non-finite from every initial guess");
    st.grad = prob.gradient(st.u, st.xs);
    st.pg = projected_gradient_norm(prob, st.u, st.grad);

    HorizonSolution sol;
    sol.objective_history.push_back(st.jval);

    const bool trace = std::getenv("MPRLAB_TRACE") != nullptr;
    int iter = 0;
    while (iter < max_iters && st.pg > grad_tol) {
        bool moved = false;
        iter += lbfgs_pass(prob, st, std::min(40, max_iters - iter), grad_tol, memory,
                           sol.objective_history, &moved);
        if (trace)
            std::fprintf(stderr, "  [lbfgs] iter=%d J=%.12g pg=%.4g moved=%d\n", iter, st.jval,
                         st.pg, moved ? 1 : 0);
        if (st.pg <= grad_tol || iter >= max_iters) break;
        // exact-curvature phase: iterate to its own stall; each step
        // refreshes the Hessian, which acts as a small trust region
        bool newton_moved = false;
        while (iter < max_iters && st.pg > grad_tol) {
            const auto active = bound_active_set(prob, st.u, st.grad);
            if (!newton_step(prob, st.u, st.jval, st.xs, st.grad, active)) break;
            newton_moved = true;
            st.pg = projected_gradient_norm(prob, st.u, st.grad);
            sol.objective_history.push_back(st.jval);
            ++iter;
        }
        if (trace)
            std::fprintf(stderr, "  [newton] iter=%d J=%.12g pg=%.4g moved=%d\n", iter, st.jval,
                         st.pg, newton_moved ? 1 : 0);
        if (!moved && !newton_moved) break; // stationary to working precision
    }

    sol.controls = st.u;
    sol.iterations = iter;
    sol.grad_norm = st.pg;
    sol.objective = prob.objective(st.u, &sol.states, &sol.terminal_value);
    return sol;
}

} // namespace detail

// Shooting objective and its adjoint gradient for a fixed (x_t, w_t);
// exposed so oracles can probe the same rollout the optimizer sees.
inline double shooting_objective(const SystemModel& m, const RunningCost& rc, const MprConfig& cfg,
                                 const std::vector<double>& x_t, const std::vector<double>& w_t,
                                 const std::vector<double>& u) {
    std::vector<std::vector<double>> w_traj{w_t};
    for (int s = 0; s < cfg.horizon; ++s) w_traj.push_back(m.exo_step(w_traj.back()));
    detail::ShootingProblem prob(m, rc, cfg, x_t, std::move(w_traj));
    if (cfg.terminal_level) prob.set_penalty(cfg.penalty_init);
    return prob.objective(u, nullptr);
}

inline std::vector<double> shooting_gradient(const SystemModel& m, const RunningCost& rc,
                                             const MprConfig& cfg, const std::vector<double>& x_t,
                                             const std::vector<double>& w_t,
                                             const std::vector<double>& u) {
    std::vector<std::vector<double>> w_traj{w_t};
    for (int s = 0; s < cfg.horizon; ++s) w_traj.push_back(m.exo_step(w_traj.back()));
    detail::ShootingProblem prob(m, rc, cfg, x_t, std::move(w_traj));
    if (cfg.terminal_level) prob.set_penalty(cfg.penalty_init);
    std::vector<std::vector<double>> xs;
    const double j = prob.objective(u, &xs);
    if (!std::isfinite(j)) throw DivergedRollout("mpr: non-finite rollout in gradient probe");
    return prob.gradient(u, xs);
}

// Local solution of the T-step problem
//   min over u(t..t+T-1) of sum l(x(s), u(s), w(s)) + pi(x(t+T), w(t+T))
// by single shooting: the states are derived, gradients come from one
// backward adjoint pass, box bounds are handled by projection, and the
// terminal-set level (when configured) by an escalating quadratic penalty.
inline HorizonSolution solve_finite_horizon(
    const SystemModel& m, const RunningCost& rc, const MprConfig& cfg,
    const std::vector<double>& x_t, const std::vector<double>& w_t,
    const std::optional<std::vector<double>>& warm = std::nullopt,
    const std::vector<std::vector<double>>* w_seq = nullptr) {
    if (cfg.horizon < 1) throw StructuralError("mpr: horizon must be >= 1");
    if (cfg.u_box && !(cfg.u_box->first < cfg.u_box->second))
        throw StructuralError("mpr: u_box must satisfy u_min < u_max");
    if (warm && static_cast<int>(warm->size()) != cfg.horizon)
        throw StructuralError("mpr: warm start length != horizon");

    // exosystem trajectory over the horizon: supplied, or iterated from a
    std::vector<std::vector<double>> w_traj;
    if (w_seq) {
        if (static_cast<int>(w_seq->size()) < cfg.horizon + 1)
            throw StructuralError("mpr: provided w sequence shorter than horizon + 1");
        w_traj.assign(w_seq->begin(), w_seq->begin() + cfg.horizon + 1);
    } else {
        w_traj.reserve(cfg.horizon + 1);
        w_traj.push_back(w_t);
        for (int s = 0; s < cfg.horizon; ++s) w_traj.push_back(m.exo_step(w_traj.back()));
    }

    detail::ShootingProblem prob(m, rc, cfg, x_t, std::move(w_traj));

    if (!cfg.terminal_level) {
        prob.set_penalty(0.0);
        return detail::minimize(prob, warm.value_or(std::vector<double>(cfg.horizon, 0.0)),
                                warm.has_value(), cfg.max_iterations, cfg.grad_tol,
                                cfg.lbfgs_memory);
    }

    prob.set_penalty(cfg.penalty_init);
    HorizonSolution sol;
    std::vector<double> guess = warm.value_or(std::vector<double>(cfg.horizon, 0.0));
    bool have_guess = warm.has_value();
    for (int round = 0;; ++round) {
        sol = detail::minimize(prob, guess, have_guess, cfg.max_iterations, cfg.grad_tol,
                               cfg.lbfgs_memory);
        const double slack = 1e-9 + 1e-6 * std::fabs(*cfg.terminal_level);
        sol.terminal_ok = sol.terminal_value <= *cfg.terminal_level + slack;
        if (sol.terminal_ok || round >= cfg.penalty_rounds) break;
        prob.set_penalty(prob.penalty() * cfg.penalty_factor);
        guess = sol.controls;
        have_guess = true;
    }
    return sol;
}

// Warm start for the next problem: drop the applied control, append the
// terminal feedback at the predicted endpoint, clamp to the box.
inline std::vector<double> shift_warm_start(const HorizonSolution& prev, const TerminalLaw& law,
                                            const std::vector<double>& w_end,
                                            const std::optional<std::pair<double, double>>& u_box) {
    std::vector<double> next(prev.controls.begin() + 1, prev.controls.end());
    double tail = law.feedback(prev.states.back(), w_end);
    if (u_box) tail = std::min(std::max(tail, u_box->first), u_box->second);
    next.push_back(tail);
    return next;
}

struct MprStepDiag {
    int step = 0;
    int iterations = 0;
    double grad_norm = 0.0;
    double objective = 0.0;
    double terminal_value = 0.0;
};

struct MprRun {
    Trajectory trajectory;
    std::vector<MprStepDiag> diagnostics;
    bool diverged = false;
    int diverged_step = -1;
};

// Receding-horizon closed loop: solve, apply the first control, advance
// the true plant and exosystem, shift the warm start, repeat.
inline MprRun mpr_run(const SystemModel& m, const RunningCost& rc, const MprConfig& cfg,
                      std::vector<double> x0, std::vector<double> w0, int steps) {
    if (steps < 1) throw StructuralError("mpr: steps must be >= 1");
    MprRun run;
    std::vector<std::vector<double>> w_traj;
    w_traj.reserve(steps + cfg.horizon + 1);
    w_traj.push_back(std::move(w0));
    for (int t = 0; t < steps + cfg.horizon; ++t) w_traj.push_back(m.exo_step(w_traj.back()));

    std::vector<double> x = std::move(x0);
    std::optional<std::vector<double>> warm;
    for (int t = 0; t < steps; ++t) {
        double max_x = 0.0;
        for (double v : x) max_x = std::max(max_x, std::fabs(v));
        if (!(max_x <= kDivergenceBound)) {
            run.diverged = true;
            run.diverged_step = t;
            break;
        }
        std::vector<std::vector<double>> horizon_w(w_traj.begin() + t,
                                                   w_traj.begin() + t + cfg.horizon + 1);
        HorizonSolution sol;
        try {
            sol = solve_finite_horizon(m, rc, cfg, x, w_traj[t], warm, &horizon_w);
        } catch (const DivergedRollout&) {
            run.diverged = true;
            run.diverged_step = t;
            break;
        }
        const double u = sol.controls.front();
        run.trajectory.x.push_back(x);
        run.trajectory.w.push_back(w_traj[t]);
        run.trajectory.u.push_back(u);
        run.trajectory.y.push_back(m.output(x, u, w_traj[t]));
        run.diagnostics.push_back(
            {t, sol.iterations, sol.grad_norm, sol.objective, sol.terminal_value});
        x = m.step(x, u, w_traj[t]);
        warm = shift_warm_start(sol, cfg.terminal, w_traj[t + cfg.horizon], cfg.u_box);
    }
    run.trajectory.diverged = run.diverged;
    run.trajectory.diverged_step = run.diverged_step;
    return run;
}

// step,iterations,grad_norm,objective,terminal_value; one row per step
inline std::string diagnostics_csv(const MprRun& run) {
    std::string out = "step,iterations,grad_norm,objective,terminal_value\n";
    for (const auto& d : run.diagnostics) {
        out += std::to_string(d.step) + "," + std::to_string(d.iterations) + "," +
               format_double17(d.grad_norm) + "," + format_double17(d.objective) + "," +
               format_double17(d.terminal_value) + "\n";
    }
    return out;
}

} // namespace mprlab
