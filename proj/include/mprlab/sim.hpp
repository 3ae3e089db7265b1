#pragma once

#include <cmath>
#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

#include "mprlab/errors.hpp"
#include "mprlab/io.hpp"
#include "mprlab/model.hpp"
#include "mprlab/terminal.hpp"

// Closed-loop simulation of polynomial feedforward/feedback laws,
// divergence bookkeeping, and steady-state tracking metrics.

namespace mprlab {

inline constexpr double kDivergenceBound = 1e3; // on the sup norm of x

struct Trajectory {
    std::vector<std::vector<double>> x; // one row per recorded step
    std::vector<std::vector<double>> w;
    std::vector<double> u;
    std::vector<double> y; // recomputed h(x, u, w), never stored stale
    bool diverged = false;
    int diverged_step = -1;

    int steps() const { return static_cast<int>(u.size()); }
};

struct StepRange {
    int begin = 0;
    int end = 0; // half-open
};

struct TrackingMetrics {
    double steady_state_avg_error = 0.0; // mean |y| over the window
    double max_abs_u = 0.0;              // over the full run
    std::optional<int> settle_step;      // first t after which |y| stays below 10x the window mean
};

// u(t) = kappa(x(t), w(t)); the state advances through the true dynamics,
// not the series. Divergence (sup norm of x above 1e3) truncates the
// record and sets the flag; it is data, not an error.
inline Trajectory rollout_polynomial(const SystemModel& m, const TerminalLaw& law,
                                     std::vector<double> x0, std::vector<double> w0, int steps) {
    Trajectory tr;
    std::vector<double> x = std::move(x0);
    std::vector<double> w = std::move(w0);
    for (int t = 0; t < steps; ++t) {
        double max_x = 0.0;
        for (double v : x) max_x = std::max(max_x, std::fabs(v));
        if (!(max_x <= kDivergenceBound)) { // also catches NaN
            tr.diverged = true;
            tr.diverged_step = t;
            break;
        }
        const double u = law.feedback(x, w);
        tr.x.push_back(x);
        tr.w.push_back(w);
        tr.u.push_back(u);
        tr.y.push_back(m.output(x, u, w));
        x = m.step(x, u, w);
        w = m.exo_step(w);
    }
    return tr;
}

inline TrackingMetrics steady_state_metrics(const Trajectory& tr, StepRange window) {
    if (window.begin < 0 || window.end > tr.steps() || window.begin >= window.end)
        throw MetricError("sim: metrics window outside the trajectory");
    if (tr.diverged && tr.diverged_step < window.end)
        throw MetricError("sim: trajectory diverged inside the metrics window");
    TrackingMetrics metrics;
    double sum = 0.0;
    for (int t = window.begin; t < window.end; ++t) sum += std::fabs(tr.y[t]);
    metrics.steady_state_avg_error = sum / (window.end - window.begin);
    for (double u : tr.u) metrics.max_abs_u = std::max(metrics.max_abs_u, std::fabs(u));
    const double threshold = 10.0 * metrics.steady_state_avg_error;
    int settle = -1;
    for (int t = tr.steps(); t-- > 0;) {
        if (std::fabs(tr.y[t]) > threshold) break;
        settle = t;
    }
    if (settle >= 0) metrics.settle_step = settle;
    return metrics;
}

inline KeyValues metrics_to_key_values(const TrackingMetrics& m) {
    KeyValues kv;
    kv.emplace_back("steady_state_avg_error", format_double(m.steady_state_avg_error));
    kv.emplace_back("max_abs_u", format_double(m.max_abs_u));
    kv.emplace_back("settle_step", m.settle_step ? std::to_string(*m.settle_step) : "none");
    return kv;
}

// header t,x1..xn,w1..wk,u,y; one row per step; 17 significant digits
inline std::string trajectory_csv(const Trajectory& tr) {
    std::string out = "t";
    const int n = tr.x.empty() ? 0 : static_cast<int>(tr.x[0].size());
    const int k = tr.w.empty() ? 0 : static_cast<int>(tr.w[0].size());
    for (int i = 1; i <= n; ++i) out += ",x" + std::to_string(i);
    for (int j = 1; j <= k; ++j) out += ",w" + std::to_string(j);
    out += ",u,y\n";
    for (int t = 0; t < tr.steps(); ++t) {
        out += std::to_string(t);
        for (double v : tr.x[t]) out += "," + format_double17(v);
        for (double v : tr.w[t]) out += "," + format_double17(v);
        out += "," + format_double17(tr.u[t]);
        out += "," + format_double17(tr.y[t]);
        out += "\n";
    }
    return out;
}

} // namespace mprlab
