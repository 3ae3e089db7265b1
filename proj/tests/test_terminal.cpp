#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <iostream>

#include "mprlab/pipeline.hpp"
#include "mprlab/rng.hpp"
#include "mprlab/scenario.hpp"
#include "mprlab/terminal.hpp"

using namespace mprlab;
using Catch::Approx;

namespace {

SystemModel linear_model(int cap = 2) {
    return SystemModel::from_scenario(scenario_linear_example(), cap);
}

// finite-horizon backward recursion, the stated oracle for the
// stationary solution: complete the square at each stage
Mat backward_recursion(const Mat& F, const Mat& G, const Mat& Q, const Mat& S, double R,
                       int stages) {
    Mat P(Q.rows(), Q.cols());
    for (int j = 0; j < stages; ++j) {
        const double rbar = R + (G.transpose() * P * G)(0, 0);
        const Mat K = (G.transpose() * P * F + S.transpose()) * (-1.0 / rbar);
        const Mat M = F + G * K;
        P = Q + S * K + K.transpose() * S.transpose() + K.transpose() * K * R +
            M.transpose() * P * M;
        P = (P + P.transpose()) * 0.5;
    }
    return P;
}

TruncatedPoly quadratic_form_poly(const Mat& P, const Mat& T, int n, int k, int cap) {
    // (x - Tw)' P (x - Tw) in (x1..xn, w1..wk)
    std::vector<TruncatedPoly> z;
    for (int i = 0; i < n; ++i) {
        TruncatedPoly zi = TruncatedPoly::variable(n + k, cap, i);
        for (int j = 0; j < k; ++j)
            zi = zi - T(i, j) * TruncatedPoly::variable(n + k, cap, n + j);
        z.push_back(zi);
    }
    TruncatedPoly out = TruncatedPoly::zero(n + k, cap);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (P(i, j) != 0.0) out = out + P(i, j) * (z[i] * z[j]);
    return out;
}

} // namespace

TEST_CASE("transverse quadratic cost of the linear example") {
    const auto ld = linearize(linear_model());
    const auto qc = transverse_quadratic_cost(ld, 2);
    const Mat q_expected{{1.0, 0.0, 0.0}, {0.0, 0.0, 0.0}, {0.0, 0.0, 1.0}};
    CHECK((qc.Q - q_expected).max_abs() == Approx(0.0).margin(1e-12));
    CHECK(qc.S(0, 0) == 0.0);
    CHECK(qc.S(1, 0) == 0.0);
    CHECK(qc.S(2, 0) == Approx(1.0));
    CHECK(qc.R(0, 0) == Approx(1.0));
}

TEST_CASE("transverse quadratic cost of a scalar chain") {
    LinearData ld{Mat{{0.0}}, Mat{{1.0}}, Mat(1, 1), Mat{{1.0}}, Mat(1, 1), Mat(1, 1), Mat{{1.0}}};
    const auto qc = transverse_quadratic_cost(ld, 1);
    CHECK(qc.Q(0, 0) == Approx(1.0));
    CHECK(qc.S(0, 0) == Approx(0.0));
    CHECK(qc.R(0, 0) == Approx(1.0));
}

TEST_CASE("transverse cost block [Q S; S' R] is positive semidefinite") {
    for (const auto& scenario : {scenario_linear_example(), scenario_pendulum()}) {
        const auto m = SystemModel::from_scenario(scenario, 2);
        const auto ld = linearize(m);
        const auto chain = build_output_chain(m, 6);
        const auto qc = transverse_quadratic_cost(ld, chain.relative_degree);
        const int n = m.n();
        Mat block(n + 1, n + 1);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) block(i, j) = qc.Q(i, j);
        for (int i = 0; i < n; ++i) {
            block(i, n) = qc.S(i, 0);
            block(n, i) = qc.S(i, 0);
        }
        block(n, n) = qc.R(0, 0);
        for (const auto& ev : eig_small(block)) {
            CHECK(ev.imag() == Approx(0.0).margin(1e-10));
            CHECK(ev.real() >= -1e-10);
        }
    }
}

TEST_CASE("quadratic grade of the transverse running cost matches (Q, S, R)") {
    // internal consistency between the matrix formula and the series route
    for (const auto& scenario : {scenario_linear_example(), scenario_pendulum()}) {
        const auto m = SystemModel::from_scenario(scenario, 3);
        const auto ld = linearize(m);
        const auto chain = build_output_chain(m, 6);
        const auto qc = transverse_quadratic_cost(ld, chain.relative_degree);
        const auto fbi = solve_fbi(m, 2);
        const auto tj = transverse_jets(m, fbi, build_running_cost(chain));
        const int n = m.n(), k = m.k(), cap = m.jet_cap();
        TruncatedPoly expected = TruncatedPoly::zero(n + 1 + k, cap);
        auto zv = [&](int i) { return TruncatedPoly::variable(n + 1 + k, cap, i); };
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (qc.Q(i, j) != 0.0) expected = expected + qc.Q(i, j) * (zv(i) * zv(j));
        for (int i = 0; i < n; ++i)
            if (qc.S(i, 0) != 0.0) expected = expected + 2.0 * qc.S(i, 0) * (zv(i) * zv(n));
        expected = expected + qc.R(0, 0) * (zv(n) * zv(n));
        CHECK((tj.lbar.grade(2) - expected).max_abs_coeff() <= 1e-9);
    }
}

TEST_CASE("DARE solution of the linear example matches the printed optimal law") {
    const auto ld = linearize(linear_model());
    const auto qc = transverse_quadratic_cost(ld, 2);
    const auto ric = solve_dare(ld, qc);
    const Mat p_expected{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 0.0}};
    CHECK((ric.P - p_expected).max_abs() <= 1e-8);
    CHECK(ric.K(0, 0) == Approx(0.0).margin(1e-8));
    CHECK(ric.K(0, 1) == Approx(0.0).margin(1e-8));
    CHECK(ric.K(0, 2) == Approx(-1.0).margin(1e-8));
    CHECK(ric.identity_residual <= 1e-9);
    for (const auto& ev : ric.closed_loop) CHECK(std::abs(ev) < 1.0);
}

TEST_CASE("one-step decoupled DARE") {
    LinearData ld{Mat{{0.0}}, Mat{{1.0}}, Mat(1, 1), Mat{{1.0}}, Mat(1, 1), Mat(1, 1), Mat{{1.0}}};
    QuadCost qc{Mat{{0.7}}, Mat{{0.0}}, Mat{{2.5}}};
    const auto ric = solve_dare(ld, qc);
    CHECK(ric.P(0, 0) == Approx(0.7).margin(1e-11));
    CHECK(ric.K(0, 0) == Approx(0.0).margin(1e-11));
}

TEST_CASE("DARE matches the backward-recursion oracle on random problems", "[property]") {
    Rng rng(41);
    for (int trial = 0; trial < 40; ++trial) {
        const int n = rng.uniform_int(1, 3);
        Mat F(n, n), G(n, 1);
        for (int i = 0; i < n; ++i) {
            G(i, 0) = rng.uniform(-1.0, 1.0);
            for (int j = 0; j < n; ++j) F(i, j) = rng.uniform(-1.0, 1.0);
        }
        // scale F strictly stable so stabilizability is automatic
        double radius = 0.0;
        for (const auto& ev : eigenvalues(F)) radius = std::max(radius, std::abs(ev));
        if (radius > 0.75) F = F * (0.75 / radius);
        // [Q S; S' R] = W'W + e_{n+1} r0 e_{n+1}' is PSD with R > 0
        Mat W(n + 1, n + 1);
        for (int i = 0; i <= n; ++i)
            for (int j = 0; j <= n; ++j) W(i, j) = rng.uniform(-1.0, 1.0);
        const Mat block = W.transpose() * W;
        Mat Q(n, n), S(n, 1);
        for (int i = 0; i < n; ++i) {
            S(i, 0) = block(i, n);
            for (int j = 0; j < n; ++j) Q(i, j) = block(i, j);
        }
        const double R = block(n, n) + rng.uniform(0.1, 1.0);
        LinearData ld{F, G, Mat(n, 1), Mat(1, n), Mat(1, 1), Mat(1, 1), Mat{{1.0}}};
        const auto ric = solve_dare(ld, QuadCost{Q, S, Mat{{R}}});
        const Mat oracle = backward_recursion(F, G, Q, S, R, 500);
        REQUIRE((ric.P - oracle).max_abs() <= 1e-8);
    }
}

TEST_CASE("linear plant produces no cubic correction") {
    const auto scenario = scenario_linear_example();
    const auto m = SystemModel::from_scenario(scenario, 3);
    const auto chain = build_output_chain(m, 6);
    const auto l = build_running_cost(chain);
    const auto ld = linearize(m);
    const auto fbi = solve_fbi(m, 2);
    const auto qc = transverse_quadratic_cost(ld, chain.relative_degree);
    const auto ric = solve_dare(ld, qc);
    AlbrekhtSolver solver(m, fbi, ric, qc, l);
    const auto corr = solver.advance();
    CHECK(corr.rho.max_abs_coeff() <= 1e-9);
    CHECK(corr.beta.max_abs_coeff() <= 1e-9);
}

TEST_CASE("assembled degree-2 law of the linear example equals the printed pi and kappa") {
    const auto result = synthesize(scenario_linear_example(), 2);
    const int n = 3, k = 2;
    // pi = x1^2 - 2 x1 w1 + x2^2 + 2 x2 w2 + w1^2 + w2^2
    auto v = [&](int i) { return TruncatedPoly::variable(n + k, 2, i); };
    const TruncatedPoly pi_expected = v(0) * v(0) - 2.0 * (v(0) * v(3)) + v(1) * v(1) +
                                      2.0 * (v(1) * v(4)) + v(3) * v(3) + v(4) * v(4);
    CHECK((result.law.pi - pi_expected).max_abs_coeff() <= 1e-8);
    // kappa = -x3 - w1
    auto vk = [&](int i) { return TruncatedPoly::variable(n + k, 2, i); };
    const TruncatedPoly kappa_expected = -vk(2) - vk(3);
    CHECK((result.law.kappa - kappa_expected).max_abs_coeff() <= 1e-8);
}

TEST_CASE("degree-2 pendulum law is the quadratic form around the Francis plane") {
    const auto result = synthesize(scenario_pendulum(), 2);
    const auto expected = quadratic_form_poly(result.riccati.P, result.fbi.T, 2, 2, 2);
    CHECK((result.law.pi - expected).max_abs_coeff() <= 1e-10);
}

TEST_CASE("assembled laws vanish on the tracking manifold as polynomials") {
    for (int degree : {2, 3, 4}) {
        const auto result = synthesize(scenario_pendulum(), degree);
        const auto& fbi = result.fbi;
        const int n = 2, k = 2, cap = degree;
        std::vector<TruncatedPoly> manifold; // (x, w) -> (theta(w), w)
        for (int i = 0; i < n; ++i) manifold.push_back(fbi.theta[i].embed(n + k, {n, n + 1}));
        for (int j = 0; j < k; ++j) manifold.push_back(TruncatedPoly::variable(n + k, cap, n + j));
        const std::span<const TruncatedPoly> span(manifold);
        // pi(theta(w), w) = 0
        CHECK(result.law.pi.compose(span).max_abs_coeff() <= 1e-9);
        // kappa(theta(w), w) = alpha(w)
        const auto kappa_on = result.law.kappa.compose(span);
        const auto alpha_lift = fbi.alpha.embed(n + k, {n, n + 1});
        double diff = 0.0;
        for (int d = 0; d <= degree - 1; ++d)
            diff = std::max(diff, (kappa_on.grade(d) - alpha_lift.grade(d)).max_abs_coeff());
        CHECK(diff <= 1e-9);
    }
}

TEST_CASE("DP residual of the exact linear solution is zero") {
    const auto result = synthesize(scenario_linear_example(), 2);
    for (double eps : {1e-1, 1e-2}) {
        CHECK(dp_residual_raw(result.model, result.law, result.running_cost.l, result.fbi.theta,
                              eps, 32, 0) <= 1e-10);
    }
}

TEST_CASE("DP residual orders on the pendulum laws") {
    const auto deg2 = synthesize(scenario_pendulum(), 2);
    const auto deg3 = synthesize(scenario_pendulum(), 3);
    const auto deg4 = synthesize(scenario_pendulum(), 4);

    // cubic and quartic corrections are genuinely present
    CHECK(deg3.law.pi.grade(3).max_abs_coeff() > 1e-6);
    CHECK(deg4.law.pi.grade(4).max_abs_coeff() > 1e-8);

    for (const auto* r : {&deg2, &deg3, &deg4}) {
        const auto ratios = std::vector<double>{
            dp_residual_ratio(r->model, r->law, r->running_cost.l, r->fbi.theta, 1e-1, 32, 0),
            dp_residual_ratio(r->model, r->law, r->running_cost.l, r->fbi.theta, 3e-2, 32, 0),
            dp_residual_ratio(r->model, r->law, r->running_cost.l, r->fbi.theta, 1e-2, 32, 0)};
        CAPTURE(r->law.cost_degree, ratios[0], ratios[1], ratios[2]);
        // bounded and non-increasing along the ladder; the max over rays
        // lets different directions dominate at different eps, so allow 5%
        // (a wrong vanishing order would grow by ~10x per decade instead)
        for (double ratio : ratios) REQUIRE(std::isfinite(ratio));
        REQUIRE(ratios[1] <= 1.05 * ratios[0]);
        REQUIRE(ratios[2] <= 1.05 * ratios[1]);
        REQUIRE(dp_residual_order(r->model, r->law, r->running_cost.l, r->fbi.theta, 32, 0) >=
                ratios[2]);
    }

    // monotone refinement: the raw defect at eps = 1e-2 never grows as the
    // degree increases (10% slack)
    const double raw2 =
        dp_residual_raw(deg2.model, deg2.law, deg2.running_cost.l, deg2.fbi.theta, 1e-2, 32, 0);
    const double raw3 =
        dp_residual_raw(deg3.model, deg3.law, deg3.running_cost.l, deg3.fbi.theta, 1e-2, 32, 0);
    const double raw4 =
        dp_residual_raw(deg4.model, deg4.law, deg4.running_cost.l, deg4.fbi.theta, 1e-2, 32, 0);
    CHECK(raw3 <= 1.1 * raw2);
    CHECK(raw4 <= 1.1 * raw3);
}

TEST_CASE("Lyapunov region of the exact linear law covers the sampled grid") {
    const auto result = synthesize(scenario_linear_example(), 2);
    LyapunovOptions opt;
    opt.samples = 1000;
    const double c_feedback =
        estimate_lyapunov_region(result.model, result.law, LyapunovMode::feedback, 1.0, opt);
    // exact DP solution: decrease holds everywhere, so the estimate is the
    // largest grid level reached by the samples
    CHECK(c_feedback > 1.0);
}

TEST_CASE("Lyapunov region of the pendulum laws") {
    const auto deg2 = synthesize(scenario_pendulum(), 2);
    const auto deg4 = synthesize(scenario_pendulum(), 4);
    LyapunovOptions opt;
    opt.samples = 2000;
    const double c2 =
        estimate_lyapunov_region(deg2.model, deg2.law, LyapunovMode::feedback, 1.0, opt);
    CHECK(c2 > 0.0);
    // recorded, not asserted: how the levels compare across degree and
    // exosystem amplitude. On the full-amplitude orbit the quartic law's
    // Taylor data loses pointwise decrease near the manifold, so its
    // certified level there can be empty.
    const double c4 =
        estimate_lyapunov_region(deg4.model, deg4.law, LyapunovMode::feedback, 1.0, opt);
    std::cout << "pendulum Lyapunov levels (w_bound 1.0): degree-2 c* = " << c2
              << ", degree-4 c* = " << c4 << "\n";
    const double c_clf =
        estimate_lyapunov_region(deg2.model, deg2.law, LyapunovMode::clf, 1.0, opt);
    CHECK(c_clf >= c2); // minimizing over u can only enlarge the region
}
