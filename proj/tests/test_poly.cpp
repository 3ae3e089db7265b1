#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <span>

#include "mprlab/poly.hpp"
#include "mprlab/rng.hpp"
#include "test_support.hpp"

using namespace mprlab;
using Catch::Approx;
using test_support::max_abs_diff;
using test_support::random_poly;

namespace {

TruncatedPoly var(int arity, int cap, int i) { return TruncatedPoly::variable(arity, cap, i); }

} // namespace

TEST_CASE("addition: inverse, disjoint supports, coefficient sums") {
    const auto z1 = var(1, 2, 0);
    CHECK((z1 + (-z1)).is_zero());

    const auto one = TruncatedPoly::constant(1, 2, 1.0);
    const auto sum = (one + z1) + z1 * z1;
    CHECK(sum.coeff({0}) == Approx(1.0));
    CHECK(sum.coeff({1}) == Approx(1.0));
    CHECK(sum.coeff({2}) == Approx(1.0));
    CHECK(sum.term_count() == 3);

    const auto scaled = z1 * 0.0108 + z1 * 0.0499;
    CHECK(scaled.coeff({1}) == 0.0108 + 0.0499);
    CHECK(scaled.coeff({1}) == Approx(0.0607).margin(1e-12));
}

TEST_CASE("multiplication truncates above the cap") {
    const auto z1 = var(1, 2, 0);
    const auto one = TruncatedPoly::constant(1, 2, 1.0);
    const auto sq = (one + z1) * (one + z1);
    CHECK(sq.coeff({0}) == Approx(1.0));
    CHECK(sq.coeff({1}) == Approx(2.0));
    CHECK(sq.coeff({2}) == Approx(1.0));

    // degree-2 product at cap 1 disappears entirely
    const auto a = var(2, 1, 0);
    const auto b = var(2, 1, 1);
    CHECK((a * b).is_zero());

    // (1 + z + z^2)(1 - z) = 1 - z^3 -> truncated to 1 at cap 2
    const auto z = var(1, 2, 0);
    const auto one2 = TruncatedPoly::constant(1, 2, 1.0);
    const auto prod = (one2 + z + z * z) * (one2 - z);
    CHECK(prod == one2);
}

TEST_CASE("composition substitutes and truncates") {
    // variable swap
    {
        const auto outer = var(2, 2, 0) * var(2, 2, 0); // w1^2
        const std::vector<TruncatedPoly> inner{var(2, 2, 1), var(2, 2, 0)};
        const auto result = outer.compose(std::span<const TruncatedPoly>(inner));
        CHECK(result == var(2, 2, 1) * var(2, 2, 1));
    }
    // linear outer reproduces the rotation row
    {
        const double c = std::sqrt(2.0) / 2.0;
        const auto outer = var(2, 2, 0);
        const auto row = var(2, 2, 0) * c - var(2, 2, 1) * c;
        const std::vector<TruncatedPoly> inner{row, var(2, 2, 0) * c + var(2, 2, 1) * c};
        CHECK(outer.compose(std::span<const TruncatedPoly>(inner)) == row);
    }
    // expand-and-truncate: z1^2 at z1 + z1^2, cap 3
    {
        const auto z = var(1, 3, 0);
        const auto outer = z * z;
        const std::vector<TruncatedPoly> inner{z + z * z};
        const auto result = outer.compose(std::span<const TruncatedPoly>(inner));
        CHECK(result.coeff({2}) == Approx(1.0));
        CHECK(result.coeff({3}) == Approx(2.0));
        CHECK(result.term_count() == 2);
    }
}

TEST_CASE("partial derivatives") {
    const auto z1 = var(2, 3, 0);
    const auto z2 = var(2, 3, 1);
    CHECK((z1 * z1).partial(0) == z1 * 2.0);
    CHECK((z1 * z2).partial(1) == z1);

    // d(z3 + v)^2 / dv = 2 z3 + 2 v over the space (z1, z2, z3, v)
    const auto z3 = var(4, 2, 2);
    const auto v = var(4, 2, 3);
    const auto sq = (z3 + v) * (z3 + v);
    CHECK(sq.partial(3) == z3 * 2.0 + v * 2.0);

    CHECK_THROWS_AS(z1.partial(5), StructuralError);
}

TEST_CASE("grade extraction") {
    const auto z = var(1, 3, 0);
    const auto one = TruncatedPoly::constant(1, 3, 1.0);
    const auto p = one + z + z * z;
    CHECK(p.grade(1) == z);
    CHECK(p.grade(3).is_zero());

    const auto cube = (one + z) * (one + z) * (one + z);
    CHECK(cube.grade(2) == z * z * 3.0);
}

TEST_CASE("evaluation") {
    const auto z1 = var(2, 2, 0);
    const auto z2 = var(2, 2, 1);
    const auto p = z1 * z1 + z2 * z2;
    CHECK(p.eval(std::vector<double>{1.0, 0.0}) == Approx(1.0));
    CHECK(TruncatedPoly::zero(2, 2).eval(std::vector<double>{3.0, -4.0}) == 0.0);

    const auto z = var(1, 2, 0);
    const auto q = TruncatedPoly::constant(1, 2, 1.0) + z * 2.0 + z * z;
    CHECK(q.eval(std::vector<double>{0.5}) == Approx(2.25));

    CHECK_THROWS_AS(p.eval(std::vector<double>{1.0}), StructuralError);
}

TEST_CASE("ring axioms hold at a fixed cap", "[property]") {
    Rng rng(11);
    for (int trial = 0; trial < 1000; ++trial) {
        const int arity = rng.uniform_int(1, 3);
        const int cap = rng.uniform_int(1, 4);
        const auto a = random_poly(rng, arity, cap, cap, 4);
        const auto b = random_poly(rng, arity, cap, cap, 4);
        const auto c = random_poly(rng, arity, cap, cap, 4);
        REQUIRE(max_abs_diff(a + b, b + a) == 0.0);
        REQUIRE(max_abs_diff((a + b) + c, a + (b + c)) <= 1e-12);
        REQUIRE(max_abs_diff(a * b, b * a) <= 1e-12);
        REQUIRE(max_abs_diff((a * b) * c, a * (b * c)) <= 1e-11);
        // truncation commutes with addition, so distributivity is exact
        REQUIRE(max_abs_diff(a * (b + c), a * b + a * c) <= 1e-11);
    }
}

TEST_CASE("composition agrees with evaluation when the cap is not hit", "[property]") {
    Rng rng(12);
    for (int trial = 0; trial < 300; ++trial) {
        const int in_arity = rng.uniform_int(1, 2);
        const int outer_deg = rng.uniform_int(1, 2);
        const int inner_deg = rng.uniform_int(1, 2);
        const int cap = outer_deg * inner_deg;
        const int outer_arity = rng.uniform_int(1, 2);
        const auto outer = random_poly(rng, outer_arity, cap, outer_deg, 3);
        std::vector<TruncatedPoly> inner;
        for (int i = 0; i < outer_arity; ++i)
            inner.push_back(random_poly(rng, in_arity, cap, inner_deg, 3));
        const auto composed = outer.compose(std::span<const TruncatedPoly>(inner));
        std::vector<double> point(in_arity);
        for (auto& v : point) v = rng.uniform(-1.0, 1.0);
        std::vector<double> inner_vals;
        for (const auto& g : inner) inner_vals.push_back(g.eval(point));
        REQUIRE(composed.eval(point) == Approx(outer.eval(inner_vals)).margin(1e-10));
    }
}

TEST_CASE("Leibniz rule up to the cap", "[property]") {
    Rng rng(13);
    for (int trial = 0; trial < 1000; ++trial) {
        const int arity = rng.uniform_int(1, 3);
        const int cap = rng.uniform_int(1, 4);
        const auto a = random_poly(rng, arity, cap, cap, 4);
        const auto b = random_poly(rng, arity, cap, cap, 4);
        const int v = rng.uniform_int(0, arity - 1);
        // d(ab) and a'b + ab' can differ above the cap, so compare after
        // dropping the top grade that the product rule cannot see
        const auto lhs = (a * b).partial(v);
        const auto rhs = a.partial(v) * b + a * b.partial(v);
        auto low = [&](const TruncatedPoly& p) {
            TruncatedPoly out = TruncatedPoly::zero(arity, cap);
            for (int g = 0; g + 1 <= cap; ++g) out = out + p.grade(g);
            return out;
        };
        REQUIRE(max_abs_diff(low(lhs), low(rhs)) <= 1e-11);
    }
}

TEST_CASE("canonical form: no zero coefficients, nothing above the cap", "[property]") {
    Rng rng(14);
    for (int trial = 0; trial < 500; ++trial) {
        const int arity = rng.uniform_int(1, 3);
        const int cap = rng.uniform_int(1, 4);
        auto p = random_poly(rng, arity, cap, cap + 1, 5);
        p = p * random_poly(rng, arity, cap, cap, 3) + random_poly(rng, arity, cap, cap, 3);
        for (const auto& [mono, coeff] : p.terms()) {
            REQUIRE(mono.degree() <= cap);
            REQUIRE(std::fabs(coeff) >= kCoeffPrune);
        }
        // canonical equality: subtracting an equal value gives the empty map
        REQUIRE((p - p).term_count() == 0);
    }
}

TEST_CASE("re-indexing into a larger variable space") {
    // lift a w-only series into (x1, x2, u, w1, w2)
    const auto w1 = var(2, 2, 0);
    const auto w2 = var(2, 2, 1);
    const auto p = w1 * w2 + w1 * 3.0;
    const auto lifted = p.embed(5, {3, 4});
    CHECK(lifted.coeff({0, 0, 0, 1, 1}) == Approx(1.0));
    CHECK(lifted.coeff({0, 0, 0, 1, 0}) == Approx(3.0));
    CHECK(lifted.term_count() == 2);
    CHECK_THROWS_AS(p.embed(3, {0, 5}), StructuralError);
}

TEST_CASE("debug serialization is graded-lex and frozen") {
    const auto z1 = var(2, 2, 0);
    const auto z2 = var(2, 2, 1);
    const auto p = TruncatedPoly::constant(2, 2, 1.0) + z1 * 2.0 + z1 * z1 + z1 * z2 * 0.5;
    CHECK(p.to_debug_string() == "1\n2 * z1\n1 * z1^2\n0.5 * z1 z2\n");
    CHECK(TruncatedPoly::zero(2, 2).to_debug_string() == "0\n");
    const std::vector<std::string> names{"x1", "w1"};
    CHECK((z1 * z2).to_debug_string(names) == "1 * x1 w1\n");
}

TEST_CASE("structural errors on mismatched operands") {
    const auto a = var(2, 2, 0);
    const auto b = var(3, 2, 0);
    const auto c = var(2, 3, 0);
    CHECK_THROWS_AS(a + b, StructuralError);
    CHECK_THROWS_AS(a * c, StructuralError);
    const std::vector<TruncatedPoly> inner{b};
    CHECK_THROWS_AS(a.compose(std::span<const TruncatedPoly>(inner)), StructuralError);
}
