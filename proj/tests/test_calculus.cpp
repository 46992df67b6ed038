#include "gcalc/calculus.hpp"
#include "gcalc/errors.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <memory>
#include <random>

using namespace gcalc;

namespace {

ControlRule random_corner_control(const VolatilityBox& box, std::uint64_t seed) {
    auto rng = std::make_shared<std::mt19937_64>(seed);
    return [&box, rng](std::size_t, std::span<const double>, std::span<double> s) {
        for (std::size_t j = 0; j < s.size(); ++j) {
            const double w = std::uniform_real_distribution<double>(0, 1)(*rng);
            s[j] = box.lower()[j] + w * (box.upper()[j] - box.lower()[j]);
        }
    };
}

} // namespace

TEST_CASE("quadratic variation of simulated paths") {
    const TimeGrid tg(1.0, 200);
    const VolatilityBox box({1}, {4});
    const auto p = simulate_path(tg, box, constant_control({2.5}), 3);
    CHECK(p.qv.back()[0] == doctest::Approx(2.5).epsilon(1e-12));
    const auto q = simulate_path(tg, box, random_corner_control(box, 5), 3);
    CHECK(q.qv.back()[0] >= 1.0 - 1e-12);
    CHECK(q.qv.back()[0] <= 4.0 + 1e-12);
    CHECK_THROWS_AS(simulate_path(tg, box, constant_control({5.0}), 1), InputError);
}

TEST_CASE("stochastic integrals telescope") {
    const TimeGrid tg(1.0, 100);
    const VolatilityBox box({1, 0.5}, {4, 2});
    const auto p = simulate_path(tg, box, random_corner_control(box, 8), 21);
    std::vector<Matrix> ones(100, Matrix(2, 1, {1, 1}));
    CHECK(ito_integral(ones, p)[0] == doctest::Approx(p.B.back()[0] + p.B.back()[1]).epsilon(1e-12));

    // sum 2 B_k dB_k = B_N^2 - <B>_N for binomial increments
    std::vector<Matrix> twice_b;
    for (std::size_t k = 0; k < 100; ++k) twice_b.push_back(Matrix(2, 1, {2 * p.B[k][0], 2 * p.B[k][1]}));
    const double lhs = ito_integral(twice_b, p)[0];
    const double rhs = p.B.back()[0] * p.B.back()[0] + p.B.back()[1] * p.B.back()[1] - p.qv.back()[0] - p.qv.back()[1];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));

    std::vector<DiagTensor> unit(100, DiagTensor(1, 2, {1, 1}));
    CHECK(qv_integral(unit, p)[0] == doctest::Approx(p.qv.back()[0] + p.qv.back()[1]).epsilon(1e-12));
    CHECK_THROWS_AS(ito_integral(std::vector<Matrix>(99, Matrix(2, 1)), p), DimensionError);
    CHECK_THROWS_AS(qv_integral(std::vector<DiagTensor>(100, DiagTensor(1, 3)), p), DimensionError);
}

TEST_CASE("quadratic-variation lemma on random draws") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(-2, 2);
    for (std::size_t d : {1u, 2u})
        for (std::size_t n : {1u, 2u}) {
            std::vector<double> lo(d), hi(d);
            for (std::size_t j = 0; j < d; ++j) {
                lo[j] = 0.2 + std::abs(u(rng));
                hi[j] = lo[j] + std::abs(u(rng));
            }
            const VolatilityBox box(lo, hi);
            const TimeGrid tg(1.0, 40);
            for (int rep = 0; rep < 25; ++rep) {
                std::vector<DiagTensor> eta;
                for (std::size_t k = 0; k < 40; ++k) {
                    DiagTensor e(n, d);
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < d; ++j) e.entry(i, j) = u(rng);
                    eta.push_back(e);
                }
                const auto p = simulate_path(tg, box, random_corner_control(box, rng()), rng());
                const std::size_t a = rng() % 40;
                const std::size_t b = a + rng() % (41 - a);
                const auto r = lemma31_bounds(eta, p, box, a, b);
                CHECK(r.abs_holds);
                CHECK(r.sandwich_holds);
                CHECK(r.k_used == doctest::Approx(std::sqrt(double(d)) * box.upper_max()));
            }
        }
}

TEST_CASE("weighted norms") {
    const Lattice lat = gtest::lattice({1}, {4}, 1.0, 100, 241);
    const SquaredProcess one = [](std::size_t, std::size_t) { return 1.0; };
    for (double beta : {0.0, 1.0, 8.0, 64.0}) {
        const double expect = beta == 0.0 ? 1.0 : std::sqrt(std::expm1(beta) / beta);
        CHECK(weighted_norm(lat, one, beta) == doctest::Approx(expect).epsilon(1e-12));
    }
    const double half = weighted_norm(lat, one, 2.0, 0.5);
    CHECK(half * half == doctest::Approx((std::exp(2.0) - std::exp(1.0)) / 2.0).epsilon(1e-12));

    // E[B_t^2] = upper t under the worst case, summed with left-point weights at beta = 0
    const SquaredProcess b2 = [&lat](std::size_t, std::size_t node) {
        const double x = lat.state(node)[0];
        return x * x;
    };
    CHECK(weighted_expectation(lat, b2, 0.0) == doctest::Approx(2.0 * (1.0 - 0.01)).epsilon(1e-9));

    CHECK_THROWS_AS(weighted_norm(lat, one, 701.0), OverflowError);
    CHECK_THROWS_AS(weighted_norm(lat, one, -1.0), InputError);
    CHECK(exp_weight(0.0, 0.2, 0.7) == doctest::Approx(0.5));
}

TEST_CASE("ratio decay") {
    CHECK(beta_of(10, 2.0, 1.0) == 20.0);
    CHECK_THROWS_AS(beta_of(1, 1.0, 0.0), DegenerateDenominatorError);

    const Lattice lat = gtest::lattice({1}, {4}, 1.0, 40, 201);
    const auto one = [](std::span<const double>) { return 1.0; };
    StepProcess theta{{0, 40}, {one}};
    StepProcess zeta{{0, 40}, {one}};
    const std::vector<double> betas{1, 5, 50};
    const auto r = ratio_decay_report(lat, theta, zeta, betas, 5, false);
    for (const auto& e : r.entries) CHECK(e.ratio == doctest::Approx(1.0 / e.beta).epsilon(1e-12));
    for (const auto& s : r.steps) {
        CHECK(s.holds);
        CHECK(s.beta == doctest::Approx(double(s.n)));
    }

    StepProcess two_theta{{0, 20, 40},
                          {[](std::span<const double>) { return 1.5; },
                           [](std::span<const double> x) { return 0.5 + std::sin(x[0]); }}};
    StepProcess two_zeta{{0, 20, 40},
                         {[](std::span<const double>) { return 0.8; },
                          [](std::span<const double> x) { return 0.3 + 0.2 * std::cos(2 * x[0]); }}};
    const auto r2 = ratio_decay_report(lat, two_theta, two_zeta, betas, 20, true);
    for (const auto& s : r2.steps) {
        CHECK(s.holds);
        CHECK(s.b <= 1.0 / double(s.n) + 1e-12);
    }

    StepProcess zero{{0, 40}, {[](std::span<const double>) { return 0.0; }}};
    CHECK_THROWS_AS(ratio_decay_report(lat, theta, zero, betas, 3, false), DegenerateDenominatorError);
    StepProcess bad{{0, 30}, {one}};
    CHECK_THROWS_AS(ratio_decay_report(lat, bad, zeta, betas, 3, false), InputError);
}
