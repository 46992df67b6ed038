#include "gcalc/errors.hpp"
#include "gcalc/scenario.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace gcalc;

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

// Bachelier call on zero start: convex payoffs are priced by the upper volatility.
double bachelier_call(double strike, double sigma, double T) {
    const double s = sigma * std::sqrt(T);
    const double d = -strike / s;
    return -strike * normal_cdf(d) + s * normal_pdf(d);
}

} // namespace

TEST_CASE("quadratic anchors") {
    const Lattice lat = gtest::lattice({1}, {4}, 1.0, 200, 401);
    CHECK(sublinear_expectation(lat, gtest::payoff(20, gtest::sq))[0] == doctest::Approx(4.0).epsilon(0.0125));
    CHECK(-sublinear_expectation(lat, gtest::payoff(20, gtest::neg_sq))[0] ==
          doctest::Approx(1.0).epsilon(0.05));
    CHECK(std::abs(sublinear_expectation(lat, gtest::payoff(1, gtest::ident))[0]) < 1e-9);
}

TEST_CASE("convex payoffs follow the upper volatility") {
    const Lattice lat = gtest::lattice({1}, {4}, 1.0, 200, 401);
    const auto call = TerminalFunctional::scalar(1, [](std::span<const double> x) { return std::max(x[0] - 0.5, 0.0); });
    CHECK(sublinear_expectation(lat, call)[0] == doctest::Approx(bachelier_call(0.5, 2.0, 1.0)).epsilon(0.01));
    const double abs_oracle = 2.0 * std::sqrt(2.0 / std::numbers::pi);
    CHECK(sublinear_expectation(lat, gtest::payoff(1, gtest::absval))[0] ==
          doctest::Approx(abs_oracle).epsilon(0.01));
}

TEST_CASE("constants, cash invariance, monotonicity, sublinearity") {
    const Lattice lat = gtest::lattice({1}, {4}, 1.0, 50, 201);
    const auto c = TerminalFunctional::scalar(0, [](std::span<const double>) { return 3.25; });
    CHECK(sublinear_expectation(lat, c)[0] == doctest::Approx(3.25).epsilon(1e-12));

    const auto f = TerminalFunctional::scalar(3, [](std::span<const double> x) { return std::sin(3 * x[0]) + x[0]; });
    const auto f_shift =
        TerminalFunctional::scalar(3, [](std::span<const double> x) { return std::sin(3 * x[0]) + x[0] + 1.5; });
    const auto g = TerminalFunctional::scalar(3, [](std::span<const double> x) { return std::sin(3 * x[0]) + x[0] + 0.1 * x[0] * x[0]; });
    const auto fg = TerminalFunctional::scalar(
        6, [](std::span<const double> x) { return 2 * std::sin(3 * x[0]) + 2 * x[0] + 0.1 * x[0] * x[0]; });
    const double ef = sublinear_expectation(lat, f)[0];
    const double eg = sublinear_expectation(lat, g)[0];
    CHECK(sublinear_expectation(lat, f_shift)[0] == doctest::Approx(ef + 1.5).epsilon(1e-12));
    CHECK(ef <= eg + 1e-12);
    CHECK(sublinear_expectation(lat, fg)[0] <= ef + eg + 1e-12);
}

TEST_CASE("vector payoffs maximise per component") {
    const Lattice lat = gtest::lattice({1}, {4}, 1.0, 100, 241);
    const auto xi = TerminalFunctional::vector(2, 20, [](std::span<const double> x, std::span<double> out) {
        out[0] = x[0] * x[0];
        out[1] = -x[0] * x[0];
    });
    const auto e = sublinear_expectation(lat, xi);
    CHECK(e[0] == doctest::Approx(4.0).epsilon(0.0125));
    CHECK(e[1] == doctest::Approx(-1.0).epsilon(0.05));
}

TEST_CASE("Monte Carlo under fixed controls stays below the lattice value") {
    const Lattice lat = gtest::lattice({1}, {4}, 1.0, 100, 241);
    const auto xi = TerminalFunctional::scalar(3, [](std::span<const double> x) { return std::sin(3 * x[0]) + 0.3 * std::abs(x[0]); });
    const double v = sublinear_expectation(lat, xi)[0];
    for (double s : {1.0, 2.0, 4.0}) {
        const auto mc = control_monte_carlo(lat.time(), lat.box(), xi, constant_control({s}), 4000, 5);
        CHECK(mc.mean[0] <= v + 3 * mc.std_error[0] + 1e-3);
    }
    const ScenarioField field = conditional_expectation_field(lat, xi);
    const auto replay = control_monte_carlo(lat.time(), lat.box(), xi, policy_control(lat, field), 4000, 9);
    CHECK(std::abs(replay.mean[0] - v) <= 3 * replay.std_error[0] + 2e-2);
}

TEST_CASE("ties go to the lowest scenario index") {
    const Lattice lat = gtest::lattice({1}, {4}, 1.0, 10, 77);
    const auto c = TerminalFunctional::scalar(0, [](std::span<const double>) { return 1.0; });
    const ScenarioField field = conditional_expectation_field(lat, c);
    for (std::size_t k = 0; k < lat.steps(); ++k)
        for (std::size_t node = 0; node < lat.nodes(); ++node) CHECK(field.argmax(k, 0, node) == 0);
}

TEST_CASE("capacity") {
    const Lattice lat = gtest::lattice({1}, {4}, 1.0, 100, 241);
    const auto never = TerminalFunctional::scalar(0, [](std::span<const double> x) { return x[0] > 1e6 ? 1.0 : 0.0; });
    const auto always = TerminalFunctional::scalar(0, [](std::span<const double>) { return 1.0; });
    const auto pos = TerminalFunctional::scalar(0, [](std::span<const double> x) { return x[0] > 0 ? 1.0 : 0.0; });
    CHECK(capacity_estimate(lat, never) == 0.0);
    CHECK(capacity_estimate(lat, always) == doctest::Approx(1.0));
    const double p = capacity_estimate(lat, pos);
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
    const auto half = TerminalFunctional::scalar(0, [](std::span<const double> x) { return x[0] > 0 ? 0.5 : 0.0; });
    CHECK_THROWS_AS(capacity_estimate(lat, half), InputError);
}

TEST_CASE("two-dimensional lattice") {
    const Lattice lat = gtest::lattice({1, 0.5}, {2, 1.5}, 0.5, 20, 121);
    const auto xi = TerminalFunctional::scalar(10, [](std::span<const double> x) { return x[0] * x[0] + x[1] * x[1]; });
    CHECK(sublinear_expectation(lat, xi)[0] == doctest::Approx((2.0 + 1.5) * 0.5).epsilon(0.02));
    const auto cross = TerminalFunctional::scalar(10, [](std::span<const double> x) { return x[0] * x[1]; });
    CHECK(std::abs(sublinear_expectation(lat, cross)[0]) < 1e-9);
}

TEST_CASE("input validation") {
    CHECK_THROWS_AS(TimeGrid(0.0, 10), InputError);
    CHECK_THROWS_AS(TimeGrid(1.0, 0), InputError);
    CHECK_THROWS_AS(SpaceGrid({1.0}, 4), InputError);
    VolatilityBox box({1}, {4});
    TimeGrid tg(1.0, 100);
    CHECK_THROWS_AS(Lattice(tg, SpaceGrid({50.0}, 21), box), ResolutionError);
    CHECK_THROWS_AS(SpaceGrid::fit(box, tg, 401, 5.0), InputError);
    const Lattice lat = gtest::lattice({1}, {4}, 1.0, 20, 109);
    const auto bad = TerminalFunctional::scalar(0, [](std::span<const double>) { return std::nan(""); });
    CHECK_THROWS_AS(sublinear_expectation(lat, bad), InputError);
    CHECK_THROWS_AS(control_monte_carlo(tg, box, gtest::payoff(1, gtest::ident), constant_control({2}), 0, 1),
                    InputError);
    CHECK_THROWS_AS(control_monte_carlo(tg, box, gtest::payoff(1, gtest::ident), constant_control({8}), 10, 1),
                    InputError);
}
