#include "gcalc/errors.hpp"
#include "gcalc/solver.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace gcalc;

namespace {

Driver linear_in_y(double r) {
    return [r](double, std::span<const double> y, std::span<const double>, std::span<const double>,
               std::span<double> out) { out[0] = -r * y[0]; };
}

Driver constant_driver(double c) {
    return [c](double, std::span<const double>, std::span<const double>, std::span<const double>,
               std::span<double> out) { std::fill(out.begin(), out.end(), c); };
}

struct FieldErrors {
    double y = 0.0, z = 0.0, eta = 0.0;
};

template <class Y, class Z, class E>
FieldErrors central_errors(const BsdeSolution& s, const Lattice& lat, Y y, Z z, E eta, double frac = 0.5) {
    FieldErrors e;
    for (std::size_t k = 0; k <= lat.steps(); ++k)
        for (std::size_t node = 0; node < lat.nodes(); ++node) {
            if (!gtest::central(lat, node, frac)) continue;
            const double x = lat.state(node)[0];
            const double t = lat.time().t(k);
            e.y = std::max(e.y, std::abs(s.y(k, 0, node) - y(t, x)));
            if (k == lat.steps()) continue;
            e.z = std::max(e.z, std::abs(s.z(k, 0, 0, node) - z(t, x)));
            e.eta = std::max(e.eta, std::abs(s.eta_at(k, 0, 0, node) - eta(t, x)));
        }
    return e;
}

} // namespace

TEST_CASE("representation of simple payoffs") {
    const Lattice lat = gtest::lattice({1}, {4}, 1.0, 100, 241);
    const auto c = TerminalFunctional::scalar(0, [](std::span<const double>) { return 2.5; });
    const BsdeSolution sc = represent_martingale(c, lat);
    auto e = central_errors(sc, lat, [](double, double) { return 2.5; }, [](double, double) { return 0.0; },
                            [](double, double) { return 0.0; });
    CHECK(e.y < 1e-12);
    CHECK(e.z < 1e-12);
    CHECK(e.eta < 1e-12);

    const BsdeSolution sl = represent_martingale(gtest::payoff(1, gtest::ident), lat);
    // edge clamping leaks inward with a Gaussian tail; the central quarter is clean to 1e-5
    e = central_errors(sl, lat, [](double, double x) { return x; }, [](double, double) { return 1.0; },
                       [](double, double) { return 0.0; }, 0.25);
    CHECK(e.y < 1e-5);
    CHECK(e.z < 1e-5);
    CHECK(e.eta < 1e-4);

    const BsdeSolution sq = represent_martingale(gtest::payoff(20, gtest::sq), lat);
    e = central_errors(sq, lat, [](double t, double x) { return x * x + 4 * (1 - t); },
                       [](double, double x) { return 2 * x; }, [](double, double) { return 2.0; });
    CHECK(e.y < 0.05);
    CHECK(e.z < 0.05);
    CHECK(e.eta < 0.1);
    CHECK(sq.min_k() >= -1e-6);

    const BsdeSolution nq = represent_martingale(gtest::payoff(20, gtest::neg_sq), lat);
    e = central_errors(nq, lat, [](double t, double x) { return -x * x - (1 - t); },
                       [](double, double x) { return -2 * x; }, [](double, double) { return -2.0; });
    CHECK(e.y < 0.05);
    CHECK(e.z < 0.05);
    CHECK(e.eta < 0.1);
    CHECK(nq.min_k() >= -1e-6);
}

TEST_CASE("linear driver in y") {
    const Lattice lat = gtest::lattice({1}, {4}, 1.0, 100, 241);
    GBsdeParams p;
    p.xi = TerminalFunctional::scalar(0, [](std::span<const double>) { return 3.0; });
    p.f = linear_in_y(0.5);
    p.lipschitz = 0.5;
    PicardOptions opt;
    opt.tol = 1e-12;
    opt.max_iter = 200;
    const auto res = solve_gbsde(p, lat, opt);
    const std::size_t o = lat.origin();
    for (std::size_t k = 0; k <= lat.steps(); k += 10) {
        const double discrete = 3.0 * std::pow(1.0 + 0.5 * lat.time().dt(), -double(lat.steps() - k));
        CHECK(res.solution.y(k, 0, o) == doctest::Approx(discrete).epsilon(1e-9));
        CHECK(res.solution.y(k, 0, o) == doctest::Approx(3.0 * std::exp(-0.5 * (1 - lat.time().t(k)))).epsilon(2e-3));
    }
    CHECK(res.report.measured_factor < 1.0);
    for (std::size_t i = 1; i < res.report.distances.size(); ++i)
        CHECK(res.report.distances[i] < res.report.distances[i - 1]);
}

TEST_CASE("constant qv driver") {
    const Lattice lat = gtest::lattice({1}, {4}, 1.0, 50, 201);
    GBsdeParams p;
    p.xi = TerminalFunctional::scalar(0, [](std::span<const double>) { return 0.0; });
    p.g = constant_driver(0.3);
    const auto res = solve_gbsde(p, lat);
    for (std::size_t k = 0; k <= lat.steps(); k += 5)
        CHECK(res.solution.y(k, 0, lat.origin()) == doctest::Approx(0.3 * 4 * (1 - lat.time().t(k))).epsilon(1e-9));
}

TEST_CASE("classical oracle") {
    const Lattice lat = gtest::lattice({1}, {1}, 1.0, 100, 121);
    GBsdeParams p;
    p.xi = gtest::payoff(20, gtest::sq);
    const BsdeSolution s = classical_oracle(p, lat);
    const auto e = central_errors(s, lat, [](double t, double x) { return x * x + (1 - t); },
                                  [](double, double x) { return 2 * x; }, [](double, double) { return 2.0; }, 0.25);
    CHECK(e.y < 5e-5);
    CHECK(e.z < 5e-5);
    CHECK(e.eta < 5e-4);

    GBsdeParams q;
    q.xi = TerminalFunctional::scalar(0, [](std::span<const double>) { return 0.0; });
    q.f = constant_driver(1.0);
    const BsdeSolution s1 = classical_oracle(q, lat);
    for (std::size_t k = 0; k <= lat.steps(); ++k)
        CHECK(s1.y(k, 0, lat.origin()) == doctest::Approx(1 - lat.time().t(k)).epsilon(1e-12));

    const Lattice wide = gtest::lattice({1}, {4}, 1.0, 20, 109);
    CHECK_THROWS_AS(classical_oracle(p, wide), MisuseError);
}

TEST_CASE("degenerate box agrees with the classical oracle") {
    const Lattice lat = gtest::lattice({1}, {1}, 1.0, 100, 121);
    GBsdeParams p;
    p.xi = gtest::payoff(20, gtest::sq);
    p.f = linear_in_y(0.5);
    p.lipschitz = 0.5;
    PicardOptions opt;
    opt.tol = 1e-13;
    opt.max_iter = 200;
    const auto res = solve_gbsde(p, lat, opt);
    const BsdeSolution ref = classical_oracle(p, lat);
    double worst = 0.0;
    for (std::size_t k = 0; k <= lat.steps(); ++k)
        for (std::size_t node = 0; node < lat.nodes(); ++node)
            worst = std::max(worst, std::abs(res.solution.y(k, 0, node) - ref.y(k, 0, node)));
    CHECK(worst < 1e-8);
}

TEST_CASE("errors") {
    const Lattice lat = gtest::lattice({1}, {4}, 1.0, 20, 109);
    GBsdeParams p;
    p.xi = gtest::payoff(1, gtest::ident);
    p.f = [](double, std::span<const double>, std::span<const double>, std::span<const double>,
             std::span<double> out) { out[0] = std::nan(""); };
    CHECK_THROWS_AS(solve_gbsde(p, lat), DriverError);

    GBsdeParams q;
    q.xi = gtest::payoff(1, gtest::ident);
    q.f = linear_in_y(5.0);
    q.lipschitz = 0.1;
    CHECK_THROWS_AS(solve_gbsde(q, lat), InputError);
    const double observed = lipschitz_spot_check(q, 1, 64, 1);
    CHECK(observed > 0.1);
    CHECK(observed <= 5.0 + 1e-12);

    GBsdeParams m;
    m.xi = gtest::payoff(1, gtest::ident);
    m.xi.monitor_step = 10;
    CHECK_THROWS_AS(solve_gbsde(m, lat), InputError);

    GBsdeParams slow;
    slow.xi = gtest::payoff(20, gtest::sq);
    slow.f = linear_in_y(0.5);
    slow.lipschitz = 0.5;
    PicardOptions opt;
    opt.tol = 1e-15;
    opt.max_iter = 2;
    CHECK_THROWS_AS(solve_gbsde(slow, lat, opt), ConvergenceError);
}

TEST_CASE("default mu") {
    const VolatilityBox box({1}, {4});
    CHECK(default_mu(0.0, box) == doctest::Approx(std::sqrt(80.0)));
    CHECK(default_mu(0.5, box) == doctest::Approx(std::sqrt(40.0)));
}

TEST_CASE("pathwise residual and the decreasing process") {
    const Lattice lat = gtest::lattice({1}, {4}, 1.0, 100, 241);
    GBsdeParams p;
    p.xi = gtest::payoff(20, gtest::sq);
    p.f = linear_in_y(0.5);
    p.lipschitz = 0.5;
    PicardOptions opt;
    opt.tol = 1e-12;
    opt.max_iter = 200;
    const auto res = solve_gbsde(p, lat, opt);
    const auto r = residual_check(res.solution, p, lat, 200, 3);
    CHECK(r.on_policy < 1e-6);
    CHECK(r.min_k >= -1e-6);
    const auto km = k_martingale_check(res.solution, p, lat, 16, 1000, 4);
    CHECK(km.means.size() == 16);
    CHECK(km.worst <= 3 * km.worst_se + 1e-9);
    CHECK(std::abs(km.means[0]) <= 3 * km.std_errors[0] + 1e-9);
}

TEST_CASE("two-dimensional representation of a separable payoff") {
    const Lattice lat = gtest::lattice({1, 0.5}, {2, 1.5}, 0.5, 20, 121);
    const auto xi = TerminalFunctional::scalar(10, [](std::span<const double> x) { return x[0] * x[0] - x[1] * x[1]; });
    const BsdeSolution s = represent_martingale(xi, lat);
    for (std::size_t node = 0; node < lat.nodes(); ++node) {
        if (!gtest::central(lat, node)) continue;
        const auto x = lat.state(node);
        CHECK(s.y(0, 0, node) == doctest::Approx(x[0] * x[0] - x[1] * x[1] + (2.0 - 0.5) * 0.5).epsilon(1e-6));
        CHECK(s.eta_at(0, 0, 0, node) == doctest::Approx(2.0).epsilon(1e-6));
        CHECK(s.eta_at(0, 0, 1, node) == doctest::Approx(-2.0).epsilon(1e-6));
    }
    CHECK(s.min_k() >= -1e-9);
}

TEST_CASE("switching payoff: on-policy slack shrinks with the time step") {
    // tent payoff: the worst case switches between the corners, K leaks O(dt) onto the policy path
    const auto tent = TerminalFunctional::scalar(1, [](std::span<const double> x) { return std::max(0.0, 1.0 - std::abs(x[0])); });
    GBsdeParams p;
    p.xi = tent;
    double prev = 0.0;
    for (std::size_t N : {50u, 100u, 200u}) {
        const Lattice lat = gtest::lattice({1}, {4}, 1.0, N, 481);
        const BsdeSolution s = represent_martingale(tent, lat);
        const double r = residual_check(s, p, lat, 256, 5).on_policy;
        CHECK(s.min_k() >= 0.0);
        if (prev > 0.0) CHECK(r < 0.75 * prev);
        prev = r;
    }
}
