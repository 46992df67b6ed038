#include "gcalc/calculus.hpp"
#include "gcalc/harness.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace gcalc;

namespace {

Lattice small() { return gtest::lattice({1}, {4}, 1.0, 50, 201); }

GBsdeParams quadratic(double shift = 0.0) {
    GBsdeParams p;
    p.xi = TerminalFunctional::scalar(20, [shift](std::span<const double> x) { return x[0] * x[0] + shift; });
    return p;
}

double integral_exp(double beta) { return std::expm1(beta) / beta; }

void check_consistency(const AprioriReport& r) {
    for (const auto& row : r.rows) {
        CHECK(row.y2 >= 0.0);
        CHECK(row.z2 >= 0.0);
        CHECK(row.eta2 >= 0.0);
        if (row.printed_all()) CHECK(row.conservative_all());
        if (r.beta0_conservative && row.beta >= *r.beta0_conservative) CHECK(row.conservative_all());
        if (r.beta0_printed && row.beta >= *r.beta0_printed) CHECK(row.printed_all());
    }
}

} // namespace

TEST_CASE("constants") {
    const VolatilityBox box({1}, {4});
    const auto p = printed_constants(box);
    CHECK(p.y == doctest::Approx(1.0));
    CHECK(p.z == doctest::Approx(3.0));
    CHECK(p.eta == doctest::Approx(1.0));
    const auto c = conservative_constants(VolatilityBox({0.5}, {4}));
    CHECK(c.y == doctest::Approx(10.0));
    CHECK(c.eta == doctest::Approx(10.0));
    CHECK(default_beta_grid().back() == 1024.0);
}

TEST_CASE("identical parameters give zero differences") {
    const Lattice lat = small();
    const auto r = apriori_check(quadratic(), quadratic(), lat, {1, 4, 16});
    for (const auto& row : r.rows) {
        CHECK(row.y2 == 0.0);
        CHECK(row.z2 == 0.0);
        CHECK(row.eta2 == 0.0);
        CHECK(row.conservative_all());
        CHECK(row.printed_all());
    }
    CHECK(r.beta0_conservative == 1.0);
    const auto s = sup_estimate_check(quadratic(), quadratic(), lat, 4.0);
    CHECK(s.lhs == 0.0);
    CHECK(s.holds);
}

TEST_CASE("terminal perturbation") {
    const Lattice lat = small();
    const auto r = apriori_check(quadratic(), quadratic(0.1), lat, {1, 2, 4, 8, 16});
    for (const auto& row : r.rows) {
        // cash invariance: dY = 0.1 everywhere, dZ = d eta = 0
        CHECK(row.y2 == doctest::Approx(0.01 * integral_exp(row.beta)).epsilon(1e-9));
        CHECK(row.z2 < 1e-20);
        CHECK(row.eta2 < 1e-20);
        CHECK(row.terminal == doctest::Approx(0.01 * std::exp(row.beta)).epsilon(1e-9));
    }
    CHECK(r.conservative_pass);
    check_consistency(r);

    const auto s = sup_estimate_check(quadratic(), quadratic(0.1), lat, 4.0);
    CHECK(s.lhs == doctest::Approx(0.01 * std::exp(4.0)).epsilon(1e-9));
    CHECK_FALSE(s.approximate);
    CHECK(s.holds);
    const auto s0 = sup_estimate_check(quadratic(), quadratic(0.1), lat, 0.0);
    CHECK(s0.lhs == doctest::Approx(0.01).epsilon(1e-9));
}

TEST_CASE("driver perturbation") {
    const Lattice lat = small();
    GBsdeParams shifted = quadratic();
    shifted.f = [](double, std::span<const double>, std::span<const double>, std::span<const double>,
                   std::span<double> out) { out[0] = 0.1; };
    const auto r = apriori_check(quadratic(), shifted, lat, {1, 4, 16, 64, 256});
    for (const auto& row : r.rows)
        CHECK(row.f_term == doctest::Approx(0.01 * integral_exp(row.beta) / (r.mu * r.mu)).epsilon(1e-9));
    CHECK(r.beta0_conservative.has_value());
    check_consistency(r);
}

TEST_CASE("representation bound") {
    const Lattice lat = small();
    const auto zero = TerminalFunctional::scalar(0, [](std::span<const double>) { return 0.0; });
    const auto rz = representation_bound_check(zero, lat, {1, 8});
    for (const auto& row : rz.rows) CHECK(row.m2 + row.z2 + row.eta2 == 0.0);

    const auto rb = representation_bound_check(gtest::payoff(1, gtest::ident), lat, {1, 2, 4, 8, 16});
    CHECK(rb.pass);
    for (const auto& row : rb.rows) {
        CHECK(row.holds);
        CHECK(row.rhs == doctest::Approx(5.0 * std::exp(row.beta) * 4.0).epsilon(1e-6));
    }
    const auto rq = representation_bound_check(gtest::payoff(20, gtest::sq), lat, {1, 2, 4, 8, 16});
    CHECK(rq.pass);
    CHECK(rq.beta0.has_value());
}

TEST_CASE("cauchy sequences") {
    const Lattice lat = small();
    std::vector<TerminalFunctional> same(3, gtest::payoff(20, gtest::sq));
    const auto rs = cauchy_sequence_check(same, lat, 1.0);
    for (const auto& row : rs.rows) {
        CHECK(row.lhs == 0.0);
        CHECK(row.xi_distance == 0.0);
    }

    std::vector<TerminalFunctional> shifts;
    for (double n : {1.0, 2.0, 4.0})
        shifts.push_back(TerminalFunctional::scalar(1, [n](std::span<const double> x) { return x[0] + 1.0 / n; }));
    const auto rm = cauchy_sequence_check(shifts, lat, 1.0);
    CHECK(rm.pass);
    CHECK(rm.rows.size() == 3);

    std::vector<TerminalFunctional> trunc;
    for (double c : {1.0, 4.0, 16.0})
        trunc.push_back(TerminalFunctional::scalar(20, [c](std::span<const double> x) { return std::min(x[0] * x[0], c); }));
    const auto rt = cauchy_sequence_check(trunc, lat, 1.0);
    CHECK(rt.pass);
    for (const auto& row : rt.rows) CHECK(row.holds);
}
