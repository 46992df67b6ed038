// Small builders shared by the unit tests.
#pragma once

#include "gcalc/scenario.hpp"
#include "gcalc/solver.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace gtest {

inline gcalc::Lattice lattice(std::vector<double> lower, std::vector<double> upper, double T, std::size_t N,
                              std::size_t points, std::size_t grid = 5, double span = 6.0) {
    gcalc::VolatilityBox box(std::move(lower), std::move(upper), grid);
    gcalc::TimeGrid tg(T, N);
    gcalc::SpaceGrid sg = gcalc::SpaceGrid::fit(box, tg, points, span);
    return gcalc::Lattice(tg, sg, box);
}

inline gcalc::TerminalFunctional payoff(double lip, double (*f)(double)) {
    return gcalc::TerminalFunctional::scalar(lip, [f](std::span<const double> x) {
        double s = 0.0;
        for (double v : x) s += v;
        return f(s);
    });
}

inline double sq(double x) { return x * x; }
inline double ident(double x) { return x; }
inline double neg_sq(double x) { return -x * x; }
inline double absval(double x) { return std::abs(x); }

/// Nodes whose coordinates all lie within frac of the half-width.
inline bool central(const gcalc::Lattice& lat, std::size_t node, double frac = 0.5) {
    const auto x = lat.state(node);
    for (std::size_t j = 0; j < x.size(); ++j)
        if (std::abs(x[j]) > frac * lat.space().half_width(j) + 1e-12) return false;
    return true;
}

} // namespace gtest
