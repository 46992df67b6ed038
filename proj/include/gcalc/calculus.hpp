/**
 * @file calculus.hpp
 * @brief Path-level calculus: simulated (B, <B>) pairs, discrete stochastic and
 * quadratic-variation integrals, weighted M_G^{2,beta} norms and the
 * ratio-decay construction for step processes.
 */
#pragma once

#include "gcalc/gtensor.hpp"
#include "gcalc/scenario.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace gcalc {

/// B[k], qv[k] (diagonal of <B>_{t_k}) for k = 0..N and control[k] for k = 0..N-1.
struct PathBundle {
    TimeGrid grid;
    std::size_t d = 0;
    std::vector<std::vector<double>> B;
    std::vector<std::vector<double>> qv;
    std::vector<std::vector<double>> control;
};

/// Same sign sequence as control_monte_carlo for a given per-path seed.
PathBundle simulate_path(const TimeGrid& grid, const VolatilityBox& box, const ControlRule& control,
                         std::uint64_t seed);

/// sum_k Z[k]^T (B[k+1] - B[k]) with Z[k] a d x n matrix.
std::vector<double> ito_integral(const std::vector<Matrix>& z, const PathBundle& path);

/// sum_k eta[k] : (qv[k+1] - qv[k]).
std::vector<double> qv_integral(const std::vector<DiagTensor>& eta, const PathBundle& path);

struct Lemma31Report {
    std::vector<double> lhs;            ///< int_t^s eta : d<B>, per component
    std::vector<double> lower_sandwich; ///< int eta^+ : lower - eta^- : upper dr
    std::vector<double> upper_sandwich; ///< int eta^+ : upper - eta^- : lower dr
    double lhs_norm = 0.0;
    double abs_bound = 0.0; ///< K int |eta| dr
    double k_used = 0.0;    ///< sqrt(d) * upper_max
    bool abs_holds = true;
    bool sandwich_holds = true;
};

/// Both inequalities of the quadratic-variation lemma on steps [k_t, k_s).
Lemma31Report lemma31_bounds(const std::vector<DiagTensor>& eta, const PathBundle& path, const VolatilityBox& box,
                             std::size_t k_t, std::size_t k_s);

/// Largest beta * T accepted by the weighted norms.
inline constexpr double kMaxBetaT = 700.0;

/// int_a^b e^{beta s} ds (b - a when beta = 0).
double exp_weight(double beta, double a, double b);

/// |process|^2 at (step k, node).
using SquaredProcess = std::function<double(std::size_t k, std::size_t node)>;

/**
 * E[sum_{k >= k_t} w_k sq(k, B_{t_k})] with w_k = int_{t_k}^{t_{k+1}} e^{beta s} ds,
 * evaluated by the lattice engine. OverflowError when beta * T > 700.
 */
double weighted_expectation(const Lattice& lattice, const SquaredProcess& sq, double beta, double t = 0.0);

/// sqrt of weighted_expectation: the discrete M_G^{2,beta} norm on [t, T].
double weighted_norm(const Lattice& lattice, const SquaredProcess& sq, double beta, double t = 0.0);

/// Sublinear expectation at the origin of a function of B_{t_k} given on the nodes.
double layer_expectation(const Lattice& lattice, std::size_t k, std::vector<double> layer);

/// Piecewise-constant process: value values[i](B_{s_i}) on [s_i, s_{i+1}), breaks are step indices.
struct StepProcess {
    std::vector<std::size_t> breaks;
    std::vector<std::function<double(std::span<const double>)>> values;
};

struct RatioDecayEntry {
    double beta = 0.0;
    double numerator = 0.0;   ///< E int e^{beta (s - T)} theta^2 ds
    double denominator = 0.0; ///< beta E int e^{beta (s - T)} zeta^2 ds
    double ratio = 0.0;
};

struct RatioDecayStep {
    std::size_t n = 0;
    double c = 0.0;    ///< C_n = max_i E[theta_{s_i}^2]
    double d = 0.0;    ///< D_n = -max_i E[-(zeta^n_{s_i})^2]
    double beta = 0.0; ///< n C_n / D_n
    double b = 0.0;    ///< B_n at beta(n)
    double t = 0.0;    ///< T_n
    double l = 0.0;    ///< l_n
    double m = 0.0;    ///< m_n
    bool holds = true; ///< B_n <= 1/n
};

struct RatioDecayReport {
    std::vector<RatioDecayEntry> entries;
    std::vector<RatioDecayStep> steps;
};

double beta_of(std::size_t n, double c, double d);

/**
 * Ratio decay for step processes theta, zeta on [s_0, T].
 *
 * (zeta^n)^2 = zeta^2 + 1/n when regularize is set, else zeta^2; theta^n = theta.
 * Ratios are computed with weights scaled by e^{-beta T}, so any beta is accepted.
 * DegenerateDenominatorError when some D_n <= 0.
 */
RatioDecayReport ratio_decay_report(const Lattice& lattice, const StepProcess& theta, const StepProcess& zeta,
                                    std::span<const double> betas, std::size_t n_max = 20, bool regularize = true);

} // namespace gcalc
