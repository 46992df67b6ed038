/**
 * @file scenario.hpp
 * @brief Lattice engine for conditional sublinear expectations.
 *
 * A uniform state lattice for B on [0, T] and a backward induction that, at
 * every node, maximises the one-step conditional mean over the scenario grid
 * of the volatility box. The resulting field is the discrete analog of
 * E_t[xi] = sup_P E_P[xi | F_t]; the argmax indices form the worst-case policy.
 *
 * Transition law under a fixed sigma^2: per axis j the increment has mean 0 and
 * variance sigma_j^2 dt. It is represented on the grid by the symmetric
 * four-point stencil
 *
 *     +-k h, weight (1 - w)/2 each,    +-(k + 1) h, weight w/2 each,
 *
 * with k = floor(u / h), u = sigma_j sqrt(dt) and w chosen so the second
 * moment is exactly u^2. Axes combine by tensor product. When u is a multiple
 * of h this is the binomial step x +- u exactly.
 */
#pragma once

#include "gcalc/gtensor.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace gcalc {

class TimeGrid {
public:
    TimeGrid(double horizon, std::size_t steps);

    double horizon() const noexcept { return horizon_; }
    std::size_t steps() const noexcept { return steps_; }
    double dt() const noexcept { return horizon_ / static_cast<double>(steps_); }
    double t(std::size_t k) const noexcept {
        return k == steps_ ? horizon_ : horizon_ * static_cast<double>(k) / static_cast<double>(steps_);
    }
    /// Index of the grid time closest to t.
    std::size_t index_of(double t) const;

private:
    double horizon_;
    std::size_t steps_;
};

/**
 * Per-axis uniform grid of B values, symmetric about 0 with an odd number of
 * points so that 0 is a node. Nodes are enumerated with axis 0 most significant.
 */
class SpaceGrid {
public:
    SpaceGrid(std::vector<double> half_widths, std::size_t points);

    /**
     * Grid covering at least c_span * sigma_bar_max * sqrt(T) on each axis.
     *
     * With align set, the spacing on axis j is lower_j sqrt(dt) / m for the
     * largest integer m that keeps the requested coverage, so that steps under
     * the lower corner land on nodes. Throws ResolutionError when the requested
     * coverage needs a spacing wider than lower_j sqrt(dt).
     */
    static SpaceGrid fit(const VolatilityBox& box, const TimeGrid& time, std::size_t points,
                         double c_span = 6.0, bool align = true);

    std::size_t d() const noexcept { return half_widths_.size(); }
    std::size_t points() const noexcept { return points_; }
    std::size_t center() const noexcept { return (points_ - 1) / 2; }
    double half_width(std::size_t j) const { return half_widths_[j]; }
    double spacing(std::size_t j) const { return spacings_[j]; }
    double coord(std::size_t j, std::size_t i) const {
        return (static_cast<double>(i) - static_cast<double>(center())) * spacings_[j];
    }

    std::size_t node_count() const noexcept { return nodes_; }
    std::size_t axis_index(std::size_t node, std::size_t j) const;
    std::size_t stride(std::size_t j) const { return j + 1 == d() ? 1 : points_; }
    std::vector<double> state(std::size_t node) const;
    std::size_t origin() const;

private:
    std::vector<double> half_widths_;
    std::vector<double> spacings_;
    std::size_t points_;
    std::size_t nodes_;
};

/**
 * Terminal payoff xi = phi(B_T) or phi(B_T, B_{t_m}) with one monitoring time.
 * The payoff writes n outputs; monitored is empty for Markovian payoffs.
 */
struct TerminalFunctional {
    using Payoff = std::function<void(std::span<const double> x, std::span<const double> monitored,
                                      std::span<double> out)>;

    std::size_t n = 1;
    double lipschitz = 0.0;
    std::optional<std::size_t> monitor_step;
    Payoff payoff;

    bool monitored() const noexcept { return monitor_step.has_value(); }

    static TerminalFunctional scalar(double lipschitz, std::function<double(std::span<const double>)> f);
    static TerminalFunctional vector(std::size_t n, double lipschitz,
                                     std::function<void(std::span<const double>, std::span<double>)> f);
};

/// One axis of the transition stencil.
struct AxisStencil {
    std::size_t near = 0; ///< k: inner offsets are +-k nodes
    double w = 0.0;       ///< mass on the outer offsets +-(k + 1)
    double u = 0.0;       ///< sigma sqrt(dt)
};

class Lattice {
public:
    static constexpr std::size_t kMaxDim = 2;
    static constexpr std::size_t kMaxSteps = 400;
    static constexpr std::size_t kMaxPoints = 1025;

    Lattice(TimeGrid time, SpaceGrid space, VolatilityBox box);

    const TimeGrid& time() const noexcept { return time_; }
    const SpaceGrid& space() const noexcept { return space_; }
    const VolatilityBox& box() const noexcept { return box_; }
    std::size_t d() const noexcept { return space_.d(); }
    std::size_t nodes() const noexcept { return space_.node_count(); }
    std::size_t steps() const noexcept { return time_.steps(); }
    std::size_t origin() const { return space_.origin(); }

    std::size_t scenarios() const noexcept { return scenario_count_; }
    std::span<const double> scenario(std::size_t s) const {
        return std::span<const double>(sigma2_).subspan(s * d(), d());
    }
    const AxisStencil& stencil(std::size_t s, std::size_t j) const { return stencils_[s * d() + j]; }

    /// Stencil mean of a layer at one node under scenario s.
    double mean_at(std::span<const double> layer, std::size_t s, std::size_t node) const;
    /// True when the stencil of scenario s at node reaches past the grid edge.
    bool clamped(std::size_t node, std::size_t s) const;

    struct Child {
        std::vector<double> state;
        double weight;
    };
    /// The 2^d binomial children x +- sigma_j sqrt(dt) e_j with weight 2^-d each.
    std::vector<Child> children(std::size_t node, std::size_t s) const;

    /// Tensor cubic Lagrange interpolation of a layer at an arbitrary state, clamped to the span.
    double evaluate(std::span<const double> layer, std::span<const double> x) const;
    std::size_t nearest_node(std::span<const double> x) const;
    std::vector<double> state(std::size_t node) const { return space_.state(node); }

private:
    TimeGrid time_;
    SpaceGrid space_;
    VolatilityBox box_;
    std::size_t scenario_count_;
    std::vector<double> sigma2_;
    std::vector<AxisStencil> stencils_;
};

/// Running cost of one backward step, as absolute increments over [t_k, t_{k+1}):
/// base[c * nodes + node] + sum_j qv[(c * nodes + node) * d + j] * sigma2_j.
struct LayerCost {
    std::vector<double> base;
    std::vector<double> qv;
};
using RunningCost = std::function<void(std::size_t k, LayerCost& cost)>;

/**
 * values[k][c * nodes + node] for k = 0..N and policy[k][c * nodes + node]
 * (scenario index) for k = 0..N-1. Each component has its own maximisation.
 * For monitored payoffs only layers k <= monitor step are stored.
 */
struct ScenarioField {
    std::size_t n = 0;
    std::size_t nodes = 0;
    std::vector<std::vector<double>> values;
    std::vector<std::vector<std::uint16_t>> policy;

    double value(std::size_t k, std::size_t c, std::size_t node) const { return values[k][c * nodes + node]; }
    std::uint16_t argmax(std::size_t k, std::size_t c, std::size_t node) const {
        return policy[k][c * nodes + node];
    }
};

/// Relative tolerance under which two candidate values count as tied.
inline constexpr double kTieTolerance = 1e-13;

/// Backward induction from terminal[c * nodes + node] with an optional running cost.
ScenarioField backward_induction(const Lattice& lattice, std::size_t n, std::vector<double> terminal,
                                 const RunningCost& cost = {});

/// As backward_induction, starting from layer `start` instead of N; layers above start stay empty.
ScenarioField backward_induction_from(const Lattice& lattice, std::size_t n, std::size_t start,
                                      std::vector<double> terminal, const RunningCost& cost = {});

/// Terminal layer of a Markovian payoff; InputError on non-finite values.
std::vector<double> terminal_layer(const Lattice& lattice, const TerminalFunctional& xi);

ScenarioField conditional_expectation_field(const Lattice& lattice, const TerminalFunctional& xi,
                                            const RunningCost& cost = {});

/// Value at time 0 and B_0 = 0, one entry per component.
std::vector<double> sublinear_expectation(const Lattice& lattice, const TerminalFunctional& xi);

/// sup_P P(A) for an indicator payoff taking values in {0, 1}.
double capacity_estimate(const Lattice& lattice, const TerminalFunctional& indicator);

/// sigma^2 selection rule: writes the diagonal chosen at step k and state B_{t_k}.
using ControlRule = std::function<void(std::size_t k, std::span<const double> state, std::span<double> sigma2)>;

ControlRule constant_control(std::vector<double> sigma2);
/// Follows the argmax of a field at the nearest node.
ControlRule policy_control(const Lattice& lattice, const ScenarioField& field, std::size_t component = 0);

struct McEstimate {
    std::vector<double> mean;
    std::vector<double> std_error;
    std::size_t paths = 0;
};

/// Per-path seed derived from the root seed.
std::uint64_t path_seed(std::uint64_t root, std::size_t path);

/**
 * E_P[xi] under one control: B_{k+1} = B_k + eps sqrt(sigma2 dt) with independent
 * uniform signs per axis. InputError when paths is 0 or the control leaves the box.
 */
McEstimate control_monte_carlo(const TimeGrid& time, const VolatilityBox& box, const TerminalFunctional& xi,
                               const ControlRule& control, std::size_t paths, std::uint64_t seed);

} // namespace gcalc
