#include "gcalc/scenario.hpp"

#include "gcalc/errors.hpp"
#include "gcalc/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>
#include <string>

namespace gcalc {

// ---------------------------------------------------------------------------
// Grids

TimeGrid::TimeGrid(double horizon, std::size_t steps) : horizon_(horizon), steps_(steps) {
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw InputError("time horizon must be positive");
    if (steps < 1) throw InputError("time grid needs at least one step");
}

std::size_t TimeGrid::index_of(double t) const {
    const double k = std::round(t / horizon_ * static_cast<double>(steps_));
    if (!(k >= 0.0)) return 0;
    return std::min(steps_, static_cast<std::size_t>(k));
}

SpaceGrid::SpaceGrid(std::vector<double> half_widths, std::size_t points)
    : half_widths_(std::move(half_widths)), points_(points) {
    if (half_widths_.empty()) throw DimensionError("space grid needs at least one axis");
    if (points_ < 3 || points_ % 2 == 0)
        throw InputError("space grid points per axis must be odd and at least 3, got " + std::to_string(points_));
    const double half = static_cast<double>(center());
    for (double w : half_widths_) {
        if (!(w > 0.0) || !std::isfinite(w)) throw InputError("space grid half-width must be positive");
        spacings_.push_back(w / half);
    }
    nodes_ = 1;
    for (std::size_t j = 0; j < d(); ++j) nodes_ *= points_;
}

SpaceGrid SpaceGrid::fit(const VolatilityBox& box, const TimeGrid& time, std::size_t points, double c_span,
                         bool align) {
    if (!(c_span >= 6.0)) throw InputError("span factor must be at least 6");
    if (points < 3 || points % 2 == 0)
        throw InputError("space grid points per axis must be odd and at least 3, got " + std::to_string(points));
    const double half = static_cast<double>((points - 1) / 2);
    const double coverage = c_span * std::sqrt(box.upper_max()) * std::sqrt(time.horizon());
    const double h_req = coverage / half;
    std::vector<double> widths;
    for (std::size_t j = 0; j < box.d(); ++j) {
        const double h_max = std::sqrt(box.lower()[j] * time.dt());
        if (h_req > h_max * (1.0 + 1e-12)) {
            const double needed = std::ceil(coverage / h_max) * 2.0 + 1.0;
            throw ResolutionError("space grid too coarse on axis " + std::to_string(j) + ": spacing " +
                                  std::to_string(h_req) + " exceeds lower sigma * sqrt(dt) = " +
                                  std::to_string(h_max) + "; use at least " +
                                  std::to_string(static_cast<long long>(needed)) + " points");
        }
        double h = h_req;
        if (align) {
            const double m = std::floor(h_max / h_req + 1e-12);
            h = h_max / m;
        }
        widths.push_back(h * half);
    }
    return SpaceGrid(std::move(widths), points);
}

std::size_t SpaceGrid::axis_index(std::size_t node, std::size_t j) const {
    if (d() == 1) return node;
    return j == 0 ? node / points_ : node % points_;
}

std::vector<double> SpaceGrid::state(std::size_t node) const {
    std::vector<double> x(d());
    for (std::size_t j = 0; j < d(); ++j) x[j] = coord(j, axis_index(node, j));
    return x;
}

std::size_t SpaceGrid::origin() const {
    std::size_t node = 0;
    for (std::size_t j = 0; j < d(); ++j) node = node * points_ + center();
    return node;
}

// ---------------------------------------------------------------------------
// Terminal functionals

TerminalFunctional TerminalFunctional::scalar(double lipschitz, std::function<double(std::span<const double>)> f) {
    TerminalFunctional xi;
    xi.n = 1;
    xi.lipschitz = lipschitz;
    xi.payoff = [f = std::move(f)](std::span<const double> x, std::span<const double>, std::span<double> out) {
        out[0] = f(x);
    };
    return xi;
}

TerminalFunctional TerminalFunctional::vector(std::size_t n, double lipschitz,
                                              std::function<void(std::span<const double>, std::span<double>)> f) {
    TerminalFunctional xi;
    xi.n = n;
    xi.lipschitz = lipschitz;
    xi.payoff = [f = std::move(f)](std::span<const double> x, std::span<const double>, std::span<double> out) {
        f(x, out);
    };
    return xi;
}

// ---------------------------------------------------------------------------
// Lattice

Lattice::Lattice(TimeGrid time, SpaceGrid space, VolatilityBox box)
    : time_(time), space_(std::move(space)), box_(std::move(box)) {
    if (space_.d() != box_.d())
        throw DimensionError("space grid dimension " + std::to_string(space_.d()) + " does not match box dimension " +
                             std::to_string(box_.d()));
    if (d() > kMaxDim) throw InputError("lattice supports d <= 2");
    if (time_.steps() > kMaxSteps) throw InputError("lattice supports at most 400 time steps");
    if (space_.points() > kMaxPoints) throw InputError("lattice supports at most 1025 points per axis");
    scenario_count_ = box_.scenario_count();
    if (scenario_count_ > std::numeric_limits<std::uint16_t>::max())
        throw InputError("scenario grid too large");

    const double dt = time_.dt();
    for (std::size_t j = 0; j < d(); ++j) {
        const double h = space_.spacing(j);
        const double h_max = std::sqrt(box_.lower()[j] * dt);
        if (h > h_max * (1.0 + 1e-9))
            throw ResolutionError("space grid spacing " + std::to_string(h) + " on axis " + std::to_string(j) +
                                  " exceeds lower sigma * sqrt(dt) = " + std::to_string(h_max));
    }

    sigma2_.reserve(scenario_count_ * d());
    stencils_.reserve(scenario_count_ * d());
    for (std::size_t s = 0; s < scenario_count_; ++s) {
        const auto diag = box_.scenario(s);
        for (std::size_t j = 0; j < d(); ++j) {
            sigma2_.push_back(diag[j]);
            AxisStencil st;
            st.u = std::sqrt(diag[j] * dt);
            const double r = st.u / space_.spacing(j);
            const double k = std::max(1.0, std::floor(r + 1e-9));
            st.near = static_cast<std::size_t>(k);
            st.w = std::clamp((r * r - k * k) / ((k + 1.0) * (k + 1.0) - k * k), 0.0, 1.0);
            stencils_.push_back(st);
        }
    }
}

namespace {

struct AxisTaps {
    std::array<long, 4> offset;
    std::array<double, 4> weight;
};

AxisTaps taps(const AxisStencil& st) {
    const long k = static_cast<long>(st.near);
    return {{-k - 1, -k, k, k + 1}, {0.5 * st.w, 0.5 * (1.0 - st.w), 0.5 * (1.0 - st.w), 0.5 * st.w}};
}

inline std::size_t clamp_index(long i, std::size_t points) {
    if (i < 0) return 0;
    if (i >= static_cast<long>(points)) return points - 1;
    return static_cast<std::size_t>(i);
}

} // namespace

double Lattice::mean_at(std::span<const double> layer, std::size_t s, std::size_t node) const {
    const std::size_t p = space_.points();
    if (d() == 1) {
        const AxisTaps a = taps(stencil(s, 0));
        const long i = static_cast<long>(node);
        double v = 0.0;
        for (int q = 0; q < 4; ++q) v += a.weight[q] * layer[clamp_index(i + a.offset[q], p)];
        return v;
    }
    const AxisTaps a0 = taps(stencil(s, 0));
    const AxisTaps a1 = taps(stencil(s, 1));
    const long i0 = static_cast<long>(node / p);
    const long i1 = static_cast<long>(node % p);
    double v = 0.0;
    for (int q0 = 0; q0 < 4; ++q0) {
        const std::size_t row = clamp_index(i0 + a0.offset[q0], p) * p;
        double inner = 0.0;
        for (int q1 = 0; q1 < 4; ++q1) inner += a1.weight[q1] * layer[row + clamp_index(i1 + a1.offset[q1], p)];
        v += a0.weight[q0] * inner;
    }
    return v;
}

bool Lattice::clamped(std::size_t node, std::size_t s) const {
    const std::size_t p = space_.points();
    for (std::size_t j = 0; j < d(); ++j) {
        const AxisStencil& st = stencil(s, j);
        const std::size_t reach = st.near + (st.w > 0.0 ? 1 : 0);
        const std::size_t i = space_.axis_index(node, j);
        if (i < reach || i + reach > p - 1) return true;
    }
    return false;
}

std::vector<Lattice::Child> Lattice::children(std::size_t node, std::size_t s) const {
    const auto x = state(node);
    const std::size_t count = std::size_t{1} << d();
    std::vector<Child> out;
    out.reserve(count);
    for (std::size_t mask = 0; mask < count; ++mask) {
        Child c{x, 1.0 / static_cast<double>(count)};
        for (std::size_t j = 0; j < d(); ++j) c.state[j] += ((mask >> j) & 1U) ? stencil(s, j).u : -stencil(s, j).u;
        out.push_back(std::move(c));
    }
    return out;
}

namespace {

// Base index and four Lagrange weights on nodes base-1 .. base+2.
void cubic_taps(double x, double half_width, double h, std::size_t points, std::size_t& base,
                std::array<double, 4>& wt) {
    const double xc = std::clamp(x, -half_width, half_width);
    const double p = (xc + half_width) / h;
    long j = static_cast<long>(std::floor(p));
    j = std::clamp<long>(j, 1, static_cast<long>(points) - 3);
    const double t = p - static_cast<double>(j);
    base = static_cast<std::size_t>(j);
    wt[0] = -t * (t - 1.0) * (t - 2.0) / 6.0;
    wt[1] = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
    wt[2] = -(t + 1.0) * t * (t - 2.0) / 2.0;
    wt[3] = (t + 1.0) * t * (t - 1.0) / 6.0;
}

void linear_taps(double x, double half_width, double h, std::size_t points, std::size_t& base,
                 std::array<double, 4>& wt) {
    const double xc = std::clamp(x, -half_width, half_width);
    const double p = (xc + half_width) / h;
    long j = std::clamp<long>(static_cast<long>(std::floor(p)), 0, static_cast<long>(points) - 2);
    const double t = p - static_cast<double>(j);
    base = static_cast<std::size_t>(j) + 1;
    wt = {0.0, 1.0 - t, t, 0.0};
}

} // namespace

double Lattice::evaluate(std::span<const double> layer, std::span<const double> x) const {
    if (x.size() != d()) throw DimensionError("state dimension does not match lattice");
    const std::size_t p = space_.points();
    std::array<std::size_t, kMaxDim> base{};
    std::array<std::array<double, 4>, kMaxDim> wt{};
    for (std::size_t j = 0; j < d(); ++j) {
        if (p >= 4)
            cubic_taps(x[j], space_.half_width(j), space_.spacing(j), p, base[j], wt[j]);
        else
            linear_taps(x[j], space_.half_width(j), space_.spacing(j), p, base[j], wt[j]);
    }
    if (d() == 1) {
        double v = 0.0;
        for (int q = 0; q < 4; ++q)
            if (wt[0][q] != 0.0) v += wt[0][q] * layer[base[0] + q - 1];
        return v;
    }
    double v = 0.0;
    for (int q0 = 0; q0 < 4; ++q0) {
        if (wt[0][q0] == 0.0) continue;
        const std::size_t row = (base[0] + q0 - 1) * p;
        double inner = 0.0;
        for (int q1 = 0; q1 < 4; ++q1)
            if (wt[1][q1] != 0.0) inner += wt[1][q1] * layer[row + base[1] + q1 - 1];
        v += wt[0][q0] * inner;
    }
    return v;
}

std::size_t Lattice::nearest_node(std::span<const double> x) const {
    if (x.size() != d()) throw DimensionError("state dimension does not match lattice");
    const std::size_t p = space_.points();
    std::size_t node = 0;
    for (std::size_t j = 0; j < d(); ++j) {
        const long i = std::lround(x[j] / space_.spacing(j)) + static_cast<long>(space_.center());
        node = node * p + clamp_index(i, p);
    }
    return node;
}

// ---------------------------------------------------------------------------
// Backward induction

namespace {

void step_nodes(const Lattice& lat, std::size_t n, std::span<const double> next, const LayerCost* cost,
                std::span<double> cur, std::span<std::uint16_t> pol, std::size_t begin, std::size_t end) {
    const std::size_t nodes = lat.nodes();
    const std::size_t d = lat.d();
    const std::size_t scen = lat.scenarios();
    for (std::size_t node = begin; node < end; ++node) {
        for (std::size_t c = 0; c < n; ++c) {
            const std::size_t at = c * nodes + node;
            const auto layer = next.subspan(c * nodes, nodes);
            double best = -std::numeric_limits<double>::infinity();
            std::uint16_t arg = 0;
            for (std::size_t s = 0; s < scen; ++s) {
                double v = lat.mean_at(layer, s, node);
                if (cost) {
                    v += cost->base[at];
                    const auto sig = lat.scenario(s);
                    for (std::size_t j = 0; j < d; ++j) v += cost->qv[at * d + j] * sig[j];
                }
                if (s == 0 || v > best + kTieTolerance * std::max(1.0, std::abs(best))) {
                    best = v;
                    arg = static_cast<std::uint16_t>(s);
                }
            }
            if (!std::isfinite(best))
                throw InputError("non-finite conditional expectation at node " + std::to_string(node));
            cur[at] = best;
            pol[at] = arg;
        }
    }
}

} // namespace

ScenarioField backward_induction_from(const Lattice& lat, std::size_t n, std::size_t start,
                                      std::vector<double> terminal, const RunningCost& cost_fn) {
    if (start > lat.steps()) throw InputError("start layer beyond the time grid");
    const std::size_t nodes = lat.nodes();
    if (terminal.size() != n * nodes) throw DimensionError("terminal layer must hold n * nodes values");
    for (double v : terminal)
        if (!std::isfinite(v)) throw InputError("terminal payoff is not finite on the grid");

    ScenarioField field;
    field.n = n;
    field.nodes = nodes;
    field.values.resize(lat.steps() + 1);
    field.policy.resize(lat.steps());
    field.values[start] = std::move(terminal);

    LayerCost cost;
    for (std::size_t k = start; k-- > 0;) {
        const LayerCost* cp = nullptr;
        if (cost_fn) {
            cost.base.assign(n * nodes, 0.0);
            cost.qv.assign(n * nodes * lat.d(), 0.0);
            cost_fn(k, cost);
            if (cost.base.size() != n * nodes || cost.qv.size() != n * nodes * lat.d())
                throw DimensionError("running cost layer has the wrong size");
            cp = &cost;
        }
        std::vector<double> cur(n * nodes);
        std::vector<std::uint16_t> pol(n * nodes);
        const auto& next = field.values[k + 1];
        parallel_for(nodes, [&](std::size_t b, std::size_t e) { step_nodes(lat, n, next, cp, cur, pol, b, e); });
        field.values[k] = std::move(cur);
        field.policy[k] = std::move(pol);
    }
    return field;
}

ScenarioField backward_induction(const Lattice& lattice, std::size_t n, std::vector<double> terminal,
                                 const RunningCost& cost) {
    return backward_induction_from(lattice, n, lattice.steps(), std::move(terminal), cost);
}

std::vector<double> terminal_layer(const Lattice& lattice, const TerminalFunctional& xi) {
    if (!xi.payoff) throw InputError("terminal functional has no payoff");
    if (xi.n < 1) throw InputError("terminal functional needs n >= 1");
    const std::size_t nodes = lattice.nodes();
    std::vector<double> out(xi.n * nodes);
    std::vector<double> buf(xi.n);
    for (std::size_t node = 0; node < nodes; ++node) {
        const auto x = lattice.state(node);
        xi.payoff(x, {}, buf);
        for (std::size_t c = 0; c < xi.n; ++c) {
            if (!std::isfinite(buf[c])) throw InputError("terminal payoff is NaN or infinite on the grid");
            out[c * nodes + node] = buf[c];
        }
    }
    return out;
}

ScenarioField conditional_expectation_field(const Lattice& lattice, const TerminalFunctional& xi,
                                            const RunningCost& cost) {
    if (!xi.monitored()) return backward_induction(lattice, xi.n, terminal_layer(lattice, xi), cost);

    const std::size_t km = *xi.monitor_step;
    const std::size_t steps = lattice.steps();
    if (km < 1 || km > steps) throw InputError("monitoring step must lie in [1, N]");
    if (lattice.d() != 1) throw InputError("monitored payoffs are supported for d = 1 only");
    if (cost) throw InputError("running costs are not supported with monitored payoffs");
    if (!xi.payoff) throw InputError("terminal functional has no payoff");

    const std::size_t n = xi.n;
    const std::size_t nodes = lattice.nodes();
    std::vector<double> at_monitor(n * nodes);
    parallel_for(
        nodes,
        [&](std::size_t b, std::size_t e) {
            std::vector<double> next(n * nodes), cur(n * nodes), buf(n);
            std::vector<std::uint16_t> pol(n * nodes);
            for (std::size_t y = b; y < e; ++y) {
                const auto ym = lattice.state(y);
                for (std::size_t node = 0; node < nodes; ++node) {
                    const auto x = lattice.state(node);
                    xi.payoff(x, ym, buf);
                    for (std::size_t c = 0; c < n; ++c) {
                        if (!std::isfinite(buf[c])) throw InputError("terminal payoff is NaN or infinite on the grid");
                        next[c * nodes + node] = buf[c];
                    }
                }
                for (std::size_t k = steps; k-- > km;) {
                    step_nodes(lattice, n, next, nullptr, cur, pol, 0, nodes);
                    std::swap(next, cur);
                }
                for (std::size_t c = 0; c < n; ++c) at_monitor[c * nodes + y] = next[c * nodes + y];
            }
        },
        1);
    return backward_induction_from(lattice, n, km, std::move(at_monitor), {});
}

std::vector<double> sublinear_expectation(const Lattice& lattice, const TerminalFunctional& xi) {
    const ScenarioField field = conditional_expectation_field(lattice, xi);
    std::vector<double> out(xi.n);
    for (std::size_t c = 0; c < xi.n; ++c) out[c] = field.value(0, c, lattice.origin());
    return out;
}

double capacity_estimate(const Lattice& lattice, const TerminalFunctional& indicator) {
    if (indicator.n != 1) throw InputError("an event indicator has one component");
    const std::size_t nodes = lattice.nodes();
    std::vector<double> buf(1);
    const auto check = [&](std::span<const double> x, std::span<const double> m) {
        indicator.payoff(x, m, buf);
        if (buf[0] != 0.0 && buf[0] != 1.0) throw InputError("event indicator must take values 0 or 1");
    };
    for (std::size_t a = 0; a < nodes; ++a) {
        const auto x = lattice.state(a);
        if (!indicator.monitored()) {
            check(x, {});
            continue;
        }
        for (std::size_t b = 0; b < nodes; ++b) check(x, lattice.state(b));
    }
    return std::clamp(sublinear_expectation(lattice, indicator)[0], 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Monte Carlo under a fixed control

ControlRule constant_control(std::vector<double> sigma2) {
    return [sigma2 = std::move(sigma2)](std::size_t, std::span<const double>, std::span<double> out) {
        std::copy(sigma2.begin(), sigma2.end(), out.begin());
    };
}

ControlRule policy_control(const Lattice& lattice, const ScenarioField& field, std::size_t component) {
    if (component >= field.n) throw InputError("policy component out of range");
    return [&lattice, &field, component](std::size_t k, std::span<const double> x, std::span<double> out) {
        if (k >= field.policy.size() || field.policy[k].empty())
            throw InputError("field holds no policy at step " + std::to_string(k));
        const auto sig = lattice.scenario(field.argmax(k, component, lattice.nearest_node(x)));
        std::copy(sig.begin(), sig.end(), out.begin());
    };
}

std::uint64_t path_seed(std::uint64_t root, std::size_t path) {
    return splitmix64(root ^ splitmix64(static_cast<std::uint64_t>(path) + 0x632BE59BD9B4E019ULL));
}

McEstimate control_monte_carlo(const TimeGrid& time, const VolatilityBox& box, const TerminalFunctional& xi,
                               const ControlRule& control, std::size_t paths, std::uint64_t seed) {
    if (paths == 0) throw InputError("Monte Carlo needs at least one path");
    if (!xi.payoff || !control) throw InputError("Monte Carlo needs a payoff and a control");
    const std::size_t steps = time.steps();
    if (xi.monitored() && (*xi.monitor_step < 1 || *xi.monitor_step > steps))
        throw InputError("monitoring step must lie in [1, N]");
    const std::size_t d = box.d();
    const std::size_t n = xi.n;
    const double dt = time.dt();
    std::vector<double> results(paths * n);

    parallel_for(
        paths,
        [&](std::size_t b, std::size_t e) {
            std::vector<double> x(d), m(d), sig(d), out(n);
            for (std::size_t p = b; p < e; ++p) {
                std::mt19937_64 rng(path_seed(seed, p));
                std::fill(x.begin(), x.end(), 0.0);
                for (std::size_t k = 0; k < steps; ++k) {
                    control(k, x, sig);
                    if (!box.contains(sig, 1e-12))
                        throw InputError("control left the volatility box at step " + std::to_string(k));
                    for (std::size_t j = 0; j < d; ++j) {
                        const double u = std::sqrt(sig[j] * dt);
                        x[j] += (rng() >> 63) ? u : -u;
                    }
                    if (xi.monitored() && k + 1 == *xi.monitor_step) m = x;
                }
                xi.payoff(x, xi.monitored() ? std::span<const double>(m) : std::span<const double>{}, out);
                for (std::size_t c = 0; c < n; ++c) results[p * n + c] = out[c];
            }
        },
        64);

    McEstimate est;
    est.paths = paths;
    est.mean.assign(n, 0.0);
    est.std_error.assign(n, 0.0);
    for (std::size_t c = 0; c < n; ++c) {
        double sum = 0.0;
        for (std::size_t p = 0; p < paths; ++p) sum += results[p * n + c];
        const double mean = sum / static_cast<double>(paths);
        double ss = 0.0;
        for (std::size_t p = 0; p < paths; ++p) {
            const double r = results[p * n + c] - mean;
            ss += r * r;
        }
        est.mean[c] = mean;
        if (paths > 1) est.std_error[c] = std::sqrt(ss / static_cast<double>(paths - 1) / static_cast<double>(paths));
    }
    return est;
}

} // namespace gcalc
