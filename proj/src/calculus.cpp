#include "gcalc/calculus.hpp"

#include "gcalc/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

namespace gcalc {

PathBundle simulate_path(const TimeGrid& grid, const VolatilityBox& box, const ControlRule& control,
                         std::uint64_t seed) {
    if (!control) throw InputError("simulate_path needs a control rule");
    const std::size_t d = box.d();
    const std::size_t steps = grid.steps();
    const double dt = grid.dt();
    PathBundle path{grid, d, {}, {}, {}};
    path.B.assign(steps + 1, std::vector<double>(d, 0.0));
    path.qv.assign(steps + 1, std::vector<double>(d, 0.0));
    path.control.assign(steps, std::vector<double>(d, 0.0));
    std::mt19937_64 rng(seed);
    for (std::size_t k = 0; k < steps; ++k) {
        auto& sig = path.control[k];
        control(k, path.B[k], sig);
        if (!box.contains(sig, 1e-12))
            throw InputError("control left the volatility box at step " + std::to_string(k));
        for (std::size_t j = 0; j < d; ++j) {
            const double u = std::sqrt(sig[j] * dt);
            path.B[k + 1][j] = path.B[k][j] + ((rng() >> 63) ? u : -u);
            path.qv[k + 1][j] = path.qv[k][j] + sig[j] * dt;
        }
    }
    return path;
}

std::vector<double> ito_integral(const std::vector<Matrix>& z, const PathBundle& path) {
    if (z.size() != path.control.size())
        throw DimensionError("integrand has " + std::to_string(z.size()) + " steps, path has " +
                             std::to_string(path.control.size()));
    if (z.empty()) return {};
    const std::size_t n = z.front().cols();
    std::vector<double> out(n, 0.0);
    for (std::size_t k = 0; k < z.size(); ++k) {
        if (z[k].rows() != path.d || z[k].cols() != n) throw DimensionError("integrand must be d x n at every step");
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < path.d; ++j) out[i] += z[k](j, i) * (path.B[k + 1][j] - path.B[k][j]);
    }
    return out;
}

std::vector<double> qv_integral(const std::vector<DiagTensor>& eta, const PathBundle& path) {
    if (eta.size() != path.control.size())
        throw DimensionError("integrand has " + std::to_string(eta.size()) + " steps, path has " +
                             std::to_string(path.control.size()));
    if (eta.empty()) return {};
    const std::size_t n = eta.front().n();
    std::vector<double> out(n, 0.0);
    for (std::size_t k = 0; k < eta.size(); ++k) {
        if (eta[k].d() != path.d || eta[k].n() != n) throw DimensionError("integrand must be n x d x d at every step");
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < path.d; ++j) out[i] += eta[k].entry(i, j) * (path.qv[k + 1][j] - path.qv[k][j]);
    }
    return out;
}

Lemma31Report lemma31_bounds(const std::vector<DiagTensor>& eta, const PathBundle& path, const VolatilityBox& box,
                             std::size_t k_t, std::size_t k_s) {
    if (k_t > k_s || k_s > path.control.size()) throw InputError("need 0 <= t <= s <= T on the grid");
    if (eta.size() != path.control.size()) throw DimensionError("integrand length does not match path");
    if (box.d() != path.d) throw DimensionError("box dimension does not match path");
    const std::size_t n = eta.empty() ? 0 : eta.front().n();
    const double dt = path.grid.dt();
    Lemma31Report r;
    r.k_used = std::sqrt(static_cast<double>(path.d)) * box.upper_max();
    r.lhs.assign(n, 0.0);
    r.lower_sandwich.assign(n, 0.0);
    r.upper_sandwich.assign(n, 0.0);
    for (std::size_t k = k_t; k < k_s; ++k) {
        r.abs_bound += r.k_used * eta[k].norm() * dt;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < path.d; ++j) {
                const double e = eta[k].entry(i, j);
                const double pos = std::max(e, 0.0);
                const double neg = std::max(-e, 0.0);
                r.lhs[i] += e * (path.qv[k + 1][j] - path.qv[k][j]);
                r.lower_sandwich[i] += (pos * box.lower()[j] - neg * box.upper()[j]) * dt;
                r.upper_sandwich[i] += (pos * box.upper()[j] - neg * box.lower()[j]) * dt;
            }
    }
    double sq = 0.0;
    for (double v : r.lhs) sq += v * v;
    r.lhs_norm = std::sqrt(sq);
    const auto slack = [](double a, double b) { return 1e-12 * (1.0 + std::abs(a) + std::abs(b)); };
    r.abs_holds = r.lhs_norm <= r.abs_bound + slack(r.lhs_norm, r.abs_bound);
    for (std::size_t i = 0; i < n; ++i) {
        if (r.lower_sandwich[i] > r.lhs[i] + slack(r.lower_sandwich[i], r.lhs[i])) r.sandwich_holds = false;
        if (r.lhs[i] > r.upper_sandwich[i] + slack(r.lhs[i], r.upper_sandwich[i])) r.sandwich_holds = false;
    }
    return r;
}

double exp_weight(double beta, double a, double b) {
    if (beta == 0.0) return b - a;
    return std::exp(beta * a) * std::expm1(beta * (b - a)) / beta;
}

namespace {

void check_beta(const Lattice& lattice, double beta, double t) {
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw InputError("beta must be nonnegative");
    if (beta * lattice.time().horizon() > kMaxBetaT)
        throw OverflowError("beta * T = " + std::to_string(beta * lattice.time().horizon()) +
                            " exceeds 700; the weight e^{beta T} leaves the double range");
    if (t < 0.0 || t > lattice.time().horizon()) throw InputError("window start must lie in [0, T]");
}

} // namespace

double weighted_expectation(const Lattice& lattice, const SquaredProcess& sq, double beta, double t) {
    check_beta(lattice, beta, t);
    const TimeGrid& tg = lattice.time();
    const std::size_t kt = tg.index_of(t);
    const std::size_t nodes = lattice.nodes();
    const RunningCost cost = [&](std::size_t k, LayerCost& c) {
        if (k < kt) return;
        const double w = exp_weight(beta, tg.t(k), tg.t(k + 1));
        for (std::size_t node = 0; node < nodes; ++node) {
            const double v = sq(k, node);
            if (!std::isfinite(v) || v < 0.0)
                throw InputError("squared process must be finite and nonnegative at step " + std::to_string(k));
            c.base[node] = w * v;
        }
    };
    const ScenarioField f = backward_induction(lattice, 1, std::vector<double>(nodes, 0.0), cost);
    return std::max(0.0, f.value(0, 0, lattice.origin()));
}

double weighted_norm(const Lattice& lattice, const SquaredProcess& sq, double beta, double t) {
    return std::sqrt(weighted_expectation(lattice, sq, beta, t));
}

double layer_expectation(const Lattice& lattice, std::size_t k, std::vector<double> layer) {
    const ScenarioField f = backward_induction_from(lattice, 1, k, std::move(layer));
    return f.value(0, 0, lattice.origin());
}

// ---------------------------------------------------------------------------
// Ratio decay

double beta_of(std::size_t n, double c, double d) {
    if (!(d > 0.0)) throw DegenerateDenominatorError("D_n must be positive");
    return static_cast<double>(n) * c / d;
}

namespace {

void check_step_process(const StepProcess& p, std::size_t steps, const char* name) {
    if (p.breaks.size() < 2 || p.values.size() + 1 != p.breaks.size())
        throw InputError(std::string(name) + ": need M + 1 breaks and M values");
    for (std::size_t i = 0; i + 1 < p.breaks.size(); ++i)
        if (p.breaks[i] >= p.breaks[i + 1]) throw InputError(std::string(name) + ": breaks must increase");
    if (p.breaks.back() != steps) throw InputError(std::string(name) + ": last break must be T");
}

std::vector<double> squared_layer(const Lattice& lat, const std::function<double(std::span<const double>)>& f,
                                  double add) {
    std::vector<double> out(lat.nodes());
    for (std::size_t node = 0; node < lat.nodes(); ++node) {
        const double v = f(lat.state(node));
        if (!std::isfinite(v)) throw InputError("step process value is not finite");
        out[node] = v * v + add;
    }
    return out;
}

// E[sum_i (p_i(B_{s_i})^2 + add) int_{s_i}^{s_{i+1}} e^{beta (s - T)} ds]
double scaled_integral(const Lattice& lat, const StepProcess& p, double add, double beta) {
    const TimeGrid& tg = lat.time();
    const double horizon = tg.horizon();
    std::vector<std::vector<double>> layers;
    for (const auto& f : p.values) layers.push_back(squared_layer(lat, f, add));
    const RunningCost cost = [&](std::size_t k, LayerCost& c) {
        const auto it = std::find(p.breaks.begin(), p.breaks.end() - 1, k);
        if (it == p.breaks.end() - 1) return;
        const std::size_t i = static_cast<std::size_t>(it - p.breaks.begin());
        const double a = tg.t(p.breaks[i]) - horizon;
        const double b = tg.t(p.breaks[i + 1]) - horizon;
        const double w = exp_weight(beta, a, b);
        for (std::size_t node = 0; node < lat.nodes(); ++node) c.base[node] = w * layers[i][node];
    };
    const ScenarioField f = backward_induction(lat, 1, std::vector<double>(lat.nodes(), 0.0), cost);
    return f.value(0, 0, lat.origin());
}

} // namespace

RatioDecayReport ratio_decay_report(const Lattice& lattice, const StepProcess& theta, const StepProcess& zeta,
                                    std::span<const double> betas, std::size_t n_max, bool regularize) {
    check_step_process(theta, lattice.steps(), "theta");
    check_step_process(zeta, lattice.steps(), "zeta");
    if (theta.breaks.front() != zeta.breaks.front()) throw InputError("theta and zeta must start at the same time");

    double c = 0.0;
    for (std::size_t i = 0; i < theta.values.size(); ++i)
        c = std::max(c, layer_expectation(lattice, theta.breaks[i], squared_layer(lattice, theta.values[i], 0.0)));
    double lower_zeta = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < zeta.values.size(); ++i) {
        auto neg = squared_layer(lattice, zeta.values[i], 0.0);
        for (double& v : neg) v = -v;
        lower_zeta = std::min(lower_zeta, -layer_expectation(lattice, zeta.breaks[i], std::move(neg)));
    }

    RatioDecayReport report;
    for (std::size_t n = 1; n <= n_max; ++n) {
        RatioDecayStep row;
        row.n = n;
        row.c = c;
        row.d = lower_zeta + (regularize ? 1.0 / static_cast<double>(n) : 0.0);
        if (!(row.d > 0.0))
            throw DegenerateDenominatorError("D_" + std::to_string(n) + " = " + std::to_string(row.d) +
                                             " is not positive");
        if (c == 0.0) {
            report.steps.push_back(row);
            continue;
        }
        row.beta = beta_of(n, c, row.d);
        const double add = regularize ? 1.0 / static_cast<double>(n) : 0.0;
        const double th = scaled_integral(lattice, theta, 0.0, row.beta);
        const double zn = scaled_integral(lattice, zeta, add, row.beta);
        const double z0 = scaled_integral(lattice, zeta, 0.0, row.beta);
        row.b = th / (row.beta * zn);
        row.t = th / (row.beta * z0);
        row.l = 1.0;
        row.m = zn / z0;
        row.holds = row.b <= (1.0 + 1e-12) / static_cast<double>(n);
        report.steps.push_back(row);
    }

    for (double beta : betas) {
        if (!(beta > 0.0) || !std::isfinite(beta)) throw InputError("ratio betas must be positive");
        RatioDecayEntry e;
        e.beta = beta;
        e.numerator = scaled_integral(lattice, theta, 0.0, beta);
        e.denominator = beta * scaled_integral(lattice, zeta, 0.0, beta);
        e.ratio = e.numerator / e.denominator;
        report.entries.push_back(e);
    }
    return report;
}

} // namespace gcalc
