#include "gcalc/solver.hpp"

#include "gcalc/calculus.hpp"
#include "gcalc/errors.hpp"
#include "gcalc/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <string>
#include <tuple>

namespace gcalc {

namespace {

struct AxisDiff {
    double z;
    double eta;
    bool one_sided;
};

// First and second difference of a layer along axis j with offset u around x.
AxisDiff axis_diff(const Lattice& lat, std::span<const double> layer, std::span<const double> x, double y0,
                   std::size_t j, double u) {
    std::array<double, Lattice::kMaxDim> p{};
    const std::size_t d = x.size();
    const auto at = [&](double off) {
        std::copy(x.begin(), x.end(), p.begin());
        p[j] = x[j] + off;
        return lat.evaluate(layer, std::span<const double>(p.data(), d));
    };
    const double hw = lat.space().half_width(j);
    const double edge = hw * (1.0 + 1e-12);
    if (x[j] + u > edge) {
        const double y1 = at(-u);
        const double y2 = at(-2.0 * u);
        return {(y0 - y1) / u, (y0 - 2.0 * y1 + y2) / (u * u), true};
    }
    if (x[j] - u < -edge) {
        const double y1 = at(u);
        const double y2 = at(2.0 * u);
        return {(y1 - y0) / u, (y0 - 2.0 * y1 + y2) / (u * u), true};
    }
    const double yp = at(u);
    const double ym = at(-u);
    return {(yp - ym) / (2.0 * u), (yp - 2.0 * y0 + ym) / (u * u), false};
}

std::string driver_context(const char* name, double t, std::span<const double> y, std::span<const double> z,
                           std::span<const double> eta) {
    std::string s = std::string(name) + " returned a non-finite value at t=";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", t);
    s += buf;
    const auto list = [&](const char* label, std::span<const double> v) {
        s += std::string(" ") + label + "=[";
        for (std::size_t i = 0; i < v.size(); ++i) {
            std::snprintf(buf, sizeof buf, i ? ",%.6g" : "%.6g", v[i]);
            s += buf;
        }
        s += "]";
    };
    list("y", y);
    list("z", z);
    list("eta", eta);
    return s;
}

void call_driver(const Driver& drv, const char* name, double t, std::span<const double> y,
                 std::span<const double> z, std::span<const double> eta, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    if (!drv) return;
    drv(t, y, z, eta, out);
    for (double v : out)
        if (!std::isfinite(v)) throw DriverError(driver_context(name, t, y, z, eta));
}

void check_shape(const BsdeSolution& s, const Lattice& lat, std::size_t n, const char* what) {
    if (s.n != n || s.d != lat.d() || s.nodes != lat.nodes() || s.steps != lat.steps() ||
        s.Y.size() != lat.steps() + 1 || s.Z.size() != lat.steps() || s.eta.size() != lat.steps())
        throw DimensionError(std::string(what) + " does not match the lattice");
}

void check_params(const GBsdeParams& params) {
    if (!params.xi.payoff) throw InputError("terminal functional has no payoff");
    if (params.xi.monitored()) throw InputError("the G-BSDE solver takes Markovian terminal payoffs only");
    if (!(params.lipschitz >= 0.0) || !std::isfinite(params.lipschitz))
        throw InputError("driver Lipschitz constant must be finite and nonnegative");
}

double sq_sum(const std::vector<double>& a, const std::vector<double>& b, std::size_t planes, std::size_t nodes,
              std::size_t node) {
    double s = 0.0;
    for (std::size_t p = 0; p < planes; ++p) {
        const double v = a[p * nodes + node] - b[p * nodes + node];
        s += v * v;
    }
    return s;
}

} // namespace

double BsdeSolution::min_k() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& layer : K)
        for (double v : layer) m = std::min(m, v);
    return K.empty() ? 0.0 : m;
}

BsdeSolution BsdeSolution::zero(const Lattice& lattice, std::size_t n) {
    BsdeSolution s;
    s.n = n;
    s.d = lattice.d();
    s.nodes = lattice.nodes();
    s.steps = lattice.steps();
    s.Y.assign(s.steps + 1, std::vector<double>(n * s.nodes, 0.0));
    s.Z.assign(s.steps, std::vector<double>(n * s.d * s.nodes, 0.0));
    s.eta.assign(s.steps, std::vector<double>(n * s.d * s.nodes, 0.0));
    s.K.assign(s.steps, std::vector<double>(n * s.nodes, 0.0));
    s.policy.assign(s.steps, std::vector<std::uint16_t>(n * s.nodes, 0));
    s.boundary.assign(s.nodes, 0);
    return s;
}

DriverFields evaluate_drivers(const GBsdeParams& params, const Lattice& lattice, const BsdeSolution& at) {
    const std::size_t n = params.xi.n;
    check_shape(at, lattice, n, "driver input");
    const std::size_t d = lattice.d();
    const std::size_t nodes = lattice.nodes();
    const std::size_t steps = lattice.steps();
    DriverFields out;
    out.f.assign(steps, std::vector<double>(n * nodes, 0.0));
    out.g.assign(steps, std::vector<double>(n * d * nodes, 0.0));
    if (!params.f && !params.g) return out;

    for (std::size_t k = 0; k < steps; ++k) {
        const double t = lattice.time().t(k);
        parallel_for(nodes, [&](std::size_t b, std::size_t e) {
            std::vector<double> y(n), z(n * d), eta(n * d), fo(n), go(n * d);
            for (std::size_t node = b; node < e; ++node) {
                for (std::size_t c = 0; c < n; ++c) y[c] = at.Y[k][c * nodes + node];
                for (std::size_t p = 0; p < n * d; ++p) {
                    z[p] = at.Z[k][p * nodes + node];
                    eta[p] = at.eta[k][p * nodes + node];
                }
                call_driver(params.f, "f", t, y, z, eta, fo);
                call_driver(params.g, "g", t, y, z, eta, go);
                for (std::size_t c = 0; c < n; ++c) out.f[k][c * nodes + node] = fo[c];
                for (std::size_t p = 0; p < n * d; ++p) out.g[k][p * nodes + node] = go[p];
            }
        });
    }
    return out;
}

BsdeSolution picard_step(const BsdeSolution& input, const GBsdeParams& params, const Lattice& lattice,
                         DriverFields* used) {
    check_params(params);
    const std::size_t n = params.xi.n;
    const std::size_t d = lattice.d();
    const std::size_t nodes = lattice.nodes();
    const std::size_t steps = lattice.steps();
    const double dt = lattice.time().dt();

    DriverFields drv = evaluate_drivers(params, lattice, input);
    const bool has_cost = static_cast<bool>(params.f) || static_cast<bool>(params.g);
    RunningCost cost;
    if (has_cost) {
        cost = [&](std::size_t k, LayerCost& c) {
            for (std::size_t i = 0; i < n * nodes; ++i) c.base[i] = drv.f[k][i] * dt;
            for (std::size_t cc = 0; cc < n; ++cc)
                for (std::size_t node = 0; node < nodes; ++node)
                    for (std::size_t j = 0; j < d; ++j)
                        c.qv[(cc * nodes + node) * d + j] = drv.g[k][(cc * d + j) * nodes + node] * dt;
        };
    }
    ScenarioField field = backward_induction(lattice, n, terminal_layer(lattice, params.xi), cost);

    BsdeSolution sol = BsdeSolution::zero(lattice, n);
    sol.Y = std::move(field.values);
    sol.policy = std::move(field.policy);
    const auto lower = lattice.box().lower();
    const auto upper = lattice.box().upper();

    for (std::size_t k = 0; k < steps; ++k) {
        const std::span<const double> next(sol.Y[k + 1]);
        parallel_for(nodes, [&](std::size_t b, std::size_t e) {
            std::array<double, Lattice::kMaxDim> eta_c{};
            for (std::size_t node = b; node < e; ++node) {
                const auto x = lattice.state(node);
                for (std::size_t c = 0; c < n; ++c) {
                    const auto sig = lattice.scenario(sol.policy[k][c * nodes + node]);
                    const auto layer = next.subspan(c * nodes, nodes);
                    const double y0 = layer[node];
                    double quad = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double u = std::sqrt(sig[j] * dt);
                        const AxisDiff df = axis_diff(lattice, layer, x, y0, j, u);
                        if (df.one_sided) sol.boundary[node] = 1;
                        const std::size_t p = (c * d + j) * nodes + node;
                        sol.Z[k][p] = df.z;
                        eta_c[j] = df.eta + 2.0 * drv.g[k][p];
                        sol.eta[k][p] = eta_c[j];
                        quad += eta_c[j] * sig[j];
                    }
                    const std::span<const double> ec(eta_c.data(), d);
                    sol.K[k][c * nodes + node] = (g_block(ec, lower, upper) - 0.5 * quad) * dt;
                }
            }
        });
    }
    sol.boundary_nodes = static_cast<std::size_t>(std::count(sol.boundary.begin(), sol.boundary.end(), 1));
    if (used) *used = std::move(drv);
    return sol;
}

BsdeSolution represent_martingale(const TerminalFunctional& xi, const Lattice& lattice) {
    GBsdeParams p;
    p.xi = xi;
    return picard_step(BsdeSolution::zero(lattice, xi.n), p, lattice);
}

// ---------------------------------------------------------------------------
// Estimates

double EstimateTerms::bracket(double mu, double nu, double upper_max) const {
    return terminal + f2 / (mu * mu) + upper_max * g2 / (nu * nu);
}

EstimateTerms estimate_terms(const Lattice& lattice, const BsdeSolution& s1, const DriverFields& d1,
                             const BsdeSolution& s2, const DriverFields& d2, double beta) {
    const std::size_t n = s1.n;
    check_shape(s1, lattice, n, "first solution");
    check_shape(s2, lattice, n, "second solution");
    const std::size_t d = lattice.d();
    const std::size_t nodes = lattice.nodes();
    const std::size_t steps = lattice.steps();
    const TimeGrid& tg = lattice.time();
    const auto lower = lattice.box().lower();
    const auto upper = lattice.box().upper();

    EstimateTerms t;
    t.beta = beta;
    t.y2 = weighted_expectation(
        lattice, [&](std::size_t k, std::size_t node) { return sq_sum(s1.Y[k], s2.Y[k], n, nodes, node); }, beta);
    t.z2 = weighted_expectation(
        lattice, [&](std::size_t k, std::size_t node) { return sq_sum(s1.Z[k], s2.Z[k], n * d, nodes, node); },
        beta);
    t.eta2 = weighted_expectation(
        lattice,
        [&](std::size_t k, std::size_t node) { return sq_sum(s1.eta[k], s2.eta[k], n * d, nodes, node); }, beta);
    t.f2 = weighted_expectation(
        lattice, [&](std::size_t k, std::size_t node) { return sq_sum(d1.f[k], d2.f[k], n, nodes, node); }, beta);
    t.g2 = weighted_expectation(
        lattice, [&](std::size_t k, std::size_t node) { return sq_sum(d1.g[k], d2.g[k], n * d, nodes, node); },
        beta);

    std::vector<double> last(nodes);
    for (std::size_t node = 0; node < nodes; ++node) last[node] = sq_sum(s1.Y[steps], s2.Y[steps], n, nodes, node);
    t.terminal = std::exp(beta * tg.horizon()) * layer_expectation(lattice, steps, std::move(last));

    const RunningCost cross_cost = [&](std::size_t k, LayerCost& c) {
        const double w = exp_weight(beta, tg.t(k), tg.t(k + 1));
        std::array<double, Lattice::kMaxDim> e1{}, e2{};
        for (std::size_t node = 0; node < nodes; ++node) {
            double base = 0.0;
            for (std::size_t cc = 0; cc < n; ++cc) {
                const double dy = s1.Y[k][cc * nodes + node] - s2.Y[k][cc * nodes + node];
                for (std::size_t j = 0; j < d; ++j) {
                    const std::size_t p = (cc * d + j) * nodes + node;
                    e1[j] = s1.eta[k][p];
                    e2[j] = s2.eta[k][p];
                    c.qv[node * d + j] -= w * dy * (e1[j] - e2[j]);
                }
                const std::span<const double> a(e1.data(), d), bb(e2.data(), d);
                base += 2.0 * dy * (g_block(a, lower, upper) - g_block(bb, lower, upper));
            }
            c.base[node] = w * base;
        }
    };
    const ScenarioField cf = backward_induction(lattice, 1, std::vector<double>(nodes, 0.0), cross_cost);
    t.cross = cf.value(0, 0, lattice.origin());

    if (t.y2 > 1e-300) {
        t.c_defined = true;
        t.c_beta = (t.cross + lattice.box().lower_min() * t.eta2) / t.y2;
    }
    return t;
}

bool update_estimate_holds(const EstimateTerms& t, double mu, double nu, const VolatilityBox& box) {
    const double lhs = t.y2 + t.z2 + t.eta2;
    const double rhs = 5.0 / box.lower_min() * t.bracket(mu, nu, box.upper_max());
    return lhs <= rhs * (1.0 + 1e-9) + 1e-20 * (1.0 + t.terminal);
}

double energy_coefficient(const EstimateTerms& t, double mu, double nu, const VolatilityBox& box) {
    return t.beta - mu * mu - nu * nu * box.upper_max() - (t.c_defined ? t.c_beta : 0.0);
}

// ---------------------------------------------------------------------------
// Picard iteration

double default_mu(double lipschitz, const VolatilityBox& box) {
    const double c = lipschitz > 0.0 ? lipschitz : 1.0;
    return std::sqrt(20.0 * c * std::max(1.0, box.upper_max()) / box.lower_min());
}

double lipschitz_spot_check(const GBsdeParams& params, std::size_t d, std::size_t probes, std::uint64_t seed) {
    const std::size_t n = params.xi.n;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(-5.0, 5.0);
    std::uniform_real_distribution<double> time(0.0, 1.0);
    std::vector<double> y1(n), y2(n), z1(n * d), z2(n * d), e1(n * d), e2(n * d);
    std::vector<double> o1(n * d), o2(n * d);
    double worst = 0.0;
    const auto dist = [](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
        return std::sqrt(s);
    };
    for (std::size_t p = 0; p < probes; ++p) {
        const double t = time(rng);
        for (auto* v : {&y1, &y2, &z1, &z2, &e1, &e2})
            for (double& x : *v) x = unif(rng);
        const double den = dist(y1, y2) + dist(z1, z2) + dist(e1, e2);
        if (den <= 0.0) continue;
        for (const auto& [drv, name, width] :
             {std::tuple{&params.f, "f", n}, std::tuple{&params.g, "g", n * d}}) {
            if (!*drv) continue;
            const std::span<double> a(o1.data(), width), b(o2.data(), width);
            call_driver(*drv, name, t, y1, z1, e1, a);
            call_driver(*drv, name, t, y2, z2, e2, b);
            double num = 0.0;
            for (std::size_t i = 0; i < width; ++i) num += (a[i] - b[i]) * (a[i] - b[i]);
            worst = std::max(worst, std::sqrt(num) / den);
        }
    }
    return worst;
}

double field_distance(const Lattice& lattice, const BsdeSolution& a, const BsdeSolution& b, double beta) {
    const std::size_t n = a.n;
    check_shape(a, lattice, n, "first field");
    check_shape(b, lattice, n, "second field");
    const std::size_t d = lattice.d();
    const std::size_t nodes = lattice.nodes();
    const double total = weighted_expectation(
        lattice,
        [&](std::size_t k, std::size_t node) {
            return sq_sum(a.Y[k], b.Y[k], n, nodes, node) + sq_sum(a.Z[k], b.Z[k], n * d, nodes, node) +
                   sq_sum(a.eta[k], b.eta[k], n * d, nodes, node);
        },
        beta);
    return std::sqrt(total / exp_weight(beta, 0.0, lattice.time().horizon()));
}

GBsdeResult solve_gbsde(const GBsdeParams& params, const Lattice& lattice, const PicardOptions& options) {
    check_params(params);
    if (!(options.tol > 0.0)) throw InputError("Picard tolerance must be positive");
    if (options.max_iter < 1) throw InputError("Picard needs at least one iteration");
    const VolatilityBox& box = lattice.box();
    const double horizon = lattice.time().horizon();
    const std::size_t n = params.xi.n;

    GBsdeResult result;
    PicardReport& rep = result.report;
    rep.lipschitz_observed = lipschitz_spot_check(params, lattice.d(), 64, 0x5EEDF00DULL);
    if (rep.lipschitz_observed > params.lipschitz * (1.0 + 1e-9) + 1e-12) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "driver exceeds its declared Lipschitz constant %.6g (observed %.6g)",
                      params.lipschitz, rep.lipschitz_observed);
        throw InputError(buf);
    }
    rep.mu = options.mu.value_or(default_mu(params.lipschitz, box));
    rep.nu = options.nu.value_or(default_mu(params.lipschitz, box));
    if (!(rep.mu > 0.0) || !(rep.nu > 0.0)) throw InputError("mu and nu must be positive");
    const double c = params.lipschitz;
    rep.theoretical_factor = 5.0 * c / box.lower_min() * (1.0 / (rep.mu * rep.mu) + 1.0 / (rep.nu * rep.nu));

    BsdeSolution start = BsdeSolution::zero(lattice, n);
    if (options.initial) {
        check_shape(*options.initial, lattice, n, "initial guess");
        start = *options.initial;
    }

    DriverFields d0, d1;
    BsdeSolution prev = std::move(start);
    BsdeSolution cur = picard_step(prev, params, lattice, &d0);
    std::optional<BsdeSolution> second;

    if (options.beta) {
        rep.beta = *options.beta;
        if (!(rep.beta >= 0.0)) throw InputError("beta must be nonnegative");
        if (rep.beta * horizon > kMaxBetaT) throw OverflowError("beta * T exceeds 700");
    } else {
        rep.beta_searched = true;
        second = picard_step(cur, params, lattice, &d1);
        bool found = false;
        double last = 0.0;
        for (double beta : options.beta_grid) {
            if (!(beta > 0.0) || beta * horizon > kMaxBetaT) continue;
            last = beta;
            const EstimateTerms t = estimate_terms(lattice, *second, d1, cur, d0, beta);
            if (update_estimate_holds(t, rep.mu, rep.nu, box)) {
                rep.beta = beta;
                found = true;
                break;
            }
        }
        if (!found) {
            if (last == 0.0) throw InputError("beta grid has no admissible value");
            rep.beta = last;
            rep.beta_search_failed = true;
        }
    }

    const auto record = [&](double dist) {
        rep.distances.push_back(dist);
        rep.iterations = rep.distances.size();
        if (rep.distances.size() >= 2) {
            const double before = rep.distances[rep.distances.size() - 2];
            if (before > 0.0) {
                const double f = dist / before;
                rep.factors.push_back(f);
                rep.measured_factor = std::max(rep.measured_factor, f);
                rep.measured_factor_squared = rep.measured_factor * rep.measured_factor;
            }
        }
    };

    record(field_distance(lattice, cur, prev, rep.beta));
    bool converged = rep.distances.back() < options.tol;
    while (!converged && rep.iterations < options.max_iter) {
        BsdeSolution next = second ? std::move(*second) : picard_step(cur, params, lattice);
        second.reset();
        record(field_distance(lattice, next, cur, rep.beta));
        prev = std::move(cur);
        cur = std::move(next);
        converged = rep.distances.back() < options.tol;
    }
    if (!converged) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "Picard iteration did not reach tol %.3g in %zu steps (last distance %.6g)",
                      options.tol, options.max_iter, rep.distances.back());
        throw ConvergenceError(buf, rep.distances);
    }
    rep.converged_at = rep.iterations - 1;
    result.solution = std::move(cur);
    return result;
}

// ---------------------------------------------------------------------------
// Pathwise checks

namespace {

struct StepState {
    double y = 0.0;
    double k_inc = 0.0;
    double increment = 0.0; ///< f dt + g : dqv - Z . dB + G(eta) dt - 1/2 eta : dqv
};

// Replays one step of component c from state x with path volatility sig and signs eps.
class PathReplayer {
public:
    PathReplayer(const BsdeSolution& sol, const GBsdeParams& params, const Lattice& lat)
        : sol_(sol), params_(params), lat_(lat), n_(sol.n), d_(lat.d()), nodes_(lat.nodes()), y_(n_),
          z_(n_ * d_), eta_(n_ * d_), fo_(n_), go_(n_ * d_) {}

    StepState step(std::size_t c, std::size_t k, std::span<const double> x, std::span<const double> sig,
                   std::span<const double> db) {
        const double dt = lat_.time().dt();
        const double t = lat_.time().t(k);
        for (std::size_t cc = 0; cc < n_; ++cc)
            y_[cc] = lat_.evaluate(std::span<const double>(sol_.Y[k]).subspan(cc * nodes_, nodes_), x);
        for (std::size_t p = 0; p < n_ * d_; ++p) {
            z_[p] = lat_.evaluate(std::span<const double>(sol_.Z[k]).subspan(p * nodes_, nodes_), x);
            eta_[p] = lat_.evaluate(std::span<const double>(sol_.eta[k]).subspan(p * nodes_, nodes_), x);
        }
        call_driver(params_.f, "f", t, y_, z_, eta_, fo_);
        call_driver(params_.g, "g", t, y_, z_, eta_, go_);

        const std::size_t node = lat_.nearest_node(x);
        const auto star = lat_.scenario(sol_.policy[k][c * nodes_ + node]);
        const auto layer = std::span<const double>(sol_.Y[k + 1]).subspan(c * nodes_, nodes_);
        const double y0 = lat_.evaluate(layer, x);
        std::array<double, Lattice::kMaxDim> eta_loc{};
        StepState s;
        s.y = y_[c];
        double inc = fo_[c] * dt;
        double quad = 0.0;
        for (std::size_t j = 0; j < d_; ++j) {
            const double u = std::sqrt(star[j] * dt);
            const AxisDiff df = axis_diff(lat_, layer, x, y0, j, u);
            const double g = go_[c * d_ + j];
            eta_loc[j] = df.eta + 2.0 * g;
            const double dq = sig[j] * dt;
            inc += g * dq - df.z * db[j] - 0.5 * eta_loc[j] * dq;
            quad += eta_loc[j] * sig[j];
        }
        const double gv = g_block(std::span<const double>(eta_loc.data(), d_), lat_.box().lower(),
                                  lat_.box().upper());
        inc += gv * dt;
        s.k_inc = (gv - 0.5 * quad) * dt;
        s.increment = inc;
        return s;
    }

    std::uint16_t policy(std::size_t c, std::size_t k, std::span<const double> x) const {
        return sol_.policy[k][c * nodes_ + lat_.nearest_node(x)];
    }

private:
    const BsdeSolution& sol_;
    const GBsdeParams& params_;
    const Lattice& lat_;
    std::size_t n_, d_, nodes_;
    std::vector<double> y_, z_, eta_, fo_, go_;
};

struct PathOutcome {
    double max_residual = 0.0;
    double min_margin = 0.0;
    double min_k = 0.0;
};

// chooser(k, x, rng) returns the scenario index followed on step k.
template <class Chooser>
PathOutcome replay_path(const BsdeSolution& sol, const GBsdeParams& params, const Lattice& lat, std::size_t c,
                        std::uint64_t seed, Chooser&& chooser) {
    const std::size_t d = lat.d();
    const std::size_t steps = lat.steps();
    const double dt = lat.time().dt();
    PathReplayer rp(sol, params, lat);
    std::mt19937_64 rng(seed);
    std::vector<double> x(d, 0.0), db(d);
    std::vector<double> ys(steps + 1), incs(steps), ks(steps);
    PathOutcome out;
    out.min_k = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < steps; ++k) {
        const auto sig = lat.scenario(chooser(k, std::span<const double>(x), rng));
        for (std::size_t j = 0; j < d; ++j) {
            const double u = std::sqrt(sig[j] * dt);
            db[j] = (rng() >> 63) ? u : -u;
        }
        const StepState s = rp.step(c, k, x, sig, db);
        ys[k] = s.y;
        incs[k] = s.increment;
        ks[k] = s.k_inc;
        out.min_k = std::min(out.min_k, s.k_inc);
        for (std::size_t j = 0; j < d; ++j) x[j] += db[j];
    }
    std::vector<double> xi(sol.n);
    params.xi.payoff(x, {}, xi);
    ys[steps] = lat.evaluate(std::span<const double>(sol.Y[steps]).subspan(c * lat.nodes(), lat.nodes()), x);

    double tail = xi[c];
    double k_tail = 0.0;
    double r = ys[steps] - tail;
    out.max_residual = std::abs(r);
    out.min_margin = r;
    for (std::size_t k = steps; k-- > 0;) {
        tail += incs[k];
        k_tail += ks[k];
        r = ys[k] - tail;
        out.max_residual = std::max(out.max_residual, std::abs(r));
        out.min_margin = std::min(out.min_margin, r + k_tail);
    }
    return out;
}

} // namespace

ResidualReport residual_check(const BsdeSolution& solution, const GBsdeParams& params, const Lattice& lattice,
                              std::size_t paths, std::uint64_t seed) {
    check_params(params);
    check_shape(solution, lattice, params.xi.n, "solution");
    if (paths == 0) throw InputError("residual check needs at least one path");
    const std::size_t n = solution.n;
    const std::size_t scen = lattice.scenarios();
    std::vector<PathOutcome> on(n * paths), off(n * paths);

    parallel_for(
        n * paths,
        [&](std::size_t b, std::size_t e) {
            PathReplayer probe(solution, params, lattice);
            for (std::size_t i = b; i < e; ++i) {
                const std::size_t c = i / paths;
                on[i] = replay_path(solution, params, lattice, c, path_seed(seed, 2 * i),
                                    [&](std::size_t k, std::span<const double> x, std::mt19937_64&) {
                                        return static_cast<std::size_t>(probe.policy(c, k, x));
                                    });
                off[i] = replay_path(solution, params, lattice, c, path_seed(seed, 2 * i + 1),
                                     [&](std::size_t, std::span<const double>, std::mt19937_64& rng) {
                                         return static_cast<std::size_t>(rng() % scen);
                                     });
            }
        },
        16);

    ResidualReport rep;
    rep.paths = paths;
    rep.min_margin = std::numeric_limits<double>::infinity();
    rep.min_k = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n * paths; ++i) {
        rep.on_policy = std::max(rep.on_policy, on[i].max_residual);
        rep.off_policy = std::max(rep.off_policy, off[i].max_residual);
        rep.min_margin = std::min(rep.min_margin, off[i].min_margin);
        rep.min_k = std::min({rep.min_k, on[i].min_k, off[i].min_k});
    }
    return rep;
}

KMartingaleReport k_martingale_check(const BsdeSolution& solution, const GBsdeParams& params,
                                     const Lattice& lattice, std::size_t controls, std::size_t paths,
                                     std::uint64_t seed, std::size_t component) {
    check_params(params);
    check_shape(solution, lattice, params.xi.n, "solution");
    if (controls == 0 || paths == 0) throw InputError("K check needs at least one control and one path");
    if (component >= solution.n) throw InputError("component out of range");
    const std::size_t d = lattice.d();
    const std::size_t steps = lattice.steps();
    const std::size_t nodes = lattice.nodes();
    const double dt = lattice.time().dt();
    const auto lower = lattice.box().lower();
    const auto upper = lattice.box().upper();
    std::vector<double> samples(controls * paths);

    parallel_for(
        controls * paths,
        [&](std::size_t b, std::size_t e) {
            std::vector<double> x(d), sig(d);
            std::array<double, Lattice::kMaxDim> eta_c{};
            for (std::size_t i = b; i < e; ++i) {
                const std::size_t ctrl = i / paths;
                const std::size_t p = i % paths;
                std::mt19937_64 rng(path_seed(seed, p));
                std::fill(x.begin(), x.end(), 0.0);
                double kt = 0.0;
                for (std::size_t k = 0; k < steps; ++k) {
                    const std::size_t node = lattice.nearest_node(x);
                    if (ctrl == 0) {
                        const auto s = lattice.scenario(solution.policy[k][component * nodes + node]);
                        std::copy(s.begin(), s.end(), sig.begin());
                    } else {
                        const std::uint64_t h =
                            splitmix64(seed ^ splitmix64(ctrl * 0x9E3779B97F4A7C15ULL) ^
                                       splitmix64(k * 0xC2B2AE3D27D4EB4FULL + node));
                        for (std::size_t j = 0; j < d; ++j) sig[j] = ((h >> j) & 1U) ? upper[j] : lower[j];
                    }
                    double quad = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        eta_c[j] = lattice.evaluate(
                            std::span<const double>(solution.eta[k]).subspan((component * d + j) * nodes, nodes),
                            x);
                        quad += eta_c[j] * sig[j];
                    }
                    kt += (g_block(std::span<const double>(eta_c.data(), d), lower, upper) - 0.5 * quad) * dt;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double u = std::sqrt(sig[j] * dt);
                        x[j] += (rng() >> 63) ? u : -u;
                    }
                }
                samples[i] = -kt;
            }
        },
        16);

    KMartingaleReport rep;
    rep.worst = -std::numeric_limits<double>::infinity();
    for (std::size_t ctrl = 0; ctrl < controls; ++ctrl) {
        double sum = 0.0;
        for (std::size_t p = 0; p < paths; ++p) sum += samples[ctrl * paths + p];
        const double mean = sum / static_cast<double>(paths);
        double ss = 0.0;
        for (std::size_t p = 0; p < paths; ++p) {
            const double r = samples[ctrl * paths + p] - mean;
            ss += r * r;
        }
        const double se =
            paths > 1 ? std::sqrt(ss / static_cast<double>(paths - 1) / static_cast<double>(paths)) : 0.0;
        rep.means.push_back(mean);
        rep.std_errors.push_back(se);
        if (mean > rep.worst) {
            rep.worst = mean;
            rep.worst_se = se;
        }
    }
    return rep;
}

BsdeSolution classical_oracle(const GBsdeParams& params, const Lattice& lattice) {
    check_params(params);
    if (!lattice.box().is_degenerate()) throw MisuseError("classical oracle needs a degenerate volatility box");
    const std::size_t n = params.xi.n;
    const std::size_t d = lattice.d();
    const std::size_t nodes = lattice.nodes();
    const std::size_t steps = lattice.steps();
    const double dt = lattice.time().dt();
    const auto sig = lattice.scenario(0);
    const auto lower = lattice.box().lower();
    const auto upper = lattice.box().upper();

    BsdeSolution sol = BsdeSolution::zero(lattice, n);
    sol.Y[steps] = terminal_layer(lattice, params.xi);

    for (std::size_t k = steps; k-- > 0;) {
        const double t = lattice.time().t(k);
        const std::span<const double> next(sol.Y[k + 1]);
        parallel_for(nodes, [&](std::size_t b, std::size_t e) {
            std::vector<double> mean(n), y(n), z(n * d), eta_y(n * d), eta(n * d), fo(n), go(n * d), yn(n);
            for (std::size_t node = b; node < e; ++node) {
                const auto x = lattice.state(node);
                for (std::size_t c = 0; c < n; ++c) {
                    const auto layer = next.subspan(c * nodes, nodes);
                    mean[c] = lattice.mean_at(layer, 0, node);
                    for (std::size_t j = 0; j < d; ++j) {
                        const AxisDiff df = axis_diff(lattice, layer, x, layer[node], j, std::sqrt(sig[j] * dt));
                        if (df.one_sided) sol.boundary[node] = 1;
                        z[c * d + j] = df.z;
                        eta_y[c * d + j] = df.eta;
                    }
                }
                y = mean;
                eta = eta_y;
                bool done = false;
                for (int it = 0; it < 200 && !done; ++it) {
                    call_driver(params.f, "f", t, y, z, eta, fo);
                    call_driver(params.g, "g", t, y, z, eta, go);
                    double diff = 0.0, scale = 1.0;
                    for (std::size_t c = 0; c < n; ++c) {
                        double v = mean[c] + fo[c] * dt;
                        for (std::size_t j = 0; j < d; ++j) v += go[c * d + j] * sig[j] * dt;
                        diff = std::max(diff, std::abs(v - y[c]));
                        scale = std::max(scale, std::abs(v));
                        yn[c] = v;
                    }
                    for (std::size_t p = 0; p < n * d; ++p) {
                        const double v = eta_y[p] + 2.0 * go[p];
                        diff = std::max(diff, std::abs(v - eta[p]) * dt);
                        eta[p] = v;
                    }
                    y = yn;
                    done = diff <= 1e-14 * scale;
                }
                if (!done)
                    throw ConvergenceError("classical oracle: implicit step did not converge at step " +
                                               std::to_string(k),
                                           {});
                for (std::size_t c = 0; c < n; ++c) {
                    sol.Y[k][c * nodes + node] = y[c];
                    double quad = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const std::size_t p = (c * d + j) * nodes + node;
                        sol.Z[k][p] = z[c * d + j];
                        sol.eta[k][p] = eta[c * d + j];
                        quad += eta[c * d + j] * sig[j];
                    }
                    sol.K[k][c * nodes + node] =
                        (g_block(std::span<const double>(eta).subspan(c * d, d), lower, upper) - 0.5 * quad) * dt;
                }
            }
        });
    }
    sol.boundary_nodes = static_cast<std::size_t>(std::count(sol.boundary.begin(), sol.boundary.end(), 1));
    return sol;
}

} // namespace gcalc
