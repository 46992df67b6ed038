#include "gcalc/harness.hpp"

#include "gcalc/calculus.hpp"
#include "gcalc/errors.hpp"
#include "gcalc/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace gcalc {

namespace {

constexpr double kRelSlack = 1e-9;

bool leq(double lhs, double rhs) { return lhs <= rhs * (1.0 + kRelSlack) + 1e-18; }

std::vector<double> admissible(std::vector<double> betas, double horizon) {
    std::vector<double> out;
    for (double b : betas) {
        if (!(b >= 0.0) || !std::isfinite(b)) throw InputError("beta values must be finite and nonnegative");
        if (b * horizon <= kMaxBetaT) out.push_back(b);
    }
    std::sort(out.begin(), out.end());
    if (out.empty()) throw InputError("no beta in the grid satisfies beta * T <= 700");
    return out;
}

// Smallest beta from which every later row passes.
template <class Pred>
std::optional<double> tail_start(const std::vector<double>& betas, Pred&& pass) {
    std::optional<double> start;
    for (std::size_t i = betas.size(); i-- > 0;) {
        if (!pass(i)) break;
        start = betas[i];
    }
    return start;
}

double sum_squares(const std::vector<double>& a, const std::vector<double>& b, std::size_t n, std::size_t nodes,
                   std::size_t node) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
        const double v = a[c * nodes + node] - b[c * nodes + node];
        s += v * v;
    }
    return s;
}

double terminal_second_moment(const Lattice& lattice, const std::vector<double>& a, const std::vector<double>* b,
                              std::size_t n) {
    const std::size_t nodes = lattice.nodes();
    std::vector<double> layer(nodes, 0.0);
    for (std::size_t node = 0; node < nodes; ++node)
        for (std::size_t c = 0; c < n; ++c) {
            const double v = a[c * nodes + node] - (b ? (*b)[c * nodes + node] : 0.0);
            layer[node] += v * v;
        }
    return layer_expectation(lattice, lattice.steps(), std::move(layer));
}

double triple_norm(const Lattice& lattice, const BsdeSolution& a, const BsdeSolution* b, double beta, double* m2,
                   double* z2, double* eta2) {
    const std::size_t n = a.n;
    const std::size_t d = lattice.d();
    const std::size_t nodes = lattice.nodes();
    const auto diff = [&](const std::vector<std::vector<double>>& fa, const std::vector<std::vector<double>>* fb,
                          std::size_t planes) {
        return weighted_expectation(
            lattice,
            [&](std::size_t k, std::size_t node) {
                double s = 0.0;
                for (std::size_t p = 0; p < planes; ++p) {
                    const double v = fa[k][p * nodes + node] - (fb ? (*fb)[k][p * nodes + node] : 0.0);
                    s += v * v;
                }
                return s;
            },
            beta);
    };
    *m2 = diff(a.Y, b ? &b->Y : nullptr, n);
    *z2 = diff(a.Z, b ? &b->Z : nullptr, n * d);
    *eta2 = diff(a.eta, b ? &b->eta : nullptr, n * d);
    return *m2 + *z2 + *eta2;
}

} // namespace

std::vector<double> default_beta_grid() {
    std::vector<double> out;
    for (double b = 1.0; b <= 1024.0; b *= 2.0) out.push_back(b);
    return out;
}

EstimateConstants printed_constants(const VolatilityBox& box) {
    const double s2 = box.lower_min();
    const double s = std::sqrt(s2);
    return {1.0 / s, 3.0 / s, 1.0 / s2};
}

EstimateConstants conservative_constants(const VolatilityBox& box) {
    const double c = 5.0 / box.lower_min();
    return {c, c, c};
}

AprioriReport apriori_check(const GBsdeParams& params1, const GBsdeParams& params2, const Lattice& lattice,
                            std::vector<double> betas, std::optional<double> mu, std::optional<double> nu,
                            const PicardOptions& picard) {
    if (params1.xi.n != params2.xi.n) throw DimensionError("both parameter sets need the same n");
    const VolatilityBox& box = lattice.box();
    betas = admissible(std::move(betas), lattice.time().horizon());

    AprioriReport rep;
    const double lip = std::max(params1.lipschitz, params2.lipschitz);
    rep.mu = mu.value_or(default_mu(lip, box));
    rep.nu = nu.value_or(default_mu(lip, box));
    if (!(rep.mu > 0.0) || !(rep.nu > 0.0)) throw InputError("mu and nu must be positive");
    rep.printed = printed_constants(box);
    rep.conservative = conservative_constants(box);

    GBsdeResult r1 = solve_gbsde(params1, lattice, picard);
    GBsdeResult r2 = solve_gbsde(params2, lattice, picard);
    rep.picard1 = r1.report;
    rep.picard2 = r2.report;
    const DriverFields d1 = evaluate_drivers(params1, lattice, r1.solution);
    const DriverFields d2 = evaluate_drivers(params2, lattice, r2.solution);

    double dy = 0.0, deta = 0.0;
    for (std::size_t k = 0; k < lattice.steps(); ++k) {
        for (std::size_t i = 0; i < r1.solution.Y[k].size(); ++i)
            dy = std::max(dy, std::abs(r1.solution.Y[k][i] - r2.solution.Y[k][i]));
        for (std::size_t i = 0; i < r1.solution.eta[k].size(); ++i)
            deta = std::max(deta, std::abs(r1.solution.eta[k][i] - r2.solution.eta[k][i]));
    }
    rep.hypothesis_ii_flag = dy <= 1e-12 && deta > 1e-8;

    const double upper = box.upper_max();
    for (double beta : betas) {
        const EstimateTerms t = estimate_terms(lattice, r1.solution, d1, r2.solution, d2, beta);
        AprioriRow row;
        row.beta = beta;
        row.y2 = t.y2;
        row.z2 = t.z2;
        row.eta2 = t.eta2;
        row.terminal = t.terminal;
        row.f_term = t.f2 / (rep.mu * rep.mu);
        row.g_term = upper * t.g2 / (rep.nu * rep.nu);
        row.bracket = t.bracket(rep.mu, rep.nu, upper);
        row.c_defined = t.c_defined;
        row.c_beta = t.c_beta;
        row.coefficient = energy_coefficient(t, rep.mu, rep.nu, box);
        const double lhs[3] = {t.y2, t.z2, t.eta2};
        const double pc[3] = {rep.printed.y, rep.printed.z, rep.printed.eta};
        const double cc[3] = {rep.conservative.y, rep.conservative.z, rep.conservative.eta};
        for (int i = 0; i < 3; ++i) {
            row.printed[i] = leq(lhs[i], pc[i] * row.bracket);
            row.conservative[i] = leq(lhs[i], cc[i] * row.bracket);
        }
        rep.rows.push_back(row);
    }
    rep.beta0_printed = tail_start(betas, [&](std::size_t i) { return rep.rows[i].printed_all(); });
    rep.beta0_conservative = tail_start(betas, [&](std::size_t i) { return rep.rows[i].conservative_all(); });
    rep.printed_pass = rep.beta0_printed.has_value();
    rep.conservative_pass = rep.beta0_conservative.has_value();
    return rep;
}

SupEstimateReport sup_estimate_from(const BsdeSolution& s1, const DriverFields& d1, const BsdeSolution& s2,
                                    const DriverFields& d2, const Lattice& lattice, double beta, double mu,
                                    double nu, std::size_t levels) {
    if (levels < 2) throw InputError("running-max grid needs at least two levels");
    const std::size_t n = s1.n;
    const std::size_t nodes = lattice.nodes();
    const std::size_t steps = lattice.steps();
    const TimeGrid& tg = lattice.time();

    SupEstimateReport rep;
    rep.beta = beta;
    const EstimateTerms t = estimate_terms(lattice, s1, d1, s2, d2, beta);
    rep.rhs = 3.0 * t.bracket(mu, nu, lattice.box().upper_max());

    // a[k][node] = e^{beta t_k} |dY_k|^2
    std::vector<std::vector<double>> a(steps + 1, std::vector<double>(nodes));
    double top = 0.0;
    for (std::size_t k = 0; k <= steps; ++k) {
        const double w = std::exp(beta * tg.t(k));
        for (std::size_t node = 0; node < nodes; ++node) {
            a[k][node] = w * sum_squares(s1.Y[k], s2.Y[k], n, nodes, node);
            top = std::max(top, a[k][node]);
        }
    }
    if (top == 0.0) {
        rep.holds = leq(0.0, rep.rhs);
        return rep;
    }

    if (lattice.d() == 1) {
        const double span = static_cast<double>(levels - 1);
        const auto level_of = [&](double m) {
            const double r = std::ceil(m / top * span - 1e-12);
            return static_cast<std::size_t>(std::clamp(r, 0.0, span));
        };
        const auto level_value = [&](std::size_t r) { return top * static_cast<double>(r) / span; };
        std::vector<double> next(levels * nodes), cur(levels * nodes);
        for (std::size_t r = 0; r < levels; ++r)
            for (std::size_t node = 0; node < nodes; ++node)
                next[r * nodes + node] = std::max(level_value(r), a[steps][node]);
        for (std::size_t k = steps; k-- > 0;) {
            parallel_for(
                levels,
                [&](std::size_t b, std::size_t e) {
                    std::vector<double> layer(nodes);
                    for (std::size_t r = b; r < e; ++r) {
                        const double m = level_value(r);
                        for (std::size_t x = 0; x < nodes; ++x)
                            layer[x] = next[level_of(std::max(m, a[k + 1][x])) * nodes + x];
                        for (std::size_t node = 0; node < nodes; ++node) {
                            double best = -std::numeric_limits<double>::infinity();
                            for (std::size_t s = 0; s < lattice.scenarios(); ++s)
                                best = std::max(best, lattice.mean_at(layer, s, node));
                            cur[r * nodes + node] = best;
                        }
                    }
                },
                1);
            std::swap(next, cur);
        }
        const std::size_t o = lattice.origin();
        rep.lhs = next[level_of(a[0][o]) * nodes + o];
    } else {
        rep.approximate = true;
        constexpr std::size_t kControls = 32;
        constexpr std::size_t kPaths = 2000;
        const std::size_t d = lattice.d();
        const double dt = tg.dt();
        const auto lower = lattice.box().lower();
        const auto upper = lattice.box().upper();
        std::vector<double> sup(kControls * kPaths);
        parallel_for(
            kControls * kPaths,
            [&](std::size_t b, std::size_t e) {
                std::vector<double> x(d);
                for (std::size_t i = b; i < e; ++i) {
                    const std::size_t ctrl = i / kPaths;
                    std::mt19937_64 rng(path_seed(0xA11CE5ULL + ctrl, i % kPaths));
                    std::fill(x.begin(), x.end(), 0.0);
                    double best = a[0][lattice.origin()];
                    for (std::size_t k = 0; k < steps; ++k) {
                        const std::uint64_t h = splitmix64(ctrl * 0x9E3779B97F4A7C15ULL ^ (k << 20) ^
                                                           lattice.nearest_node(x));
                        for (std::size_t j = 0; j < d; ++j) {
                            const double sig = ((h >> j) & 1U) ? upper[j] : lower[j];
                            const double u = std::sqrt(sig * dt);
                            x[j] += (rng() >> 63) ? u : -u;
                        }
                        best = std::max(best, lattice.evaluate(a[k + 1], x));
                    }
                    sup[i] = best;
                }
            },
            64);
        rep.lhs = 0.0;
        for (std::size_t c = 0; c < kControls; ++c) {
            double s = 0.0;
            for (std::size_t p = 0; p < kPaths; ++p) s += sup[c * kPaths + p];
            rep.lhs = std::max(rep.lhs, s / static_cast<double>(kPaths));
        }
    }
    rep.holds = leq(rep.lhs, rep.rhs);
    return rep;
}

SupEstimateReport sup_estimate_check(const GBsdeParams& params1, const GBsdeParams& params2,
                                     const Lattice& lattice, double beta, std::optional<double> mu,
                                     std::optional<double> nu, const PicardOptions& picard, std::size_t levels) {
    if (params1.xi.n != params2.xi.n) throw DimensionError("both parameter sets need the same n");
    if (beta * lattice.time().horizon() > kMaxBetaT) throw OverflowError("beta * T exceeds 700");
    const double lip = std::max(params1.lipschitz, params2.lipschitz);
    const double m = mu.value_or(default_mu(lip, lattice.box()));
    const double v = nu.value_or(default_mu(lip, lattice.box()));
    const GBsdeResult r1 = solve_gbsde(params1, lattice, picard);
    const GBsdeResult r2 = solve_gbsde(params2, lattice, picard);
    const DriverFields d1 = evaluate_drivers(params1, lattice, r1.solution);
    const DriverFields d2 = evaluate_drivers(params2, lattice, r2.solution);
    return sup_estimate_from(r1.solution, d1, r2.solution, d2, lattice, beta, m, v, levels);
}

RepresentationBoundReport representation_bound_check(const TerminalFunctional& xi, const Lattice& lattice,
                                                     std::vector<double> betas) {
    betas = admissible(std::move(betas), lattice.time().horizon());
    const BsdeSolution m = represent_martingale(xi, lattice);
    const double xi2 = terminal_second_moment(lattice, m.Y[lattice.steps()], nullptr, xi.n);
    const double c = 5.0 / lattice.box().lower_min();

    RepresentationBoundReport rep;
    for (double beta : betas) {
        RepresentationBoundRow row;
        row.beta = beta;
        const double lhs = triple_norm(lattice, m, nullptr, beta, &row.m2, &row.z2, &row.eta2);
        row.rhs = c * std::exp(beta * lattice.time().horizon()) * xi2;
        row.holds = leq(lhs, row.rhs);
        rep.rows.push_back(row);
    }
    rep.beta0 = tail_start(betas, [&](std::size_t i) { return rep.rows[i].holds; });
    rep.pass = rep.beta0.has_value();
    return rep;
}

CauchyReport cauchy_sequence_check(const std::vector<TerminalFunctional>& sequence, const Lattice& lattice,
                                   double beta) {
    if (sequence.size() < 2) throw InputError("Cauchy check needs at least two terminals");
    if (!(beta >= 0.0) || beta * lattice.time().horizon() > kMaxBetaT)
        throw InputError("beta must be nonnegative with beta * T <= 700");
    const std::size_t n = sequence.front().n;
    for (const auto& xi : sequence)
        if (xi.n != n) throw DimensionError("all terminals need the same n");

    std::vector<BsdeSolution> reps;
    reps.reserve(sequence.size());
    for (const auto& xi : sequence) reps.push_back(represent_martingale(xi, lattice));

    const double c = std::exp(beta * lattice.time().horizon()) * 5.0 / lattice.box().lower_min();
    CauchyReport rep;
    rep.beta = beta;
    rep.pass = true;
    for (std::size_t i = 0; i < reps.size(); ++i)
        for (std::size_t j = i + 1; j < reps.size(); ++j) {
            CauchyRow row;
            row.m = i;
            row.n = j;
            double m2 = 0.0, z2 = 0.0, e2 = 0.0;
            row.lhs = triple_norm(lattice, reps[i], &reps[j], 0.0, &m2, &z2, &e2);
            row.xi_distance =
                terminal_second_moment(lattice, reps[i].Y[lattice.steps()], &reps[j].Y[lattice.steps()], n);
            row.rhs = c * row.xi_distance;
            row.holds = leq(row.lhs, row.rhs);
            rep.pass = rep.pass && row.holds;
            rep.rows.push_back(row);
        }
    return rep;
}

} // namespace gcalc
