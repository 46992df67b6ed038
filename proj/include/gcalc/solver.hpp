/**
 * @file solver.hpp
 * @brief G-martingale representation and Picard iteration for G-BSDEs
 *
 *   Y_t = xi + int_t^T f ds + int_t^T g : d<B> - int_t^T Z^T dB
 *            + int_t^T G(eta) ds - 1/2 int_t^T eta : d<B>
 *
 * on a Lattice. One Picard step freezes the drivers at the input fields,
 * computes the conditional sublinear expectation with the drivers as running
 * cost, and reads (Z, eta) off the new value field at every node:
 *
 *   Z_j   = (Y_{k+1}(x + u_j e_j) - Y_{k+1}(x - u_j e_j)) / (2 u_j)
 *   eta_j = (Y_{k+1}(x + u_j e_j) - 2 Y_{k+1}(x) + Y_{k+1}(x - u_j e_j)) / u_j^2 + 2 g_j
 *
 * with u_j = sigma*_j sqrt(dt) taken from the argmax scenario at the node.
 * The 2 g term moves the d<B>-driver into the martingale part, so eta is the
 * second-order coefficient of M = Y + int f ds + int g : d<B>. Nodes whose
 * offsets leave the grid use one-sided differences and are flagged.
 */
#pragma once

#include "gcalc/gtensor.hpp"
#include "gcalc/scenario.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace gcalc {

/// f writes n values, g writes n * d diagonal entries (out[c * d + j]).
/// z[c * d + j] is Z_{jc}; eta[c * d + j] is eta^c_{jj}.
using Driver = std::function<void(double t, std::span<const double> y, std::span<const double> z,
                                  std::span<const double> eta, std::span<double> out)>;

struct GBsdeParams {
    TerminalFunctional xi;
    Driver f; ///< empty means zero
    Driver g; ///< empty means zero
    double lipschitz = 0.0;
};

/**
 * Discrete solution fields.
 *
 * Y[k][c * nodes + node] for k = 0..N. Z, eta for k = 0..N-1 in plane layout
 * [(c * d + j) * nodes + node]. K[k][c * nodes + node] is the increment
 * (G(eta) - 1/2 eta : sigma*^2) dt under the node's argmax scenario.
 * For a representation run (zero drivers) Y is the martingale M.
 */
struct BsdeSolution {
    std::size_t n = 0;
    std::size_t d = 0;
    std::size_t nodes = 0;
    std::size_t steps = 0;
    std::vector<std::vector<double>> Y;
    std::vector<std::vector<double>> Z;
    std::vector<std::vector<double>> eta;
    std::vector<std::vector<double>> K;
    std::vector<std::vector<std::uint16_t>> policy;
    std::vector<std::uint8_t> boundary; ///< per node: a one-sided difference was used at some step
    std::size_t boundary_nodes = 0;

    double y(std::size_t k, std::size_t c, std::size_t node) const { return Y[k][c * nodes + node]; }
    double z(std::size_t k, std::size_t c, std::size_t j, std::size_t node) const {
        return Z[k][(c * d + j) * nodes + node];
    }
    double eta_at(std::size_t k, std::size_t c, std::size_t j, std::size_t node) const {
        return eta[k][(c * d + j) * nodes + node];
    }
    double min_k() const;

    static BsdeSolution zero(const Lattice& lattice, std::size_t n);
};

/// Driver values on the nodes: f[k][c * nodes + node], g[k][(c * d + j) * nodes + node].
struct DriverFields {
    std::vector<std::vector<double>> f;
    std::vector<std::vector<double>> g;
};

/// Drivers evaluated at the fields of `at` (k = 0..N-1). DriverError on non-finite output.
DriverFields evaluate_drivers(const GBsdeParams& params, const Lattice& lattice, const BsdeSolution& at);

/// Zero drivers: M = E_t[xi] with its (Z, eta, K).
BsdeSolution represent_martingale(const TerminalFunctional& xi, const Lattice& lattice);

/// One application of the Picard map to the input fields (y, z, zeta) = (input.Y, input.Z, input.eta).
BsdeSolution picard_step(const BsdeSolution& input, const GBsdeParams& params, const Lattice& lattice,
                         DriverFields* used = nullptr);

/// Terms of the energy estimate for two solutions with the drivers each was driven by.
struct EstimateTerms {
    double beta = 0.0;
    double y2 = 0.0;       ///< E int e^{beta s} |dY|^2 ds
    double z2 = 0.0;       ///< E int e^{beta s} |dZ|^2 ds
    double eta2 = 0.0;     ///< E int e^{beta s} |d eta|^2 ds
    double f2 = 0.0;       ///< E int e^{beta s} |df|^2 ds
    double g2 = 0.0;       ///< E int e^{beta s} |dg|^2 ds
    double terminal = 0.0; ///< e^{beta T} E |dY_T|^2
    double cross = 0.0;    ///< E[int 2 e^{beta s} dY.(G(eta1) - G(eta2)) ds - int e^{beta s} dY.d eta : d<B>]
    bool c_defined = false;
    double c_beta = 0.0;   ///< (cross + lower_min * eta2) / y2 when y2 > 0

    /// e^{beta T} E|dY_T|^2 + f2 / mu^2 + upper_max g2 / nu^2
    double bracket(double mu, double nu, double upper_max) const;
};

EstimateTerms estimate_terms(const Lattice& lattice, const BsdeSolution& s1, const DriverFields& d1,
                             const BsdeSolution& s2, const DriverFields& d2, double beta);

/// y2 + z2 + eta2 <= 5 / lower_min * bracket(mu, nu): the per-update estimate behind the contraction.
bool update_estimate_holds(const EstimateTerms& t, double mu, double nu, const VolatilityBox& box);

/// beta - mu^2 - nu^2 upper_max - C(beta); the energy argument needs this >= lower_min.
double energy_coefficient(const EstimateTerms& t, double mu, double nu, const VolatilityBox& box);

struct PicardOptions {
    std::optional<double> beta;
    std::optional<double> mu;
    std::optional<double> nu;
    double tol = 1e-8;
    std::size_t max_iter = 60;
    const BsdeSolution* initial = nullptr;
    std::vector<double> beta_grid{1, 2, 4, 8, 16, 32, 64, 128, 256};
};

struct PicardReport {
    std::size_t iterations = 0;   ///< Picard steps taken, including the one that met tol
    std::size_t converged_at = 0; ///< steps after which the iterate was within tol of the final one
    double beta = 0.0;
    bool beta_searched = false;
    bool beta_search_failed = false; ///< no grid beta satisfied the update estimate; the largest was used
    double mu = 0.0;
    double nu = 0.0;
    double theoretical_factor = 0.0; ///< 5 C / lower_min (1/mu^2 + 1/nu^2), bounds squared distances
    /// sqrt(sum of squared M_G^{2,beta} norms of the update / int_0^T e^{beta s} ds)
    std::vector<double> distances;
    std::vector<double> factors; ///< distances[i] / distances[i-1]
    double measured_factor = 0.0;
    double measured_factor_squared = 0.0;
    double lipschitz_observed = 0.0;
};

/// mu^2 = nu^2 = 20 C max(1, upper_max) / lower_min, C taken as 1 when zero.
double default_mu(double lipschitz, const VolatilityBox& box);

/// Largest |f(p1) - f(p2)| / (|y1-y2| + |z1-z2| + |eta1-eta2|) over random probes (same for g).
double lipschitz_spot_check(const GBsdeParams& params, std::size_t d, std::size_t probes, std::uint64_t seed);

/// Normalised distance between two field triples in the beta norm.
double field_distance(const Lattice& lattice, const BsdeSolution& a, const BsdeSolution& b, double beta);

struct GBsdeResult {
    BsdeSolution solution;
    PicardReport report;
};

/**
 * Picard iteration from options.initial (zero fields by default) until the
 * normalised distance drops below tol. ConvergenceError with the distance
 * trace after max_iter steps. InputError for monitored payoffs or drivers
 * exceeding the declared Lipschitz constant on probes.
 */
GBsdeResult solve_gbsde(const GBsdeParams& params, const Lattice& lattice, const PicardOptions& options = {});

struct ResidualReport {
    double on_policy = 0.0;  ///< max |residual| along paths under the argmax policy
    double off_policy = 0.0; ///< same under random grid scenarios
    double min_margin = 0.0; ///< min of residual + remaining K over off-policy paths
    double min_k = 0.0;      ///< smallest K increment met on any replayed path
    std::size_t paths = 0;
};

/// Pathwise residual of the G-BSDE along binomial paths, per component.
ResidualReport residual_check(const BsdeSolution& solution, const GBsdeParams& params, const Lattice& lattice,
                              std::size_t paths, std::uint64_t seed);

struct KMartingaleReport {
    std::vector<double> means;      ///< E_P[-K_T] per control; control 0 follows the argmax policy
    std::vector<double> std_errors;
    double worst = 0.0;             ///< max over controls
    double worst_se = 0.0;
};

/// E_P[-K_T] under the argmax policy and controls - 1 random corner controls.
KMartingaleReport k_martingale_check(const BsdeSolution& solution, const GBsdeParams& params,
                                     const Lattice& lattice, std::size_t controls, std::size_t paths,
                                     std::uint64_t seed, std::size_t component = 0);

/// Single-scenario solver for a degenerate box: solves the implicit one-step equation node by node.
BsdeSolution classical_oracle(const GBsdeParams& params, const Lattice& lattice);

} // namespace gcalc
