/**
 * @file harness.hpp
 * @brief Numerical checks of the a priori estimates for G-BSDEs.
 *
 * Every check solves on the lattice, forms the weighted norms of the
 * differences with the lattice engine and compares both sides. Two sets of
 * constants are evaluated for the three basic estimates:
 *
 *   printed:      1/sigma_min, 3/sigma_min, 1/sigma_min^2
 *   conservative: 5/sigma_min^2 for all three
 *
 * with sigma_min^2 = lower_min of the box.
 */
#pragma once

#include "gcalc/scenario.hpp"
#include "gcalc/solver.hpp"

#include <cstddef>
#include <optional>
#include <vector>

namespace gcalc {

/// {1, 2, 4, ..., 1024}
std::vector<double> default_beta_grid();

struct EstimateConstants {
    double y = 0.0;
    double z = 0.0;
    double eta = 0.0;
};

EstimateConstants printed_constants(const VolatilityBox& box);
EstimateConstants conservative_constants(const VolatilityBox& box);

struct AprioriRow {
    double beta = 0.0;
    double y2 = 0.0;
    double z2 = 0.0;
    double eta2 = 0.0;
    double terminal = 0.0; ///< e^{beta T} E|dY_T|^2
    double f_term = 0.0;   ///< |df|^2 / mu^2
    double g_term = 0.0;   ///< upper_max |dg|^2 / nu^2
    double bracket = 0.0;
    bool c_defined = false;
    double c_beta = 0.0;
    double coefficient = 0.0; ///< beta - mu^2 - nu^2 upper_max - C(beta)
    bool printed[3] = {true, true, true};
    bool conservative[3] = {true, true, true};
    bool printed_all() const { return printed[0] && printed[1] && printed[2]; }
    bool conservative_all() const { return conservative[0] && conservative[1] && conservative[2]; }
};

struct AprioriReport {
    double mu = 0.0;
    double nu = 0.0;
    EstimateConstants printed;
    EstimateConstants conservative;
    std::vector<AprioriRow> rows;
    std::optional<double> beta0_printed;      ///< smallest grid beta from which every larger one passes
    std::optional<double> beta0_conservative;
    bool printed_pass = false;
    bool conservative_pass = false;
    bool hypothesis_ii_flag = false; ///< equal Y fields with differing eta
    PicardReport picard1;
    PicardReport picard2;
};

/// Solves both problems and evaluates the three estimates on each grid beta (beta T > 700 skipped).
AprioriReport apriori_check(const GBsdeParams& params1, const GBsdeParams& params2, const Lattice& lattice,
                            std::vector<double> betas = default_beta_grid(), std::optional<double> mu = {},
                            std::optional<double> nu = {}, const PicardOptions& picard = {});

struct SupEstimateReport {
    double beta = 0.0;
    double lhs = 0.0; ///< E[sup_k e^{beta t_k} |dY_k|^2]
    double rhs = 0.0; ///< 3 * bracket
    bool approximate = false; ///< Monte Carlo over corner controls instead of the running-max DP
    bool holds = true;
};

/**
 * Sup form of the estimate. For d = 1 a dynamic program over (node, running max)
 * with the running max rounded up to one of `levels` values gives an upper estimate;
 * for d = 2 the maximum over random corner controls is used.
 */
SupEstimateReport sup_estimate_check(const GBsdeParams& params1, const GBsdeParams& params2,
                                     const Lattice& lattice, double beta, std::optional<double> mu = {},
                                     std::optional<double> nu = {}, const PicardOptions& picard = {},
                                     std::size_t levels = 256);

/// Same as above on already solved fields.
SupEstimateReport sup_estimate_from(const BsdeSolution& s1, const DriverFields& d1, const BsdeSolution& s2,
                                    const DriverFields& d2, const Lattice& lattice, double beta, double mu,
                                    double nu, std::size_t levels = 256);

struct RepresentationBoundRow {
    double beta = 0.0;
    double m2 = 0.0;
    double z2 = 0.0;
    double eta2 = 0.0;
    double rhs = 0.0; ///< 5 / lower_min e^{beta T} E[xi^2]
    bool holds = true;
};

struct RepresentationBoundReport {
    std::vector<RepresentationBoundRow> rows;
    std::optional<double> beta0;
    bool pass = false;
};

RepresentationBoundReport representation_bound_check(const TerminalFunctional& xi, const Lattice& lattice,
                                                     std::vector<double> betas = default_beta_grid());

struct CauchyRow {
    std::size_t m = 0;
    std::size_t n = 0;
    double lhs = 0.0;          ///< unweighted norms of the differences of (M, Z, eta)
    double xi_distance = 0.0;  ///< E[(xi^m - xi^n)^2]
    double rhs = 0.0;          ///< e^{beta T} 5 / lower_min * xi_distance
    bool holds = true;
};

struct CauchyReport {
    double beta = 0.0;
    std::vector<CauchyRow> rows;
    bool pass = false;
};

CauchyReport cauchy_sequence_check(const std::vector<TerminalFunctional>& sequence, const Lattice& lattice,
                                   double beta);

} // namespace gcalc
