// Batch experiment runner behind the gcalc command line tool.
//
// A run is one JSON config in, a summary.json plus CSV tables out. Configs are
// validated completely before any computation starts; nothing is written on a
// config error. Outputs depend only on (config, seed).
#pragma once

#include "gcalc/errors.hpp"
#include "gcalc/harness.hpp"
#include "gcalc/scenario.hpp"
#include "gcalc/solver.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace gcalc::cli {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kToolVersion = "1.0.0";

enum ExitCode : int { kOk = 0, kConfigError = 2, kNumericalError = 3, kCheckFailed = 4 };

/// Field-level config problem; the message starts with the JSON path.
class ConfigError : public InputError {
public:
    using InputError::InputError;
};

struct PayoffSpec {
    std::string id;
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;
    double strike = 0.0;
    std::string on = "sum";
    std::size_t axis = 0;
};

struct DriverSpec {
    std::string id = "zero";
    double c = 0.0;
    double r = 0.0;
    double a = 0.0;
    double gamma = 0.0;
    double a_y = 0.0, a_z = 0.0, a_eta = 0.0, b = 0.0, clamp = 0.0;
};

struct StepSpec {
    std::vector<std::size_t> breaks;
    std::vector<PayoffSpec> values;
};

struct EventSpec {
    std::string type = "positive"; ///< positive | above | interval
    double a = 0.0;
    double b = 0.0;
    std::string on = "sum";
    std::size_t axis = 0;
};

struct ExperimentConfig {
    std::string command;
    std::vector<double> lower, upper;
    std::size_t grid_points = 5;
    double horizon = 1.0;
    std::size_t steps = 100;
    double span = 6.0;
    std::size_t points = 401;
    bool align = true;
    std::vector<PayoffSpec> payoff;
    DriverSpec f, g;
    std::optional<double> beta, mu, nu;
    double tol = 1e-8;
    std::size_t max_iter = 60;
    std::uint64_t seed = 1;
    std::string out_dir = "gcalc_out";
    std::size_t stride_t = 1;
    std::size_t stride_x = 1;
    std::size_t check_paths = 256;

    // verify-estimates
    std::vector<PayoffSpec> second_payoff;
    DriverSpec second_f, second_g;
    double terminal_shift = 0.0;
    double f_shift = 0.0;
    std::vector<double> betas;
    std::optional<double> sup_beta;

    // ratio-decay
    StepSpec theta, zeta;
    std::size_t n_max = 20;
    bool regularize = true;
    std::vector<double> ratio_betas;

    // capacity
    EventSpec event;

    nlohmann::json echo; ///< normalised inputs
};

const std::vector<std::string>& commands();

/// Parses and validates a config document. command/seed/out override the file when given.
ExperimentConfig parse_config(const nlohmann::json& doc, const std::optional<std::string>& command = {},
                              const std::optional<std::uint64_t>& seed = {},
                              const std::optional<std::string>& out = {});

ExperimentConfig load_config(const std::string& path, const std::optional<std::string>& command = {},
                             const std::optional<std::uint64_t>& seed = {},
                             const std::optional<std::string>& out = {});

TerminalFunctional make_terminal(const std::vector<PayoffSpec>& specs, std::size_t d, double shift = 0.0);
GBsdeParams make_params(const std::vector<PayoffSpec>& payoff, const DriverSpec& f, const DriverSpec& g,
                        std::size_t d, double terminal_shift = 0.0, double f_shift = 0.0);
/// Declared Lipschitz constant of a driver in the f slot (g slot: times sqrt(d)).
double driver_lipschitz(const DriverSpec& spec, std::size_t d);

struct CsvTable {
    std::string name; ///< file name inside the output directory
    std::string text;
};

struct RunResult {
    int exit_code = kOk;
    std::string message;
    nlohmann::json summary;
    std::vector<CsvTable> tables;
};

/// Builds the lattice and everything else the command needs; ConfigError on violations.
Lattice make_lattice(const ExperimentConfig& cfg);

/// Runs the command. Module errors propagate.
RunResult run_experiment(const ExperimentConfig& cfg);

/// Writes summary.json and the tables; IoError on failure.
void write_outputs(const std::string& dir, const RunResult& result);

/// Full command line entry point; returns the process exit code.
int run_cli(int argc, char** argv);

/// %.12g
std::string format_number(double v);

} // namespace gcalc::cli
