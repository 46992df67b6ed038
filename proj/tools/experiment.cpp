#include "experiment.hpp"

#include "gcalc/calculus.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string_view>

namespace gcalc::cli {

using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// JSON field access with path-qualified errors

[[noreturn]] void fail(const std::string& path, const std::string& msg) { throw ConfigError(path + ": " + msg); }

std::string join(const std::string& path, std::string_view key) {
    return path.empty() ? std::string(key) : path + "." + std::string(key);
}

void require_object(const json& j, const std::string& path) {
    if (!j.is_object()) fail(path.empty() ? "config" : path, "must be an object");
}

void only_keys(const json& j, const std::string& path, std::initializer_list<std::string_view> keys) {
    require_object(j, path);
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(keys.begin(), keys.end(), it.key()) == keys.end())
            fail(join(path, it.key()), "unknown field");
}

const json* child(const json& j, std::string_view key) {
    const auto it = j.find(std::string(key));
    return it == j.end() ? nullptr : &*it;
}

double number_at(const json& v, const std::string& path) {
    if (!v.is_number()) fail(path, "must be a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) fail(path, "must be finite");
    return x;
}

double get_number(const json& j, const std::string& path, std::string_view key, std::optional<double> def) {
    const json* v = child(j, key);
    if (!v) {
        if (!def) fail(join(path, key), "is required");
        return *def;
    }
    return number_at(*v, join(path, key));
}

std::optional<double> get_optional(const json& j, const std::string& path, std::string_view key) {
    const json* v = child(j, key);
    if (!v || v->is_null()) return std::nullopt;
    return number_at(*v, join(path, key));
}

std::uint64_t count_at(const json& v, const std::string& path) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer()) {
        if (v.get<std::int64_t>() < 0) fail(path, "must be a nonnegative integer");
        return static_cast<std::uint64_t>(v.get<std::int64_t>());
    }
    fail(path, "must be a nonnegative integer");
}

std::uint64_t get_count(const json& j, const std::string& path, std::string_view key,
                        std::optional<std::uint64_t> def) {
    const json* v = child(j, key);
    if (!v) {
        if (!def) fail(join(path, key), "is required");
        return *def;
    }
    return count_at(*v, join(path, key));
}

bool get_bool(const json& j, const std::string& path, std::string_view key, bool def) {
    const json* v = child(j, key);
    if (!v) return def;
    if (!v->is_boolean()) fail(join(path, key), "must be true or false");
    return v->get<bool>();
}

std::string get_string(const json& j, const std::string& path, std::string_view key,
                       std::optional<std::string> def) {
    const json* v = child(j, key);
    if (!v) {
        if (!def) fail(join(path, key), "is required");
        return *def;
    }
    if (!v->is_string()) fail(join(path, key), "must be a string");
    return v->get<std::string>();
}

std::vector<double> number_list(const json& v, const std::string& path) {
    if (v.is_number()) return {number_at(v, path)};
    if (!v.is_array() || v.empty()) fail(path, "must be a number or a nonempty array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(number_at(v[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

void positive(double v, const std::string& path) {
    if (!(v > 0.0)) fail(path, "must be positive");
}

// ---------------------------------------------------------------------------
// Catalog parsing

const std::vector<std::string> kPayoffs = {"constant", "linear", "quadratic", "neg-quadratic",
                                           "abs",      "call",   "butterfly"};
const std::vector<std::string> kDrivers = {"zero",         "constant",     "linear-in-y",
                                           "linear-in-z",  "qv-constant",  "clamped-custom-affine"};

void parse_target(const json& j, const std::string& path, std::size_t d, std::string& on, std::size_t& axis) {
    on = get_string(j, path, "on", "sum");
    if (on != "sum" && on != "norm" && on != "axis") fail(join(path, "on"), "must be sum, norm or axis");
    axis = get_count(j, path, "axis", 0);
    if (axis >= d) fail(join(path, "axis"), "must be smaller than the box dimension");
}

PayoffSpec parse_payoff(const json& j, const std::string& path, std::size_t d) {
    only_keys(j, path, {"id", "c", "a", "b", "K", "on", "axis"});
    PayoffSpec p;
    p.id = get_string(j, path, "id", std::nullopt);
    if (std::find(kPayoffs.begin(), kPayoffs.end(), p.id) == kPayoffs.end())
        fail(join(path, "id"), "unknown payoff '" + p.id + "'");
    parse_target(j, path, d, p.on, p.axis);
    if (p.id == "constant") {
        p.c = get_number(j, path, "c", 0.0);
    } else if (p.id == "linear") {
        p.a = get_number(j, path, "a", 1.0);
        p.b = get_number(j, path, "b", 0.0);
    } else if (p.id == "quadratic" || p.id == "neg-quadratic") {
        p.a = get_number(j, path, "a", 1.0);
    } else if (p.id == "call") {
        p.strike = get_number(j, path, "K", std::nullopt);
    } else if (p.id == "butterfly") {
        p.a = get_number(j, path, "a", std::nullopt);
        p.b = get_number(j, path, "b", std::nullopt);
        if (!(p.a < p.b)) fail(join(path, "b"), "must exceed a");
    }
    return p;
}

std::vector<PayoffSpec> parse_payoffs(const json& j, const std::string& path, std::size_t d) {
    std::vector<PayoffSpec> out;
    if (j.is_array()) {
        if (j.empty() || j.size() > 4) fail(path, "must hold between 1 and 4 components");
        for (std::size_t i = 0; i < j.size(); ++i)
            out.push_back(parse_payoff(j[i], path + "[" + std::to_string(i) + "]", d));
    } else {
        out.push_back(parse_payoff(j, path, d));
    }
    return out;
}

DriverSpec parse_driver(const json& j, const std::string& path) {
    only_keys(j, path, {"id", "c", "r", "a", "gamma", "a_y", "a_z", "a_eta", "b", "clamp"});
    DriverSpec s;
    s.id = get_string(j, path, "id", std::nullopt);
    if (std::find(kDrivers.begin(), kDrivers.end(), s.id) == kDrivers.end())
        fail(join(path, "id"), "unknown driver '" + s.id + "'");
    if (s.id == "constant") s.c = get_number(j, path, "c", std::nullopt);
    if (s.id == "linear-in-y") s.r = get_number(j, path, "r", std::nullopt);
    if (s.id == "linear-in-z") s.a = get_number(j, path, "a", std::nullopt);
    if (s.id == "qv-constant") s.gamma = get_number(j, path, "gamma", std::nullopt);
    if (s.id == "clamped-custom-affine") {
        s.a_y = get_number(j, path, "a_y", 0.0);
        s.a_z = get_number(j, path, "a_z", 0.0);
        s.a_eta = get_number(j, path, "a_eta", 0.0);
        s.b = get_number(j, path, "b", 0.0);
        s.clamp = get_number(j, path, "clamp", std::nullopt);
        positive(s.clamp, join(path, "clamp"));
    }
    return s;
}

void parse_drivers(const json* j, const std::string& path, DriverSpec& f, DriverSpec& g) {
    if (!j) return;
    only_keys(*j, path, {"f", "g"});
    if (const json* v = child(*j, "f")) f = parse_driver(*v, join(path, "f"));
    if (const json* v = child(*j, "g")) g = parse_driver(*v, join(path, "g"));
}

StepSpec parse_step(const json& j, const std::string& path, std::size_t d, std::size_t steps) {
    only_keys(j, path, {"breaks", "values"});
    StepSpec s;
    const json* br = child(j, "breaks");
    if (!br || !br->is_array() || br->size() < 2) fail(join(path, "breaks"), "must be an array of at least 2 steps");
    for (std::size_t i = 0; i < br->size(); ++i) {
        s.breaks.push_back(count_at((*br)[i], join(path, "breaks") + "[" + std::to_string(i) + "]"));
        if (i > 0 && s.breaks[i] <= s.breaks[i - 1]) fail(join(path, "breaks"), "must increase strictly");
    }
    if (s.breaks.back() != steps) fail(join(path, "breaks"), "last break must equal time.N");
    const json* vals = child(j, "values");
    if (!vals || !vals->is_array() || vals->size() + 1 != s.breaks.size())
        fail(join(path, "values"), "must hold one payoff per interval");
    for (std::size_t i = 0; i < vals->size(); ++i)
        s.values.push_back(parse_payoff((*vals)[i], join(path, "values") + "[" + std::to_string(i) + "]", d));
    return s;
}

// ---------------------------------------------------------------------------
// Echo

json payoff_json(const PayoffSpec& p) {
    json j{{"id", p.id}, {"on", p.on}};
    if (p.on == "axis") j["axis"] = p.axis;
    if (p.id == "constant") j["c"] = p.c;
    if (p.id == "linear") j["a"] = p.a, j["b"] = p.b;
    if (p.id == "quadratic" || p.id == "neg-quadratic") j["a"] = p.a;
    if (p.id == "call") j["K"] = p.strike;
    if (p.id == "butterfly") j["a"] = p.a, j["b"] = p.b;
    return j;
}

json payoffs_json(const std::vector<PayoffSpec>& ps) {
    json arr = json::array();
    for (const auto& p : ps) arr.push_back(payoff_json(p));
    return arr;
}

json driver_json(const DriverSpec& s) {
    json j{{"id", s.id}};
    if (s.id == "constant") j["c"] = s.c;
    if (s.id == "linear-in-y") j["r"] = s.r;
    if (s.id == "linear-in-z") j["a"] = s.a;
    if (s.id == "qv-constant") j["gamma"] = s.gamma;
    if (s.id == "clamped-custom-affine")
        j.update(json{{"a_y", s.a_y}, {"a_z", s.a_z}, {"a_eta", s.a_eta}, {"b", s.b}, {"clamp", s.clamp}});
    return j;
}

json step_json(const StepSpec& s) { return json{{"breaks", s.breaks}, {"values", payoffs_json(s.values)}}; }

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json echo_config(const ExperimentConfig& c) {
    json j;
    j["command"] = c.command;
    j["box"] = {{"d", c.lower.size()}, {"lower", c.lower}, {"upper", c.upper}, {"grid_points", c.grid_points}};
    j["time"] = {{"T", c.horizon}, {"N", c.steps}};
    j["space"] = {{"span", c.span}, {"points", c.points}, {"align", c.align}};
    j["seed"] = c.seed;
    j["output"] = {{"stride_t", c.stride_t}, {"stride_x", c.stride_x}};
    if (c.command == "capacity") {
        j["event"] = {{"type", c.event.type}, {"a", c.event.a}, {"b", c.event.b}, {"on", c.event.on}};
        return j;
    }
    if (c.command == "ratio-decay") {
        j["theta"] = step_json(c.theta);
        j["zeta"] = step_json(c.zeta);
        j["n_max"] = c.n_max;
        j["regularize"] = c.regularize;
        j["betas"] = c.ratio_betas;
        return j;
    }
    j["payoff"] = payoffs_json(c.payoff);
    if (c.command == "expect") return j;
    j["driver"] = {{"f", driver_json(c.f)}, {"g", driver_json(c.g)}};
    j["check_paths"] = c.check_paths;
    j["picard"] = {{"beta", optional_json(c.beta)}, {"mu", optional_json(c.mu)}, {"nu", optional_json(c.nu)},
                   {"tol", c.tol}, {"max_iter", c.max_iter}};
    if (c.command == "verify-estimates") {
        j["second"] = {{"payoff", payoffs_json(c.second_payoff)},
                       {"driver", {{"f", driver_json(c.second_f)}, {"g", driver_json(c.second_g)}}},
                       {"terminal_shift", c.terminal_shift},
                       {"f_shift", c.f_shift}};
        j["betas"] = c.betas;
        j["sup_beta"] = optional_json(c.sup_beta);
    }
    return j;
}

// ---------------------------------------------------------------------------
// Catalog construction

double target_value(std::span<const double> x, const std::string& on, std::size_t axis) {
    if (on == "axis") return x[axis];
    double s = 0.0;
    if (on == "norm") {
        for (double v : x) s += v * v;
        return std::sqrt(s);
    }
    for (double v : x) s += v;
    return s;
}

double apply_payoff(const PayoffSpec& p, double s) {
    if (p.id == "constant") return p.c;
    if (p.id == "linear") return p.a * s + p.b;
    if (p.id == "quadratic") return p.a * s * s;
    if (p.id == "neg-quadratic") return -p.a * s * s;
    if (p.id == "abs") return std::abs(s);
    if (p.id == "call") return std::max(s - p.strike, 0.0);
    const double m = 0.5 * (p.a + p.b);
    return std::max(s - p.a, 0.0) - 2.0 * std::max(s - m, 0.0) + std::max(s - p.b, 0.0);
}

double payoff_lipschitz(const PayoffSpec& p, std::size_t d) {
    const double scale = p.on == "sum" ? std::sqrt(static_cast<double>(d)) : 1.0;
    if (p.id == "constant") return 0.0;
    if (p.id == "linear") return std::abs(p.a) * scale;
    if (p.id == "quadratic" || p.id == "neg-quadratic")
        return p.a == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return scale;
}

std::function<double(std::span<const double>)> scalar_payoff(const PayoffSpec& p) {
    return [p](std::span<const double> x) { return apply_payoff(p, target_value(x, p.on, p.axis)); };
}

// Driver value for component c given its own (y, z_c., eta_c.).
double driver_value(const DriverSpec& s, double y, std::span<const double> z, std::span<const double> eta) {
    if (s.id == "zero") return 0.0;
    if (s.id == "constant") return s.c;
    if (s.id == "qv-constant") return s.gamma;
    if (s.id == "linear-in-y") return -s.r * y;
    double sz = 0.0, se = 0.0;
    for (double v : z) sz += v;
    for (double v : eta) se += v;
    if (s.id == "linear-in-z") return s.a * sz;
    return std::clamp(s.a_y * y + s.a_z * sz + s.a_eta * se + s.b, -s.clamp, s.clamp);
}

Driver make_driver(const DriverSpec& s, std::size_t n, std::size_t d, bool g_slot, double shift) {
    if (s.id == "zero" && shift == 0.0) return {};
    return [s, n, d, g_slot, shift](double, std::span<const double> y, std::span<const double> z,
                                    std::span<const double> eta, std::span<double> out) {
        for (std::size_t c = 0; c < n; ++c) {
            const double v = driver_value(s, y[c], z.subspan(c * d, d), eta.subspan(c * d, d)) + shift;
            if (g_slot)
                for (std::size_t j = 0; j < d; ++j) out[c * d + j] = v;
            else
                out[c] = v;
        }
    };
}

std::string csv_state(const Lattice& lat, std::size_t node) {
    const auto x = lat.state(node);
    std::string s;
    for (std::size_t j = 0; j < x.size(); ++j) {
        if (j) s += ';';
        s += format_number(x[j]);
    }
    return s;
}

std::vector<std::size_t> csv_nodes(const Lattice& lat, std::size_t stride) {
    const SpaceGrid& sg = lat.space();
    const std::size_t c = sg.center();
    std::vector<std::size_t> out;
    for (std::size_t node = 0; node < lat.nodes(); ++node) {
        bool keep = true;
        for (std::size_t j = 0; j < sg.d(); ++j) {
            const std::size_t i = sg.axis_index(node, j);
            keep = keep && (i > c ? i - c : c - i) % stride == 0;
        }
        if (keep) out.push_back(node);
    }
    return out;
}

std::vector<std::size_t> csv_times(std::size_t steps, std::size_t stride) {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k <= steps; k += stride) out.push_back(k);
    if (out.back() != steps) out.push_back(steps);
    return out;
}

CsvTable field_table(const std::string& name, const Lattice& lat, const ScenarioField& field,
                     const ExperimentConfig& cfg) {
    std::string text = "t,state";
    for (std::size_t c = 0; c < field.n; ++c) text += ",value_" + std::to_string(c + 1);
    text += '\n';
    const auto nodes = csv_nodes(lat, cfg.stride_x);
    for (std::size_t k : csv_times(lat.steps(), cfg.stride_t)) {
        if (field.values[k].empty()) continue;
        for (std::size_t node : nodes) {
            text += format_number(lat.time().t(k)) + "," + csv_state(lat, node);
            for (std::size_t c = 0; c < field.n; ++c) text += "," + format_number(field.value(k, c, node));
            text += '\n';
        }
    }
    return {name, std::move(text)};
}

CsvTable solution_table(const Lattice& lat, const BsdeSolution& s, const ExperimentConfig& cfg) {
    const std::size_t n = s.n, d = s.d;
    std::string text = "t,state";
    for (std::size_t c = 0; c < n; ++c) text += ",Y_" + std::to_string(c + 1);
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t c = 0; c < n; ++c) text += ",Z_" + std::to_string(j + 1) + std::to_string(c + 1);
    for (std::size_t p = 0; p < n * d; ++p) text += ",eta_" + std::to_string(p + 1);
    for (std::size_t c = 0; c < n; ++c) text += ",K_" + std::to_string(c + 1);
    text += '\n';
    const auto nodes = csv_nodes(lat, cfg.stride_x);
    for (std::size_t k : csv_times(lat.steps(), cfg.stride_t)) {
        const bool last = k == lat.steps();
        for (std::size_t node : nodes) {
            text += format_number(lat.time().t(k)) + "," + csv_state(lat, node);
            for (std::size_t c = 0; c < n; ++c) text += "," + format_number(s.y(k, c, node));
            for (std::size_t j = 0; j < d; ++j)
                for (std::size_t c = 0; c < n; ++c) text += last ? "," : "," + format_number(s.z(k, c, j, node));
            for (std::size_t c = 0; c < n; ++c)
                for (std::size_t j = 0; j < d; ++j) text += last ? "," : "," + format_number(s.eta_at(k, c, j, node));
            for (std::size_t c = 0; c < n; ++c) text += last ? "," : "," + format_number(s.K[k][c * s.nodes + node]);
            text += '\n';
        }
    }
    return {"solution.csv", std::move(text)};
}

json picard_json(const PicardReport& r) {
    return json{{"iterations", r.iterations},
                {"converged_at", r.converged_at},
                {"beta", r.beta},
                {"beta_searched", r.beta_searched},
                {"beta_search_failed", r.beta_search_failed},
                {"mu", r.mu},
                {"nu", r.nu},
                {"theoretical_factor", r.theoretical_factor},
                {"measured_factor", r.measured_factor},
                {"measured_factor_squared", r.measured_factor_squared},
                {"lipschitz_observed", r.lipschitz_observed},
                {"distances", r.distances}};
}

json at_origin(const Lattice& lat, const BsdeSolution& s) {
    const std::size_t o = lat.origin();
    json y = json::array(), z = json::array(), eta = json::array();
    for (std::size_t c = 0; c < s.n; ++c) {
        y.push_back(s.y(0, c, o));
        for (std::size_t j = 0; j < s.d; ++j) {
            z.push_back(s.z(0, c, j, o));
            eta.push_back(s.eta_at(0, c, j, o));
        }
    }
    return json{{"Y0", y}, {"Z0", z}, {"eta0", eta}, {"min_K", s.min_k()}, {"boundary_nodes", s.boundary_nodes}};
}

json residual_json(const ResidualReport& r) {
    return json{{"paths", r.paths},
                {"on_policy", r.on_policy},
                {"off_policy", r.off_policy},
                {"min_margin", r.min_margin},
                {"min_K", r.min_k}};
}

PicardOptions picard_options(const ExperimentConfig& cfg) {
    PicardOptions o;
    o.beta = cfg.beta;
    o.mu = cfg.mu;
    o.nu = cfg.nu;
    o.tol = cfg.tol;
    o.max_iter = cfg.max_iter;
    return o;
}

// ---------------------------------------------------------------------------
// Commands

RunResult run_expect(const ExperimentConfig& cfg, const Lattice& lat) {
    const TerminalFunctional xi = make_terminal(cfg.payoff, lat.d());
    const ScenarioField field = conditional_expectation_field(lat, xi);
    TerminalFunctional neg = xi;
    neg.payoff = [p = xi.payoff](std::span<const double> x, std::span<const double> m, std::span<double> out) {
        p(x, m, out);
        for (double& v : out) v = -v;
    };
    const auto lower = sublinear_expectation(lat, neg);
    RunResult r;
    json up = json::array(), lo = json::array();
    for (std::size_t c = 0; c < xi.n; ++c) {
        up.push_back(field.value(0, c, lat.origin()));
        lo.push_back(-lower[c]);
    }
    r.summary["outputs"] = {{"expectation", up}, {"lower_expectation", lo}};
    r.tables.push_back(field_table("expect.csv", lat, field, cfg));
    return r;
}

RunResult run_represent(const ExperimentConfig& cfg, const Lattice& lat) {
    GBsdeParams params;
    params.xi = make_terminal(cfg.payoff, lat.d());
    const BsdeSolution s = represent_martingale(params.xi, lat);
    const ResidualReport res = residual_check(s, params, lat, cfg.check_paths, cfg.seed);
    const KMartingaleReport km = k_martingale_check(s, params, lat, 8, cfg.check_paths, cfg.seed);
    RunResult r;
    r.summary["outputs"] = at_origin(lat, s);
    r.summary["outputs"]["residual"] = residual_json(res);
    r.summary["outputs"]["k_martingale"] = {{"worst", km.worst}, {"worst_se", km.worst_se}, {"means", km.means}};
    r.tables.push_back(solution_table(lat, s, cfg));
    return r;
}

RunResult run_solve(const ExperimentConfig& cfg, const Lattice& lat) {
    const GBsdeParams params = make_params(cfg.payoff, cfg.f, cfg.g, lat.d());
    const GBsdeResult res = solve_gbsde(params, lat, picard_options(cfg));
    const ResidualReport rc = residual_check(res.solution, params, lat, cfg.check_paths, cfg.seed);
    RunResult r;
    r.summary["outputs"] = at_origin(lat, res.solution);
    r.summary["outputs"]["picard"] = picard_json(res.report);
    r.summary["outputs"]["residual"] = residual_json(rc);
    r.tables.push_back(solution_table(lat, res.solution, cfg));
    std::string text = "iteration,distance,factor\n";
    for (std::size_t i = 0; i < res.report.distances.size(); ++i) {
        text += std::to_string(i + 1) + "," + format_number(res.report.distances[i]) + ",";
        if (i > 0 && res.report.distances[i - 1] > 0.0)
            text += format_number(res.report.distances[i] / res.report.distances[i - 1]);
        text += '\n';
    }
    r.tables.push_back({"picard.csv", std::move(text)});
    return r;
}

RunResult run_verify(const ExperimentConfig& cfg, const Lattice& lat) {
    const std::size_t d = lat.d();
    const GBsdeParams p1 = make_params(cfg.payoff, cfg.f, cfg.g, d);
    const GBsdeParams p2 = make_params(cfg.second_payoff, cfg.second_f, cfg.second_g, d, cfg.terminal_shift,
                                       cfg.f_shift);
    const PicardOptions opts = picard_options(cfg);
    const AprioriReport ap = apriori_check(p1, p2, lat, cfg.betas, cfg.mu, cfg.nu, opts);

    double sup_beta = ap.rows.back().beta;
    if (cfg.sup_beta) {
        sup_beta = *cfg.sup_beta;
    } else {
        for (const auto& row : ap.rows)
            if (row.coefficient >= lat.box().lower_min()) {
                sup_beta = row.beta;
                break;
            }
    }
    const SupEstimateReport sup = sup_estimate_check(p1, p2, lat, sup_beta, ap.mu, ap.nu, opts);
    const RepresentationBoundReport rb = representation_bound_check(p1.xi, lat, cfg.betas);

    RunResult r;
    const auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    r.summary["outputs"] = {
        {"mu", ap.mu},
        {"nu", ap.nu},
        {"constants_printed", {ap.printed.y, ap.printed.z, ap.printed.eta}},
        {"constants_conservative", {ap.conservative.y, ap.conservative.z, ap.conservative.eta}},
        {"beta0_printed", opt(ap.beta0_printed)},
        {"beta0_conservative", opt(ap.beta0_conservative)},
        {"printed_pass", ap.printed_pass},
        {"conservative_pass", ap.conservative_pass},
        {"hypothesis_ii_flag", ap.hypothesis_ii_flag},
        {"picard_first", picard_json(ap.picard1)},
        {"picard_second", picard_json(ap.picard2)},
        {"sup_estimate",
         {{"beta", sup.beta}, {"lhs", sup.lhs}, {"rhs", sup.rhs}, {"approximate", sup.approximate},
          {"holds", sup.holds}}},
        {"representation_bound", {{"beta0", opt(rb.beta0)}, {"pass", rb.pass}}}};

    std::string t = "beta,dY2,dZ2,deta2,terminal,f_term,g_term,bracket,C_beta,coefficient,"
                    "printed_Y,printed_Z,printed_eta,conservative_Y,conservative_Z,conservative_eta\n";
    for (const auto& row : ap.rows) {
        t += format_number(row.beta) + "," + format_number(row.y2) + "," + format_number(row.z2) + "," +
             format_number(row.eta2) + "," + format_number(row.terminal) + "," + format_number(row.f_term) + "," +
             format_number(row.g_term) + "," + format_number(row.bracket) + "," +
             (row.c_defined ? format_number(row.c_beta) : std::string()) + "," + format_number(row.coefficient);
        for (bool b : row.printed) t += b ? ",1" : ",0";
        for (bool b : row.conservative) t += b ? ",1" : ",0";
        t += '\n';
    }
    r.tables.push_back({"apriori.csv", std::move(t)});
    std::string rt = "beta,M2,Z2,eta2,rhs,holds\n";
    for (const auto& row : rb.rows)
        rt += format_number(row.beta) + "," + format_number(row.m2) + "," + format_number(row.z2) + "," +
              format_number(row.eta2) + "," + format_number(row.rhs) + "," + (row.holds ? "1" : "0") + "\n";
    r.tables.push_back({"representation.csv", std::move(rt)});

    if (!ap.conservative_pass || !rb.pass || !sup.holds) {
        r.exit_code = kCheckFailed;
        r.message = "estimate verification failed:";
        if (!ap.conservative_pass) r.message += " a priori estimates (conservative constants);";
        if (!rb.pass) r.message += " representation bound;";
        if (!sup.holds) r.message += " sup estimate;";
    }
    return r;
}

StepProcess make_step(const StepSpec& s) {
    StepProcess p;
    p.breaks = s.breaks;
    for (const auto& v : s.values) p.values.push_back(scalar_payoff(v));
    return p;
}

RunResult run_ratio(const ExperimentConfig& cfg, const Lattice& lat) {
    const RatioDecayReport rep =
        ratio_decay_report(lat, make_step(cfg.theta), make_step(cfg.zeta), cfg.ratio_betas, cfg.n_max, cfg.regularize);
    RunResult r;
    bool all = true;
    std::string t = "n,C,D,beta,B,T,l,m,holds\n";
    for (const auto& s : rep.steps) {
        all = all && s.holds;
        t += std::to_string(s.n) + "," + format_number(s.c) + "," + format_number(s.d) + "," + format_number(s.beta) +
             "," + format_number(s.b) + "," + format_number(s.t) + "," + format_number(s.l) + "," +
             format_number(s.m) + "," + (s.holds ? "1" : "0") + "\n";
    }
    r.tables.push_back({"ratio_decay.csv", std::move(t)});
    std::string e = "beta,numerator,denominator,ratio\n";
    for (const auto& en : rep.entries)
        e += format_number(en.beta) + "," + format_number(en.numerator) + "," + format_number(en.denominator) + "," +
             format_number(en.ratio) + "\n";
    r.tables.push_back({"ratio_entries.csv", std::move(e)});
    const auto& last = rep.steps.back();
    r.summary["outputs"] = {{"all_hold", all},
                            {"n_max", last.n},
                            {"beta_n_max", last.beta},
                            {"B_n_max", last.b},
                            {"T_n_max", last.t}};
    if (!all) {
        r.exit_code = kCheckFailed;
        r.message = "B_n <= 1/n failed for some n";
    }
    return r;
}

RunResult run_capacity(const ExperimentConfig& cfg, const Lattice& lat) {
    const EventSpec ev = cfg.event;
    const TerminalFunctional ind = TerminalFunctional::scalar(0.0, [ev](std::span<const double> x) {
        const double s = target_value(x, ev.on, ev.axis);
        if (ev.type == "positive") return s > 0.0 ? 1.0 : 0.0;
        if (ev.type == "above") return s > ev.a ? 1.0 : 0.0;
        return (s >= ev.a && s <= ev.b) ? 1.0 : 0.0;
    });
    const double cap = capacity_estimate(lat, ind);
    RunResult r;
    r.summary["outputs"] = {{"capacity", cap}};
    r.tables.push_back(field_table("capacity.csv", lat, conditional_expectation_field(lat, ind), cfg));
    return r;
}

} // namespace

// ---------------------------------------------------------------------------

std::string format_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v == 0.0 ? 0.0 : v);
    return buf;
}

const std::vector<std::string>& commands() {
    static const std::vector<std::string> c = {"expect", "represent", "solve", "verify-estimates", "ratio-decay",
                                               "capacity"};
    return c;
}

double driver_lipschitz(const DriverSpec& s, std::size_t d) {
    const double rd = std::sqrt(static_cast<double>(d));
    if (s.id == "linear-in-y") return std::abs(s.r);
    if (s.id == "linear-in-z") return std::abs(s.a) * rd;
    if (s.id == "clamped-custom-affine") return std::max({std::abs(s.a_y), std::abs(s.a_z) * rd, std::abs(s.a_eta) * rd});
    return 0.0;
}

TerminalFunctional make_terminal(const std::vector<PayoffSpec>& specs, std::size_t d, double shift) {
    double lip = 0.0;
    for (const auto& p : specs) lip = std::max(lip, payoff_lipschitz(p, d));
    std::vector<std::function<double(std::span<const double>)>> fs;
    for (const auto& p : specs) fs.push_back(scalar_payoff(p));
    return TerminalFunctional::vector(specs.size(), lip, [fs, shift](std::span<const double> x, std::span<double> out) {
        for (std::size_t c = 0; c < fs.size(); ++c) out[c] = fs[c](x) + shift;
    });
}

GBsdeParams make_params(const std::vector<PayoffSpec>& payoff, const DriverSpec& f, const DriverSpec& g,
                        std::size_t d, double terminal_shift, double f_shift) {
    GBsdeParams p;
    p.xi = make_terminal(payoff, d, terminal_shift);
    const std::size_t n = payoff.size();
    p.f = make_driver(f, n, d, false, f_shift);
    p.g = make_driver(g, n, d, true, 0.0);
    p.lipschitz = std::max(driver_lipschitz(f, d), driver_lipschitz(g, d) * std::sqrt(static_cast<double>(d)));
    return p;
}

ExperimentConfig parse_config(const json& doc, const std::optional<std::string>& command,
                              const std::optional<std::uint64_t>& seed, const std::optional<std::string>& out) {
    only_keys(doc, "", {"command", "box", "time", "space", "payoff", "driver", "picard", "seed", "output",
                        "check_paths", "second", "betas", "sup_beta", "theta", "zeta", "n_max", "regularize",
                        "ratio_betas", "event"});
    ExperimentConfig c;
    const std::string file_cmd = get_string(doc, "", "command", command.value_or(""));
    c.command = command.value_or(file_cmd);
    if (command && child(doc, "command") && file_cmd != *command)
        fail("command", "config says '" + file_cmd + "' but the command line says '" + *command + "'");
    if (std::find(commands().begin(), commands().end(), c.command) == commands().end())
        fail("command", "unknown command '" + c.command + "'");

    const json* box = child(doc, "box");
    if (!box) fail("box", "is required");
    only_keys(*box, "box", {"d", "lower", "upper", "grid_points"});
    const json* lo = child(*box, "lower");
    const json* hi = child(*box, "upper");
    if (!lo) fail("box.lower", "is required");
    if (!hi) fail("box.upper", "is required");
    c.lower = number_list(*lo, "box.lower");
    c.upper = number_list(*hi, "box.upper");
    if (c.lower.size() != c.upper.size()) fail("box.upper", "must have the same length as box.lower");
    if (c.lower.size() > 2) fail("box.lower", "dimension must be 1 or 2");
    if (const json* dv = child(*box, "d"))
        if (count_at(*dv, "box.d") != c.lower.size()) fail("box.d", "does not match the length of box.lower");
    for (std::size_t j = 0; j < c.lower.size(); ++j) {
        positive(c.lower[j], "box.lower[" + std::to_string(j) + "]");
        if (c.upper[j] < c.lower[j]) fail("box.upper[" + std::to_string(j) + "]", "must be >= box.lower");
    }
    c.grid_points = get_count(*box, "box", "grid_points", 5);

    const json* time = child(doc, "time");
    if (!time) fail("time", "is required");
    only_keys(*time, "time", {"T", "N"});
    c.horizon = get_number(*time, "time", "T", std::nullopt);
    positive(c.horizon, "time.T");
    c.steps = get_count(*time, "time", "N", std::nullopt);
    if (c.steps < 1 || c.steps > Lattice::kMaxSteps) fail("time.N", "must lie in [1, 400]");

    if (const json* sp = child(doc, "space")) {
        only_keys(*sp, "space", {"span", "points", "align"});
        c.span = get_number(*sp, "space", "span", 6.0);
        positive(c.span, "space.span");
        c.points = get_count(*sp, "space", "points", 401);
        c.align = get_bool(*sp, "space", "align", true);
    }
    if (c.points < 3 || c.points % 2 == 0 || c.points > Lattice::kMaxPoints)
        fail("space.points", "must be odd and lie in [3, 1025]");

    if (const json* s = child(doc, "seed")) c.seed = count_at(*s, "seed");
    if (seed) c.seed = *seed;

    if (const json* o = child(doc, "output")) {
        only_keys(*o, "output", {"dir", "stride_t", "stride_x"});
        c.out_dir = get_string(*o, "output", "dir", c.out_dir);
        c.stride_t = get_count(*o, "output", "stride_t", 1);
        c.stride_x = get_count(*o, "output", "stride_x", 1);
        if (c.stride_t < 1) fail("output.stride_t", "must be at least 1");
        if (c.stride_x < 1) fail("output.stride_x", "must be at least 1");
    }
    if (out) c.out_dir = *out;
    if (c.out_dir.empty()) fail("output.dir", "must not be empty");

    const std::size_t d = c.lower.size();
    const bool needs_payoff = c.command == "expect" || c.command == "represent" || c.command == "solve" ||
                              c.command == "verify-estimates";
    if (needs_payoff) {
        const json* p = child(doc, "payoff");
        if (!p) fail("payoff", "is required for " + c.command);
        c.payoff = parse_payoffs(*p, "payoff", d);
    }
    parse_drivers(child(doc, "driver"), "driver", c.f, c.g);
    if (c.command == "represent" && (c.f.id != "zero" || c.g.id != "zero"))
        fail("driver", "represent takes no drivers; use solve");

    if (const json* pc = child(doc, "picard")) {
        only_keys(*pc, "picard", {"beta", "mu", "nu", "tol", "max_iter"});
        c.beta = get_optional(*pc, "picard", "beta");
        c.mu = get_optional(*pc, "picard", "mu");
        c.nu = get_optional(*pc, "picard", "nu");
        c.tol = get_number(*pc, "picard", "tol", 1e-8);
        c.max_iter = get_count(*pc, "picard", "max_iter", 60);
    }
    if (c.beta && (*c.beta < 0.0 || *c.beta * c.horizon > kMaxBetaT))
        fail("picard.beta", "must be nonnegative with beta * T <= 700");
    if (c.mu) positive(*c.mu, "picard.mu");
    if (c.nu) positive(*c.nu, "picard.nu");
    positive(c.tol, "picard.tol");
    if (c.max_iter < 1 || c.max_iter > 10000) fail("picard.max_iter", "must lie in [1, 10000]");
    c.check_paths = get_count(doc, "", "check_paths", 256);
    if (c.check_paths < 1) fail("check_paths", "must be at least 1");

    c.second_payoff = c.payoff;
    c.second_f = c.f;
    c.second_g = c.g;
    c.betas = default_beta_grid();
    if (c.command == "verify-estimates") {
        if (const json* s = child(doc, "second")) {
            only_keys(*s, "second", {"payoff", "driver", "terminal_shift", "f_shift"});
            if (const json* p = child(*s, "payoff")) {
                c.second_payoff = parse_payoffs(*p, "second.payoff", d);
                if (c.second_payoff.size() != c.payoff.size())
                    fail("second.payoff", "must have as many components as payoff");
            }
            parse_drivers(child(*s, "driver"), "second.driver", c.second_f, c.second_g);
            c.terminal_shift = get_number(*s, "second", "terminal_shift", 0.0);
            c.f_shift = get_number(*s, "second", "f_shift", 0.0);
        }
        if (const json* b = child(doc, "betas")) c.betas = number_list(*b, "betas");
        for (double b : c.betas)
            if (!(b > 0.0)) fail("betas", "entries must be positive");
        if (std::none_of(c.betas.begin(), c.betas.end(), [&](double b) { return b * c.horizon <= kMaxBetaT; }))
            fail("betas", "no entry satisfies beta * T <= 700");
        c.sup_beta = get_optional(doc, "", "sup_beta");
        if (c.sup_beta && (*c.sup_beta < 0.0 || *c.sup_beta * c.horizon > kMaxBetaT))
            fail("sup_beta", "must be nonnegative with beta * T <= 700");
    }

    if (c.command == "ratio-decay") {
        const json* th = child(doc, "theta");
        const json* ze = child(doc, "zeta");
        if (!th) fail("theta", "is required for ratio-decay");
        if (!ze) fail("zeta", "is required for ratio-decay");
        c.theta = parse_step(*th, "theta", d, c.steps);
        c.zeta = parse_step(*ze, "zeta", d, c.steps);
        c.n_max = get_count(doc, "", "n_max", 20);
        if (c.n_max < 1 || c.n_max > 10000) fail("n_max", "must lie in [1, 10000]");
        c.regularize = get_bool(doc, "", "regularize", true);
        if (const json* b = child(doc, "ratio_betas")) c.ratio_betas = number_list(*b, "ratio_betas");
        for (double b : c.ratio_betas)
            if (!(b > 0.0)) fail("ratio_betas", "entries must be positive");
    }

    if (c.command == "capacity") {
        const json* ev = child(doc, "event");
        if (!ev) fail("event", "is required for capacity");
        only_keys(*ev, "event", {"type", "a", "b", "on", "axis"});
        c.event.type = get_string(*ev, "event", "type", "positive");
        if (c.event.type != "positive" && c.event.type != "above" && c.event.type != "interval")
            fail("event.type", "must be positive, above or interval");
        if (c.event.type != "positive") c.event.a = get_number(*ev, "event", "a", std::nullopt);
        if (c.event.type == "interval") {
            c.event.b = get_number(*ev, "event", "b", std::nullopt);
            if (!(c.event.a <= c.event.b)) fail("event.b", "must be >= event.a");
        }
        parse_target(*ev, "event", d, c.event.on, c.event.axis);
    }

    // Module preconditions that need the assembled objects.
    (void)make_lattice(c);
    c.echo = echo_config(c);
    return c;
}

ExperimentConfig load_config(const std::string& path, const std::optional<std::string>& command,
                             const std::optional<std::uint64_t>& seed, const std::optional<std::string>& out) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    return parse_config(doc, command, seed, out);
}

Lattice make_lattice(const ExperimentConfig& cfg) {
    try {
        VolatilityBox box(cfg.lower, cfg.upper, cfg.grid_points);
        TimeGrid time(cfg.horizon, cfg.steps);
        SpaceGrid space = SpaceGrid::fit(box, time, cfg.points, cfg.span, cfg.align);
        return Lattice(time, space, box);
    } catch (const ResolutionError& e) {
        throw ConfigError(std::string("space: ") + e.what());
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(std::string("box/time/space: ") + e.what());
    }
}

RunResult run_experiment(const ExperimentConfig& cfg) {
    const Lattice lat = make_lattice(cfg);
    RunResult r;
    if (cfg.command == "expect") r = run_expect(cfg, lat);
    else if (cfg.command == "represent") r = run_represent(cfg, lat);
    else if (cfg.command == "solve") r = run_solve(cfg, lat);
    else if (cfg.command == "verify-estimates") r = run_verify(cfg, lat);
    else if (cfg.command == "ratio-decay") r = run_ratio(cfg, lat);
    else r = run_capacity(cfg, lat);

    json summary;
    summary["schema_version"] = kSchemaVersion;
    summary["tool"] = "gcalc";
    summary["version"] = kToolVersion;
    summary["command"] = cfg.command;
    summary["seed"] = cfg.seed;
    summary["inputs"] = cfg.echo;
    summary["outputs"] = r.summary["outputs"];
    summary["status"] = r.exit_code == kOk ? "ok" : "check_failed";
    if (!r.message.empty()) summary["message"] = r.message;
    json files = json::array();
    for (const auto& t : r.tables) files.push_back(t.name);
    summary["tables"] = files;
    r.summary = std::move(summary);
    return r;
}

void write_outputs(const std::string& dir, const RunResult& result) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
    const auto write = [&](const std::string& name, const std::string& text) {
        const fs::path p = fs::path(dir) / name;
        std::ofstream out(p, std::ios::binary);
        if (!out) throw IoError("cannot write '" + p.string() + "'");
        out << text;
        if (!out) throw IoError("write failed for '" + p.string() + "'");
    };
    write("summary.json", result.summary.dump(2) + "\n");
    for (const auto& t : result.tables) write(t.name, t.text);
}

int run_cli(int argc, char** argv) {
    CLI::App app{"gcalc: G-expectation lattice engine and G-BSDE solver"};
    std::string command, config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    app.add_option("command", command, "expect | represent | solve | verify-estimates | ratio-decay | capacity")
        ->required()
        ->check(CLI::IsMember(commands()));
    app.add_option("--config", config, "JSON config file")->required();
    app.add_option("--seed", seed, "root seed (overrides the config)");
    app.add_option("--out", out, "output directory (overrides the config)");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    ExperimentConfig cfg;
    try {
        cfg = load_config(config, command, seed, out);
        namespace fs = std::filesystem;
        std::error_code ec;
        if (fs::exists(cfg.out_dir, ec) && !fs::is_directory(cfg.out_dir, ec))
            throw ConfigError("output.dir: '" + cfg.out_dir + "' exists and is not a directory");
    } catch (const Error& e) {
        std::cerr << "gcalc: config error: " << e.what() << "\n";
        return kConfigError;
    }

    RunResult result;
    try {
        result = run_experiment(cfg);
    } catch (const ConfigError& e) {
        std::cerr << "gcalc: config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const InputError& e) {
        std::cerr << "gcalc: invalid input: " << e.what() << "\n";
        return kConfigError;
    } catch (const ConvergenceError& e) {
        std::cerr << "gcalc: numerical failure: " << e.what() << "\n";
        if (!e.trace().empty()) {
            std::cerr << "  distance trace:";
            for (double v : e.trace()) std::cerr << " " << format_number(v);
            std::cerr << "\n";
        }
        return kNumericalError;
    } catch (const Error& e) {
        std::cerr << "gcalc: numerical failure: " << e.what() << "\n";
        return kNumericalError;
    } catch (const std::exception& e) {
        std::cerr << "gcalc: unexpected failure: " << e.what() << "\n";
        return kNumericalError;
    }

    try {
        write_outputs(cfg.out_dir, result);
    } catch (const IoError& e) {
        std::cerr << "gcalc: I/O error: " << e.what() << "\n";
        return kNumericalError;
    }
    if (result.exit_code != kOk) std::cerr << "gcalc: check failed: " << result.message << "\n";
    std::cout << cfg.command << ": wrote " << result.tables.size() + 1 << " files to " << cfg.out_dir << "\n";
    return result.exit_code;
}

} // namespace gcalc::cli
