#include "experiment.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace gcalc;
using namespace gcalc::cli;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json base(const std::string& command) {
    return json{{"command", command},
                {"box", {{"lower", {1.0}}, {"upper", {4.0}}}},
                {"time", {{"T", 1.0}, {"N", 40}}},
                {"space", {{"points", 201}}},
                {"payoff", {{"id", "quadratic"}}}};
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("gcalc_cli_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string write_config(const fs::path& dir, const json& doc) {
    const fs::path p = dir / "config.json";
    std::ofstream(p) << doc.dump(2);
    return p.string();
}

int run_args(std::vector<std::string> args) {
    std::vector<char*> argv;
    static std::string prog = "gcalc";
    argv.push_back(prog.data());
    for (auto& a : args) argv.push_back(a.data());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const CsvTable& table(const RunResult& r, const std::string& name) {
    for (const auto& t : r.tables)
        if (t.name == name) return t;
    FAIL("missing table " << name);
    return r.tables.front();
}

} // namespace

TEST_CASE("config validation") {
    CHECK_NOTHROW(parse_config(base("expect")));
    json unknown = base("expect");
    unknown["colour"] = "blue";
    CHECK_THROWS_AS(parse_config(unknown), ConfigError);
    json inverted = base("expect");
    inverted["box"]["lower"] = {5.0};
    CHECK_THROWS_AS(parse_config(inverted), ConfigError);
    json even = base("expect");
    even["space"]["points"] = 200;
    CHECK_THROWS_AS(parse_config(even), ConfigError);
    json bad_payoff = base("expect");
    bad_payoff["payoff"] = {{"id", "digital"}};
    CHECK_THROWS_AS(parse_config(bad_payoff), ConfigError);
    json bad_driver = base("solve");
    bad_driver["driver"] = {{"f", {{"id", "cubic"}}}};
    CHECK_THROWS_AS(parse_config(bad_driver), ConfigError);
    CHECK_THROWS_AS(parse_config(base("integrate")), ConfigError);

    json coarse = base("expect");
    coarse["space"]["points"] = 21;
    CHECK_THROWS_AS(make_lattice(parse_config(coarse)), ConfigError);

    CHECK_THROWS_AS(parse_config(base("expect"), std::string("represent")), ConfigError);
    const auto cfg = parse_config(base("expect"), std::string("expect"), std::uint64_t{99}, std::string("elsewhere"));
    CHECK(cfg.command == "expect");
    CHECK(cfg.seed == 99);
    CHECK(cfg.out_dir == "elsewhere");
}

TEST_CASE("exit codes and validation before compute") {
    const fs::path dir = scratch("exit");
    json coarse = base("expect");
    coarse["space"]["points"] = 21;
    const fs::path out = dir / "out";
    CHECK(run_args({"expect", "--config", write_config(dir, coarse), "--out", out.string()}) == kConfigError);
    CHECK_FALSE(fs::exists(out));
    CHECK(run_args({"expect", "--config", (dir / "missing.json").string()}) == kConfigError);
    CHECK(run_args({"frobnicate", "--config", write_config(dir, base("expect"))}) == kConfigError);

    json lip = base("solve");
    lip["driver"] = {{"f", {{"id", "linear-in-y"}, {"r", 0.5}}}};
    lip["picard"] = {{"max_iter", 1}, {"tol", 1e-14}};
    CHECK(run_args({"solve", "--config", write_config(dir, lip), "--out", out.string()}) == kNumericalError);

    std::ofstream(dir / "blocker") << "x";
    CHECK(run_args({"expect", "--config", write_config(dir, base("expect")), "--out", (dir / "blocker").string()}) ==
          kConfigError);
}

TEST_CASE("expect run writes a summary that round-trips") {
    const fs::path dir = scratch("expect");
    json doc = base("expect");
    doc["time"]["N"] = 200;
    doc["space"]["points"] = 401;
    const fs::path out = dir / "out";
    REQUIRE(run_args({"expect", "--config", write_config(dir, doc), "--out", out.string(), "--seed", "3"}) == kOk);
    const std::string text = slurp(out / "summary.json");
    const json s = json::parse(text);
    CHECK(s.dump(2) + "\n" == text);
    CHECK(s["schema_version"] == 1);
    CHECK(s["seed"] == 3);
    CHECK(s["command"] == "expect");
    CHECK(s["outputs"]["expectation"][0].get<double>() == doctest::Approx(4.0).epsilon(0.0125));
    CHECK(s["outputs"]["lower_expectation"][0].get<double>() == doctest::Approx(1.0).epsilon(0.05));
    CHECK(fs::exists(out / "expect.csv"));
    CHECK(slurp(out / "expect.csv").rfind("t,state,value_1\n", 0) == 0);
}

TEST_CASE("solve with zero drivers reproduces represent") {
    json doc = base("represent");
    doc["output"] = {{"stride_t", 4}, {"stride_x", 10}};
    const RunResult rep = run_experiment(parse_config(doc));
    doc["command"] = "solve";
    const RunResult sol = run_experiment(parse_config(doc));
    CHECK(table(rep, "solution.csv").text == table(sol, "solution.csv").text);
}

TEST_CASE("representation K column stays nonnegative") {
    json doc = base("represent");
    doc["payoff"] = {{"id", "abs"}};
    const RunResult r = run_experiment(parse_config(doc));
    std::istringstream in(table(r, "solution.csv").text);
    std::string line;
    std::getline(in, line);
    REQUIRE(line.substr(line.rfind(',') + 1) == "K_1");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        const std::string k = line.substr(line.rfind(',') + 1);
        if (k.empty()) continue;
        CHECK(std::stod(k) >= -1e-6);
        ++rows;
    }
    CHECK(rows > 0);
}

TEST_CASE("empty result sets give header-only tables") {
    json doc = base("ratio-decay");
    doc.erase("payoff");
    doc["theta"] = {{"breaks", {0, 40}}, {"values", {{{"id", "constant"}, {"c", 1.0}}}}};
    doc["zeta"] = {{"breaks", {0, 40}}, {"values", {{{"id", "constant"}, {"c", 1.0}}}}};
    doc["n_max"] = 3;
    const RunResult r = run_experiment(parse_config(doc));
    CHECK(table(r, "ratio_entries.csv").text == "beta,numerator,denominator,ratio\n");
    CHECK(r.exit_code == kOk);
}

TEST_CASE("failed verification exits with 4") {
    json doc = base("verify-estimates");
    doc["driver"] = {{"f", {{"id", "linear-in-y"}, {"r", 0.5}}}};
    doc["second"] = {{"f_shift", 0.1}};
    doc["betas"] = {1, 4, 16};
    doc["sup_beta"] = 0.0;
    const RunResult r = run_experiment(parse_config(doc));
    CHECK(r.exit_code == kCheckFailed);
    CHECK(r.summary["status"] == "check_failed");
}

TEST_CASE("output errors") {
    RunResult r;
    r.summary = json{{"a", 1}};
    CHECK_THROWS_AS(write_outputs("/dev/null/sub", r), IoError);
    CHECK(format_number(0.1) == "0.1");
    CHECK(format_number(1.0 / 3.0) == "0.333333333333");
}
