#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include "experiments.hpp"
#include "json.hpp"
#include "mfc/error.hpp"

using namespace mfc;
using namespace mfc::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("mfc_cli_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path write_config(const fs::path& dir, const std::string& text) {
    fs::create_directories(dir);
    const fs::path p = dir / "config.ini";
    std::ofstream(p) << text;
    return p;
}

/// Small grids keep every command under a few seconds.
ExperimentConfig small_config() {
    ExperimentConfig c;
    c.nx = 81;
    c.nt = 32;
    c.n_values = {8, 16, 32};
    c.replicas = 4;
    c.vn_n = {1, 2};
    c.vn_samples = 10;
    c.vn_nx = 41;
    c.soc_samples = 10;
    return c;
}

fs::path config_file(const fs::path& dir, const ExperimentConfig& c) {
    return write_config(dir, serialize_config(c));
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

int line_count(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("config round trip") {
    ExperimentConfig c;
    CHECK(parse_config_text(serialize_config(c)) == c);
    c.builtin = "drifted";
    c.hamiltonian = "soft-quadratic";
    c.lambda = 0.1 + 0.2;
    c.drift = "tanh";
    c.initial_mean = -1.0 / 3.0;
    c.initial_sd = 0.7;
    c.sigma_grid = {0.0, 1.0 / 7.0, 1.0};
    c.n_values = {8, 1024};
    c.seed = 18446744073709551615ull;
    c.dir = "some dir";
    CHECK(parse_config_text(serialize_config(c)) == c);
    CHECK(config_hash(c) == config_hash(parse_config_text(serialize_config(c))));
    CHECK(parse_config_text(slurp(fs::path(MFC_CONFIG_DIR) / "default.ini")) == ExperimentConfig{});
}

TEST_CASE("config errors") {
    try {
        parse_config_text("[problem]\nbuiltin = quadratic-free\nthis line is broken\n");
        FAIL("expected Config");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Config);
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config_text("[problem]\nbuiltins = x\n"), Error);
    CHECK_THROWS_AS(parse_config_text("[grid]\nnx = many\n"), Error);
    CHECK_THROWS_AS(parse_config_text("[nosuch]\nkey = 1\n"), Error);
}

TEST_CASE("seed splitting and csv quoting") {
    CHECK(stage_seed(1, "a") != stage_seed(1, "b"));
    CHECK(stage_seed(1, "a") == stage_seed(1, "a"));
    CHECK(stage_seed(2, "a") == stage_seed(1, "a") + 1);
    CHECK(csv_field("plain") == "plain");
    CHECK(csv_field("a,b") == "\"a,b\"");
    CHECK(csv_field("say \"hi\"") == "\"say \"\"hi\"\"\"");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("solve-mfg writes results and a valid manifest") {
    const fs::path dir = scratch("solve");
    const fs::path cfg = config_file(dir / "cfg", small_config());
    REQUIRE(run_command("solve-mfg", cfg, dir / "out", std::nullopt, 1) == 0);
    const std::string summary = slurp(dir / "out" / "summary.csv");
    CHECK(summary.find("clusters,1\n") != std::string::npos);
    const nlohmann::json m = read_json(dir / "out" / "manifest.json");
    CHECK(m["command"] == "solve-mfg");
    CHECK(m["artifact_version"] == kArtifactVersion);
    CHECK(m["config_hash"] == config_hash(small_config()));
    std::set<std::string> listed;
    for (const auto& f : m["files"]) {
        const std::string name = f["path"];
        listed.insert(name);
        CHECK(sha256_hex(slurp(dir / "out" / name)) == f["sha256"]);
    }
    for (const char* name : {"u.csv", "m.csv", "convergence.csv", "clusters.csv", "summary.csv", "config.ini"})
        CHECK(listed.count(name) == 1);
    // Every CSV starts with a header row.
    CHECK(slurp(dir / "out" / "m.csv").rfind("n,t,x,m\n", 0) == 0);
}

TEST_CASE("configuration failures exit 2 with an error record") {
    const fs::path dir = scratch("errors");
    SUBCASE("malformed file") {
        const fs::path cfg = write_config(dir / "bad", "[grid]\nnx = 81\n== nope\n");
        CHECK(run_command("solve-mfg", cfg, dir / "bad_out", std::nullopt, 1) == 2);
        const nlohmann::json e = read_json(dir / "bad_out" / "error.json");
        CHECK(e["code"] == "config");
        CHECK(std::string(e["message"]).find("line 3") != std::string::npos);
    }
    SUBCASE("unknown descriptor") {
        ExperimentConfig c = small_config();
        c.builtin = "three-well";
        CHECK(run_command("solve-mfg", config_file(dir / "unk", c), dir / "unk_out", std::nullopt, 1) == 2);
        CHECK(read_json(dir / "unk_out" / "error.json")["code"] == "unknown_descriptor");
    }
    SUBCASE("empty scan family") {
        ExperimentConfig c = small_config();
        c.scan_means.clear();
        CHECK(run_command("stability-scan", config_file(dir / "empty", c), dir / "empty_out", std::nullopt, 1) == 2);
    }
    SUBCASE("missing config file") {
        CHECK(run_command("verify", dir / "nowhere.ini", dir / "missing_out", std::nullopt, 1) == 2);
    }
}

TEST_CASE("stability scans") {
    const fs::path dir = scratch("scan");
    SUBCASE("convex builtin 3x3") {
        REQUIRE(run_command("stability-scan", config_file(dir / "cfg", small_config()), dir / "out",
                            std::nullopt, 1) == 0);
        CHECK(slurp(dir / "out" / "scan_summary.csv") == "cells,strongly_stable,fraction\n9,9,1\n");
        CHECK(line_count(slurp(dir / "out" / "scan.csv")) == 10);
    }
    SUBCASE("two-well family with the symmetric point") {
        ExperimentConfig c = small_config();
        c.builtin = "two-well";
        c.scan_means = {0.0, 1.0};
        c.scan_sds = {0.5};
        REQUIRE(run_command("stability-scan", config_file(dir / "tw", c), dir / "tw_out", std::nullopt, 1) == 0);
        const std::string scan = slurp(dir / "tw_out" / "scan.csv");
        std::istringstream lines(scan);
        std::string header, first;
        std::getline(lines, header);
        std::getline(lines, first);
        CHECK(first.rfind("0,0.5,", 0) == 0);
        CHECK(first.find("strongly_stable") == std::string::npos);
    }
}

TEST_CASE("chaos-rate outputs") {
    const fs::path dir = scratch("chaos");
    SUBCASE("files, determinism and plot data") {
        const fs::path cfg = config_file(dir / "cfg", small_config());
        REQUIRE(run_command("chaos-rate", cfg, dir / "a", std::nullopt, 1) == 0);
        REQUIRE(run_command("chaos-rate", cfg, dir / "b", std::nullopt, 1) == 0);
        for (const char* f : {"chaos.csv", "fit.csv", "chaos.dat", "tracking.csv"}) {
            CHECK(fs::exists(dir / "a" / f));
            CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
        }
        CHECK(slurp(dir / "a" / "chaos.csv").rfind("N,mean_error,ci_halfwidth,replicas_used\n", 0) == 0);
        CHECK(line_count(slurp(dir / "a" / "chaos.dat")) >= 3);
        // A different seed changes the measurement.
        REQUIRE(run_command("chaos-rate", cfg, dir / "c", std::uint64_t{7}, 1) == 0);
        CHECK(slurp(dir / "a" / "chaos.csv") != slurp(dir / "c" / "chaos.csv"));
        CHECK(read_json(dir / "c" / "manifest.json")["seed"] == 7);
    }
    SUBCASE("one replica") {
        ExperimentConfig c = small_config();
        c.replicas = 1;
        REQUIRE(run_command("chaos-rate", config_file(dir / "one", c), dir / "one_out", std::nullopt, 1) == 0);
        CHECK(slurp(dir / "one_out" / "chaos.csv").find("inf") != std::string::npos);
        CHECK(fs::exists(dir / "one_out" / "warnings.csv"));
        CHECK_FALSE(read_json(dir / "one_out" / "manifest.json")["warnings"].empty());
    }
}

TEST_CASE("vn-compare and second-order-check") {
    const fs::path dir = scratch("vn");
    const fs::path cfg = config_file(dir / "cfg", small_config());
    REQUIRE(run_command("vn-compare", cfg, dir / "vn", std::nullopt, 1) == 0);
    CHECK(fs::exists(dir / "vn" / "vn.csv"));
    CHECK(fs::exists(dir / "vn" / "vn_summary.csv"));
    REQUIRE(run_command("second-order-check", cfg, dir / "soc", std::nullopt, 1) == 0);
    CHECK(line_count(slurp(dir / "soc" / "second_order.csv")) == 11);
}

TEST_CASE("verify") {
    const fs::path dir = scratch("verify");
    SUBCASE("shipped default config into a missing nested directory") {
        const fs::path out = dir / "deep" / "nested" / "out";
        CHECK(run_command("verify", fs::path(MFC_CONFIG_DIR) / "default.ini", out, std::nullopt, 1) == 0);
        const std::string checks = slurp(out / "checks.csv");
        CHECK(checks.rfind("check,value,tolerance,pass\n", 0) == 0);
        CHECK(checks.find(",0\n") == std::string::npos);
    }
    SUBCASE("tolerances tightened 100x") {
        ExperimentConfig c = small_config();
        c.tolerance_factor = 0.01;
        CHECK(run_command("verify", config_file(dir / "tight", c), dir / "tight_out", std::nullopt, 1) == 1);
        CHECK(slurp(dir / "tight_out" / "checks.csv").find(",0\n") != std::string::npos);
    }
}

TEST_CASE("command-line front end") {
    const std::string exe = MFC_BINARY;
    auto run = [&](const std::string& args) {
        const int status = std::system((exe + " " + args + " >/dev/null 2>&1").c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    };
    CHECK(run("solve-mfg") == 2);
    CHECK(run("no-such-command --config x") == 2);
    const fs::path dir = scratch("exe");
    const fs::path cfg = config_file(dir / "cfg", small_config());
    CHECK(run("solve-mfg --config " + cfg.string() + " --out " + (dir / "o").string() + " --threads 2") == 0);
    CHECK(fs::exists(dir / "o" / "manifest.json"));
}
