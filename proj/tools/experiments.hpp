#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mfc/linearized.hpp"
#include "mfc/mfg.hpp"
#include "mfc/particles.hpp"

namespace mfc::cli {

inline constexpr const char* kArtifactVersion = "1.0.0";

/// INI configuration. Absent optional keys keep the builtin's choice.
struct ExperimentConfig {
    // [problem]
    std::string builtin = "quadratic-free";
    int dim = 1;
    double half_width = 8.0;
    double horizon = 1.0;
    std::optional<std::string> hamiltonian;  // descriptor overriding the builtin's H
    double lambda = 0.0;
    std::string drift = "none";
    double drift_amplitude = 1.0;
    std::optional<double> initial_mean;
    std::optional<double> initial_sd;
    // [grid]
    int nx = 161;
    int nt = 64;
    // [solver]
    double damping = 0.5;
    double tolerance = 1e-8;
    int max_iterations = 400;
    int multistarts = 5;
    double merge_tolerance = 1e-3;
    double tie_tolerance = 1e-6;
    double start_amplitude = 1.0;
    // [stability]
    std::vector<double> sigma_grid{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    double threshold = 1e-6;
    std::vector<double> scan_means{-0.25, 0.0, 0.25};
    std::vector<double> scan_sds{0.4, 0.5, 0.6};
    // [particles]
    std::vector<int> n_values{8, 16, 32, 64, 128, 256, 512};
    int replicas = 20;
    std::uint64_t seed = 20240601;
    double delta_track = 0.0;
    std::vector<int> vn_n{1, 2};
    int vn_samples = 50;
    int vn_nx = 0;
    int soc_samples = 100;
    // [verify]
    double tolerance_factor = 1.0;
    // [output]
    std::string dir = "out";

    bool operator==(const ExperimentConfig&) const = default;
};

/// Parses INI text; throws Error(Config) with the line number on syntax errors
/// and on unknown sections, keys or unparsable values.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical INI text; parse_config_text(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& c);

/// SHA-256 (hex) of the canonical serialization.
std::string config_hash(const ExperimentConfig& c);

/// Stage seed: config seed plus a 64-bit FNV-1a hash of the stage name.
std::uint64_t stage_seed(std::uint64_t seed, const std::string& stage);

ProblemSpec build_spec(const ExperimentConfig& c);
SolverConfig solver_config(const ExperimentConfig& c, int threads);

std::string sha256_hex(const std::string& bytes);

/// RFC-4180 field quoting.
std::string csv_field(const std::string& s);

/// Collects output files and writes manifest.json.
class RunRecorder {
public:
    RunRecorder(std::filesystem::path dir, std::string command, const ExperimentConfig& cfg);

    void write(const std::string& name, const std::string& contents);
    void stage(const std::string& name, double seconds);
    void warn(const std::string& message);
    void finish() const;

    const std::filesystem::path& dir() const { return dir_; }
    const std::vector<std::string>& warnings() const { return warnings_; }

private:
    struct FileEntry {
        std::string name;
        std::string sha256;
        std::size_t bytes;
    };
    std::filesystem::path dir_;
    std::string command_;
    std::string hash_;
    std::uint64_t seed_;
    std::vector<FileEntry> files_;
    std::vector<std::pair<std::string, double>> stages_;
    std::vector<std::string> warnings_;
};

struct CommandOptions {
    std::filesystem::path out;
    int threads = 1;
};

/// Each command returns its exit status: 0 success, 1 failure. Library
/// errors propagate; run_command maps them to error.json and exit codes.
int cmd_solve_mfg(const ExperimentConfig& c, const CommandOptions& o);
int cmd_stability_scan(const ExperimentConfig& c, const CommandOptions& o);
int cmd_chaos_rate(const ExperimentConfig& c, const CommandOptions& o);
int cmd_vn_compare(const ExperimentConfig& c, const CommandOptions& o);
int cmd_second_order_check(const ExperimentConfig& c, const CommandOptions& o);
int cmd_verify(const ExperimentConfig& c, const CommandOptions& o);

std::vector<std::string> command_names();

/// Loads the config, applies overrides and runs the command. Exit 2 for
/// configuration errors, 1 for runtime failures; both write error.json.
int run_command(const std::string& command, const std::filesystem::path& config_path,
                const std::optional<std::filesystem::path>& out,
                const std::optional<std::uint64_t>& seed, int threads);

}  // namespace mfc::cli
