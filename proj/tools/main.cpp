#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "experiments.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Mean field control experiments"};
    app.require_subcommand(1, 1);
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    int threads = 1;
    for (const std::string& name : mfc::cli::command_names()) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", config, "INI configuration file")->required();
        sub->add_option("--out", out, "output directory (overrides [output] dir)");
        sub->add_option("--seed", seed, "seed (overrides [particles] seed)");
        sub->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    const std::string command = app.get_subcommands().front()->get_name();
    std::optional<std::filesystem::path> out_dir;
    if (!out.empty()) out_dir = out;
    return mfc::cli::run_command(command, config, out_dir, seed, threads);
}
