#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include <fmt/format.h>
#include "json.hpp"

#include "experiments.hpp"
#include "mfc/error.hpp"
#include "mfc/parallel.hpp"

namespace mfc::cli {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
    return std::chrono::duration<double>(Clock::now() - t).count();
}

std::string num(double v) { return fmt::format("{:.17g}", v); }

std::filesystem::path output_dir(const ExperimentConfig& c, const CommandOptions& o) {
    return o.out.empty() ? std::filesystem::path(c.dir) : o.out;
}

MinimizerSet solve_base(const ProblemSpec& spec, const ExperimentConfig& c, int threads) {
    return solve_mfc(spec, spec.grid, spec.initial.on(spec.grid.space()), solver_config(c, threads));
}

std::string path_csv(const SpaceTimeGrid& grid, const FieldPath& f, const char* name) {
    const BoxGrid& g = grid.space();
    std::ostringstream out;
    out << (g.dim() == 1 ? "n,t,x," : "n,t,x,y,") << name << "\n";
    for (std::size_t n = 0; n < f.size(); ++n)
        for (std::size_t i = 0; i < g.size(); ++i) {
            const Point p = g.point(i);
            out << n << ',' << num(grid.time(static_cast<int>(n))) << ',' << num(p[0]) << ',';
            if (g.dim() == 2) out << num(p[1]) << ',';
            out << num(f[n][i]) << '\n';
        }
    return out.str();
}

std::string clusters_csv(const MinimizerSet& set) {
    std::ostringstream out;
    out << "cluster,cost,members,representative_start,at_minimum\n";
    for (std::size_t c = 0; c < set.clusters.size(); ++c) {
        const Cluster& cl = set.clusters[c];
        out << c << ',' << num(cl.cost) << ',' << cl.members.size() << ','
            << csv_field(set.solutions[cl.representative].start_label) << ','
            << (cl.cost <= set.global_min_cost + set.tie_tolerance ? 1 : 0) << '\n';
    }
    return out.str();
}

struct Check {
    std::string name;
    double value;
    double tolerance;
    bool pass;
};

Check at_most(const std::string& name, double value, double tol) {
    return {name, value, tol, std::isfinite(value) && value <= tol};
}

Check at_least(const std::string& name, double value, double tol) {
    return {name, value, tol, std::isfinite(value) && value >= tol};
}

}  // namespace

RunRecorder::RunRecorder(std::filesystem::path dir, std::string command, const ExperimentConfig& cfg)
    : dir_(std::move(dir)), command_(std::move(command)), hash_(config_hash(cfg)), seed_(cfg.seed) {
    std::filesystem::create_directories(dir_);
}

void RunRecorder::write(const std::string& name, const std::string& contents) {
    std::ofstream out(dir_ / name, std::ios::binary);
    out << contents;
    require(static_cast<bool>(out), ErrorCode::InvalidArgument,
            fmt::format("cannot write '{}'", (dir_ / name).string()));
    files_.push_back({name, sha256_hex(contents), contents.size()});
}

void RunRecorder::stage(const std::string& name, double seconds) { stages_.emplace_back(name, seconds); }

void RunRecorder::warn(const std::string& message) {
    warnings_.push_back(message);
    std::cerr << "warning: " << message << "\n";
}

void RunRecorder::finish() const {
    nlohmann::json j;
    j["artifact_version"] = kArtifactVersion;
    j["command"] = command_;
    j["config_hash"] = hash_;
    j["seed"] = seed_;
    j["stages"] = nlohmann::json::array();
    for (const auto& [name, s] : stages_) j["stages"].push_back({{"name", name}, {"seconds", s}});
    j["files"] = nlohmann::json::array();
    for (const FileEntry& f : files_)
        j["files"].push_back({{"path", f.name}, {"sha256", f.sha256}, {"bytes", f.bytes}});
    j["warnings"] = warnings_;
    std::ofstream out(dir_ / "manifest.json", std::ios::binary);
    out << j.dump(2) << "\n";
}

int cmd_solve_mfg(const ExperimentConfig& c, const CommandOptions& o) {
    RunRecorder rec(output_dir(c, o), "solve-mfg", c);
    rec.write("config.ini", serialize_config(c));
    const ProblemSpec spec = build_spec(c);
    const auto t = Clock::now();
    const MinimizerSet set = solve_base(spec, c, o.threads);
    rec.stage("solve", seconds_since(t));
    const MfgSolution& best = set.best();
    rec.write("u.csv", path_csv(best.u.grid, best.u.u, "u"));
    rec.write("m.csv", path_csv(best.m.grid, best.m.slices, "m"));
    rec.write("convergence.csv", convergence_csv(best));
    rec.write("clusters.csv", clusters_csv(set));
    std::ostringstream s;
    s << "key,value\n"
      << "problem," << csv_field(spec.name) << "\n"
      << "cost," << num(best.cost) << "\n"
      << "clusters," << set.clusters.size() << "\n"
      << "clusters_at_minimum," << set.clusters_at_minimum() << "\n"
      << "unique," << (set.unique_minimizer() ? 1 : 0) << "\n"
      << "failed_starts," << set.failed_starts << "\n"
      << "iterations," << best.iterations << "\n"
      << "fixed_point_residual," << num(best.fixed_point_residual) << "\n";
    rec.write("summary.csv", s.str());
    for (const std::string& f : set.failures) rec.warn("start failed: " + f);
    rec.finish();
    return 0;
}

int cmd_stability_scan(const ExperimentConfig& c, const CommandOptions& o) {
    require(!c.scan_means.empty() && !c.scan_sds.empty(), ErrorCode::Config,
            "[stability] scan_means and scan_sds must be non-empty");
    for (double sd : c.scan_sds) require(sd > 0.0, ErrorCode::Config, "[stability] scan_sds must be positive");
    RunRecorder rec(output_dir(c, o), "stability-scan", c);
    rec.write("config.ini", serialize_config(c));
    const ProblemSpec base_spec = build_spec(c);
    struct Cell {
        double mean, sd;
        std::string verdict, note;
        double min_sv = std::numeric_limits<double>::quiet_NaN();
        std::size_t at_min = 0;
    };
    std::vector<Cell> cells;
    for (double m : c.scan_means)
        for (double sd : c.scan_sds) cells.push_back({m, sd, "error", "", std::numeric_limits<double>::quiet_NaN(), 0});
    const auto t = Clock::now();
    SolverConfig sc = solver_config(c, 1);
    parallel_for(cells.size(), o.threads, [&](std::size_t i) {
        Cell& cell = cells[i];
        ProblemSpec spec = base_spec;
        spec.initial.mean[0] = cell.mean;
        spec.initial.sd = cell.sd;
        try {
            const MinimizerSet set = solve_mfc(spec, spec.grid, spec.initial.on(spec.grid.space()), sc);
            const StabilityReport r = classify_stability(spec, set, 0, c.sigma_grid, c.threshold);
            cell.verdict = to_string(r.verdict);
            cell.note = r.note;
            cell.min_sv = *std::min_element(r.min_singular_values.begin(), r.min_singular_values.end());
            cell.at_min = set.clusters_at_minimum();
        } catch (const Error& e) {
            cell.verdict = "error";
            cell.note = e.what();
        }
    });
    rec.stage("scan", seconds_since(t));
    std::ostringstream out;
    out << "mean,sd,verdict,min_singular_value,clusters_at_minimum,note\n";
    int strong = 0;
    for (const Cell& cell : cells) {
        out << num(cell.mean) << ',' << num(cell.sd) << ',' << cell.verdict << ',' << num(cell.min_sv)
            << ',' << cell.at_min << ',' << csv_field(cell.note) << '\n';
        if (cell.verdict == "strongly_stable") ++strong;
        if (cell.verdict == "error") rec.warn(fmt::format("cell ({}, {}): {}", cell.mean, cell.sd, cell.note));
    }
    rec.write("scan.csv", out.str());
    rec.write("scan_summary.csv", fmt::format("cells,strongly_stable,fraction\n{},{},{}\n", cells.size(),
                                              strong, num(static_cast<double>(strong) / cells.size())));
    rec.finish();
    return 0;
}

int cmd_chaos_rate(const ExperimentConfig& c, const CommandOptions& o) {
    RunRecorder rec(output_dir(c, o), "chaos-rate", c);
    rec.write("config.ini", serialize_config(c));
    const ProblemSpec spec = build_spec(c);
    auto t = Clock::now();
    const MinimizerSet set = solve_base(spec, c, o.threads);
    rec.stage("solve", seconds_since(t));
    require(set.unique_minimizer(), ErrorCode::Inadmissible,
            "chaos experiment needs a unique minimizer at (t0, m0)");
    ChaosOptions opts;
    opts.N_values = c.n_values;
    opts.replicas = c.replicas;
    opts.seed = stage_seed(c.seed, "chaos");
    opts.delta_track = c.delta_track;
    opts.threads = o.threads;
    t = Clock::now();
    const ChaosExperimentResult res = chaos_rate_experiment(spec, set.best(), opts);
    rec.stage("chaos", seconds_since(t));
    rec.write("chaos.csv", res.csv());
    rec.write("fit.csv", res.fit_summary());
    rec.write("chaos.dat", res.plot_data());
    std::ostringstream trunc;
    trunc << "N,truncated_fraction,excluded\n";
    for (const ChaosRow& r : res.rows) trunc << r.N << ',' << num(r.truncated_fraction) << ',' << r.excluded << '\n';
    rec.write("tracking.csv", trunc.str());
    for (const std::string& w : res.warnings) rec.warn(w);
    if (!res.warnings.empty()) {
        std::string w = "warning\n";
        for (const std::string& s : res.warnings) w += csv_field(s) + "\n";
        rec.write("warnings.csv", w);
    }
    rec.finish();
    return 0;
}

int cmd_vn_compare(const ExperimentConfig& c, const CommandOptions& o) {
    require(!c.vn_n.empty() && c.vn_samples >= 1, ErrorCode::Config,
            "[particles] vn_n must be non-empty and vn_samples positive");
    RunRecorder rec(output_dir(c, o), "vn-compare", c);
    rec.write("config.ini", serialize_config(c));
    const ProblemSpec spec = build_spec(c);
    SolverConfig sc = solver_config(c, o.threads);
    std::ostringstream rows, summary;
    rows << "N,sample,n,t,positions,vn,u,gap\n";
    summary << "N,max_gap,mean_gap,lipschitz\n";
    for (int N : c.vn_n) {
        const auto t = Clock::now();
        const SmallNValue vn = solve_vn_small(spec, N, SmallNOptions{c.vn_nx});
        const auto pts = vn_sample_points(spec, N, c.vn_samples, stage_seed(c.seed, "vn-samples"));
        const VnGapReport r = vn_vs_u_gap(spec, vn, pts, sc);
        rec.stage(fmt::format("vn-{}", N), seconds_since(t));
        for (std::size_t s = 0; s < pts.size(); ++s) {
            std::string pos;
            for (std::size_t k = 0; k < pts[s].x.size(); ++k) pos += (k ? ";" : "") + num(pts[s].x[k]);
            rows << N << ',' << s << ',' << pts[s].n << ',' << num(spec.grid.time(pts[s].n)) << ','
                 << csv_field(pos) << ',' << num(r.vn_values[s]) << ',' << num(r.u_values[s]) << ','
                 << num(r.gaps[s]) << '\n';
        }
        summary << N << ',' << num(r.max_gap) << ',' << num(r.mean_gap) << ',' << num(vn.lipschitz) << '\n';
    }
    rec.write("vn.csv", rows.str());
    rec.write("vn_summary.csv", summary.str());
    rec.finish();
    return 0;
}

int cmd_second_order_check(const ExperimentConfig& c, const CommandOptions& o) {
    require(c.soc_samples >= 1, ErrorCode::Config, "[particles] soc_samples must be positive");
    RunRecorder rec(output_dir(c, o), "second-order-check", c);
    rec.write("config.ini", serialize_config(c));
    const ProblemSpec spec = build_spec(c);
    auto t = Clock::now();
    const MinimizerSet set = solve_base(spec, c, o.threads);
    rec.stage("solve", seconds_since(t));
    t = Clock::now();
    const SecondOrderReport r =
        second_order_check(spec, set.best(), c.soc_samples, stage_seed(c.seed, "second-order"));
    rec.stage("second-order", seconds_since(t));
    std::ostringstream out;
    out << "sample,seed,value\n";
    for (std::size_t s = 0; s < r.values.size(); ++s) out << s << ',' << r.seeds[s] << ',' << num(r.values[s]) << '\n';
    rec.write("second_order.csv", out.str());
    const double tol = -1e-6 * c.tolerance_factor;
    const bool pass = !set.unique_minimizer() || r.minimum >= tol;
    rec.write("second_order_summary.csv",
              fmt::format("minimum,tolerance,unique,pass\n{},{},{},{}\n", num(r.minimum), num(tol),
                          set.unique_minimizer() ? 1 : 0, pass ? 1 : 0));
    if (!set.unique_minimizer()) rec.warn("minimizer is not unique; the inequality is not asserted");
    rec.finish();
    return pass ? 0 : 1;
}

int cmd_verify(const ExperimentConfig& c, const CommandOptions& o) {
    RunRecorder rec(output_dir(c, o), "verify", c);
    rec.write("config.ini", serialize_config(c));
    const double f = c.tolerance_factor;
    const ProblemSpec spec = build_spec(c);
    const BoxGrid& g = spec.grid.space();
    std::vector<Check> checks;

    auto t = Clock::now();
    const HamiltonianCheck hc = check_hamiltonian(spec.hamiltonian, g.half_width());
    checks.push_back(at_most("hamiltonian_derivatives", hc.derivative_error, 1e-5 * f));
    double duality = 0.0;
    for (int a = -2; a <= 2; ++a)
        for (int b = -2; b <= 2; ++b) {
            const Point x{0.5 * a * g.half_width() / 2.0, 0.3 * b, 0.0};
            const Point p{0.7 * b, -0.4 * a, 0.0};
            const DualityReport d = duality_identities(spec.hamiltonian, x, p, spec.grid.dim());
            duality = std::max({duality, d.value_residual, d.gradient_residual});
        }
    checks.push_back(at_most("duality_identities", duality, 1e-7 * f));

    const SolverConfig sc = solver_config(c, o.threads);
    const MinimizerSet set = solve_base(spec, c, o.threads);
    const MfgSolution& best = set.best();
    const bool unique = set.unique_minimizer();
    rec.stage("solve", seconds_since(t));
    checks.push_back(at_most("picard_residual", best.fixed_point_residual, c.tolerance * f));
    checks.push_back(at_most("first_order_condition", first_order_residual(spec, best), 1e-8 * f));
    if (spec.grid.dim() == 1) checks.push_back(at_most("hjb_residual", best.u.residual, 1e-8 * f));
    FpStats fp;
    solve_fp_forward(best.m.grid, best.m.at(0), best.alpha, &fp);
    checks.push_back(at_most("fp_mass_drift", fp.max_mass_drift, 1e-9 * f));

    t = Clock::now();
    const int mid = spec.grid.nt() / 2;
    checks.push_back(at_most("master_residual_mid", master_equation_residual(spec, best, mid, sc).residual,
                             1e-2 * f));
    checks.push_back(at_most("dpp_gap_mid", dynamic_programming_gap(spec, best, mid, sc).gap,
                             2.0 * c.tolerance * f));
    rec.stage("value-checks", seconds_since(t));

    t = Clock::now();
    if (unique) {
        const SecondOrderReport soc =
            second_order_check(spec, best, c.soc_samples, stage_seed(c.seed, "second-order"));
        checks.push_back(at_least("second_order_min", soc.minimum, -1e-6 * f));
        const StabilityReport sr = classify_stability(spec, set, 0, c.sigma_grid, c.threshold);
        const StrongStabilityCheck ss = strong_stability_from_stability_check(sr, unique);
        if (ss.applicable)
            checks.push_back(at_most("stability_violations", static_cast<double>(ss.violations.size()), 0.0));
    } else {
        rec.warn("minimizer is not unique; second-order and stability checks skipped");
    }
    rec.stage("second-order", seconds_since(t));

    if (spec.grid.dim() == 1) {
        t = Clock::now();
        const bool linear = spec.running.is_linear() && spec.terminal.is_linear();
        SolverConfig uc = sc;
        if (linear) uc.multistarts = 1;
        for (int N : c.vn_n) {
            const SmallNValue vn = solve_vn_small(spec, N, SmallNOptions{c.vn_nx});
            const VnGapReport r = vn_vs_u_gap(
                spec, vn, vn_sample_points(spec, N, c.vn_samples, stage_seed(c.seed, "vn-samples")), uc);
            const double tol = linear ? 5e-3 * f : std::numeric_limits<double>::infinity();
            checks.push_back(at_most(fmt::format("vn_gap_N{}", N), r.max_gap, tol));
        }
        rec.stage("small-n", seconds_since(t));
    }

    std::ostringstream out;
    out << "check,value,tolerance,pass\n";
    std::vector<std::string> failing;
    for (const Check& ch : checks) {
        out << ch.name << ',' << num(ch.value) << ',' << num(ch.tolerance) << ',' << (ch.pass ? 1 : 0) << '\n';
        if (!ch.pass) failing.push_back(ch.name);
    }
    rec.write("checks.csv", out.str());
    rec.finish();
    if (failing.empty()) return 0;
    std::cerr << "failing checks:";
    for (const std::string& n : failing) std::cerr << ' ' << n;
    std::cerr << "\n";
    return 1;
}

std::vector<std::string> command_names() {
    return {"solve-mfg", "stability-scan", "chaos-rate", "vn-compare", "second-order-check", "verify"};
}

int run_command(const std::string& command, const std::filesystem::path& config_path,
                const std::optional<std::filesystem::path>& out,
                const std::optional<std::uint64_t>& seed, int threads) {
    std::filesystem::path dir = out.value_or(std::filesystem::path{});
    auto record_error = [&](const std::string& code, const std::string& message) {
        std::cerr << "error [" << code << "]: " << message << "\n";
        try {
            const std::filesystem::path d = dir.empty() ? std::filesystem::path("out") : dir;
            std::filesystem::create_directories(d);
            nlohmann::json j{{"command", command}, {"code", code}, {"message", message}};
            std::ofstream(d / "error.json", std::ios::binary) << j.dump(2) << "\n";
        } catch (...) {
        }
    };
    try {
        require(threads >= 1, ErrorCode::Config, "--threads must be positive");
        ExperimentConfig cfg = load_config(config_path);
        if (seed) cfg.seed = *seed;
        if (dir.empty()) dir = cfg.dir;
        const CommandOptions opts{dir, threads};
        if (command == "solve-mfg") return cmd_solve_mfg(cfg, opts);
        if (command == "stability-scan") return cmd_stability_scan(cfg, opts);
        if (command == "chaos-rate") return cmd_chaos_rate(cfg, opts);
        if (command == "vn-compare") return cmd_vn_compare(cfg, opts);
        if (command == "second-order-check") return cmd_second_order_check(cfg, opts);
        if (command == "verify") return cmd_verify(cfg, opts);
        fail(ErrorCode::Config, "unknown command '" + command + "'");
    } catch (const Error& e) {
        const bool config = e.code() == ErrorCode::Config || e.code() == ErrorCode::UnknownDescriptor;
        record_error(to_string(e.code()), e.what());
        return config ? 2 : 1;
    } catch (const std::exception& e) {
        record_error("Internal", e.what());
        return 1;
    }
}

}  // namespace mfc::cli
