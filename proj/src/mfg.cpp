#include "mfc/mfg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "mfc/error.hpp"
#include "mfc/parallel.hpp"

namespace mfc {
namespace {

double sup_diff(const FieldPath& a, const FieldPath& b) {
    double s = 0.0;
    for (std::size_t n = 0; n < std::min(a.size(), b.size()); ++n)
        for (std::size_t i = 0; i < a[n].size(); ++i) s = std::max(s, std::abs(a[n][i] - b[n][i]));
    return s;
}

double l1_defect(const BoxGrid& g, const Field& a, const Field& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) s += g.weight(i) * std::abs(a[i] - b[i]);
    return s;
}

// Scale a drift guess so the explicit transport stays inside the CFL bound.
void limit_cfl(const SpaceTimeGrid& grid, DriftField& d) {
    double worst = 0.0;
    for (const Field& a : d.alpha)
        worst = std::max(worst, scheme::cfl_number(grid.space(), a, grid.dt()));
    if (worst > 0.9)
        for (Field& a : d.alpha)
            for (double& v : a) v *= 0.9 / worst;
}

bool recoverable(const Error& e) {
    return e.code() == ErrorCode::BlowUp || e.code() == ErrorCode::NegativeDensity ||
           e.code() == ErrorCode::MassLeak;
}

int time_index(const SpaceTimeGrid& grid, double t, bool* on_mesh) {
    const double s = (t - grid.t0()) / grid.dt();
    const int n = static_cast<int>(std::lround(s));
    *on_mesh = std::abs(s - n) <= 1e-9 && n >= 0 && n < grid.nt();
    return n;
}

}  // namespace

std::size_t MinimizerSet::clusters_at_minimum() const {
    std::size_t c = 0;
    for (const Cluster& cl : clusters)
        if (cl.cost <= global_min_cost + tie_tolerance) ++c;
    return c;
}

double path_distance(const SpaceTimeGrid& grid, const FieldPath& a, const FieldPath& b) {
    require(a.size() == b.size(), ErrorCode::DimensionMismatch, "paths of different length");
    const BoxGrid& g = grid.space();
    double s = 0.0;
    for (std::size_t n = 0; n < a.size(); ++n) {
        double d;
        if (g.dim() == 1)
            d = cdf_l1_distance(GridDensity{g, a[n]}, GridDensity{g, b[n]});
        else
            d = g.half_width() * std::sqrt(double(g.dim())) * l1_defect(g, a[n], b[n]);
        s = std::max(s, d);
    }
    return s;
}

double running_cost(const ProblemSpec& spec, const DensityPath& m, const DriftField& alpha, int n1) {
    const BoxGrid& g = m.grid.space();
    const int dim = g.dim();
    const std::size_t size = g.size();
    const double dt = m.grid.dt();
    double total = 0.0;
    for (int n = 0; n < n1; ++n) {
        const Field& mn = m.slices[n];
        double lag = 0.0;
        for (std::size_t i = 0; i < size; ++i) {
            if (mn[i] == 0.0) continue;
            const auto mi = g.multi_index(i);
            double l = 0.0;
            for (int k = 0; k < dim; ++k)
                l += spec.hamiltonian.legendre(g.coord(mi[k]), alpha.alpha[n][k * size + i]);
            lag += g.weight(i) * mn[i] * l;
        }
        total += dt * (lag + spec.running.value(g, mn));
    }
    return total;
}

double cost_unchecked(const ProblemSpec& spec, const DensityPath& m, const DriftField& alpha) {
    return running_cost(spec, m, alpha, m.grid.nt()) +
           spec.terminal.value(m.grid.space(), m.slices.back());
}

double evaluate_cost(const ProblemSpec& spec, const DensityPath& m, const DriftField& alpha,
                     double fp_tolerance) {
    require(m.slices.size() == static_cast<std::size_t>(m.grid.nt()) + 1,
            ErrorCode::DimensionMismatch, "density path does not cover the time mesh");
    const DensityPath check =
        solve_fp_forward(m.grid, GridDensity{m.grid.space(), m.slices[0]}, alpha);
    double defect = 0.0;
    for (std::size_t n = 0; n < check.slices.size(); ++n)
        defect = std::max(defect, l1_defect(m.grid.space(), check.slices[n], m.slices[n]));
    require(defect <= fp_tolerance, ErrorCode::Inadmissible,
            fmt::format("pair is not admissible: Fokker-Planck defect {:.3e}", defect));
    return cost_unchecked(spec, m, alpha);
}

std::vector<std::pair<std::string, DriftField>> multistart_drifts(const SpaceTimeGrid& grid,
                                                                  const SolverConfig& cfg) {
    const BoxGrid& g = grid.space();
    const std::size_t size = g.size();
    const int dim = g.dim();
    const double R = g.half_width();
    std::vector<std::pair<std::string, DriftField>> out;
    auto constant = [&](double c) {
        DriftField d = DriftField::zeros(grid);
        for (Field& a : d.alpha)
            for (std::size_t i = 0; i < size; ++i) a[i] = c;
        return d;
    };
    auto linear = [&](double kappa) {
        DriftField d = DriftField::zeros(grid);
        for (Field& a : d.alpha)
            for (std::size_t i = 0; i < size; ++i) {
                const Point x = g.point(i);
                for (int k = 0; k < dim; ++k) a[k * size + i] = kappa * x[k];
            }
        return d;
    };
    const double amp = cfg.start_amplitude;
    out.emplace_back("zero", DriftField::zeros(grid));
    out.emplace_back("const+", constant(amp));
    out.emplace_back("const-", constant(-amp));
    out.emplace_back("linear+", linear(amp / R));
    out.emplace_back("linear-", linear(-amp / R));
    for (int s = static_cast<int>(out.size()); s < cfg.multistarts; ++s) {
        std::seed_seq seq{static_cast<std::uint64_t>(cfg.seed), static_cast<std::uint64_t>(s)};
        std::mt19937_64 rng(seq);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        DriftField d = DriftField::zeros(grid);
        for (int k = 0; k < dim; ++k) {
            double c[3];
            for (int j = 0; j < 3; ++j) c[j] = u(rng) / (j + 1);
            const double slope = 0.5 * u(rng);
            for (int n = 0; n < grid.nt(); ++n) {
                const double tau = double(n) / grid.nt();
                for (std::size_t i = 0; i < size; ++i) {
                    const double y = (g.point(i)[k] + R) / (2.0 * R);
                    double v = 0.0;
                    for (int j = 0; j < 3; ++j) v += c[j] * std::sin((j + 1) * std::numbers::pi * y);
                    d.alpha[n][k * size + i] = amp * v * (1.0 + slope * tau);
                }
            }
        }
        out.emplace_back(fmt::format("random{}", s), std::move(d));
    }
    out.resize(std::min<std::size_t>(out.size(), static_cast<std::size_t>(std::max(cfg.multistarts, 1))));
    for (auto& [label, d] : out) limit_cfl(grid, d);
    return out;
}

MfgSolution picard(const ProblemSpec& spec, const SpaceTimeGrid& grid, const GridDensity& m0,
                   const DriftField& start, const std::string& label, const SolverConfig& cfg) {
    require(cfg.damping > 0.0 && cfg.damping <= 1.0, ErrorCode::InvalidArgument,
            "damping must lie in (0, 1]");
    require(cfg.max_iterations >= 1 && cfg.tolerance > 0.0, ErrorCode::InvalidArgument,
            "need at least one iteration and a positive tolerance");
    MfgSolution sol;
    sol.start_label = label;
    DensityPath m = solve_fp_forward(grid, m0, start);
    DensityPath anchor;  // zero-drift flow, used to retreat from a failing first iterate
    int retreats = 0;
    DensityPath m_prev;
    DensityPath mhat_prev;
    double theta = cfg.damping;
    double prev_res = INFINITY;
    int stall = 0;

    auto mix = [&](const DensityPath& a, const DensityPath& b, double th) {
        DensityPath out = a;
        for (std::size_t n = 0; n < out.slices.size(); ++n)
            for (std::size_t i = 0; i < out.slices[n].size(); ++i)
                out.slices[n][i] = (1.0 - th) * a.slices[n][i] + th * b.slices[n][i];
        return out;
    };

    for (int k = 1; k <= cfg.max_iterations; ++k) {
        ValueField u;
        DriftField alpha;
        DensityPath mhat;
        try {
            u = solve_hjb_backward(spec, m);
            alpha = drift_from_value(spec.hamiltonian, u);
            require(alpha.sup_norm() <= spec.drift_limit, ErrorCode::BlowUp,
                    "drift exceeds the configured limit");
            mhat = solve_fp_forward(grid, m0, alpha);
        } catch (const Error& e) {
            if (!recoverable(e)) throw;
            if (m_prev.slices.empty()) {
                if (++retreats > 8) throw;
                if (anchor.slices.empty())
                    anchor = solve_fp_forward(grid, m0, DriftField::zeros(grid));
                m = mix(anchor, m, 0.5);
                continue;
            }
            if (theta <= cfg.min_damping) throw;
            theta *= 0.5;
            m = mix(m_prev, mhat_prev, theta);
            continue;
        }
        const double res = path_distance(grid, mhat.slices, m.slices);
        const double cost = cost_unchecked(spec, mhat, alpha);
        sol.log.push_back({k, res, cost, theta});
        sol.iterations = k;
        sol.fixed_point_residual = res;
        if (res <= cfg.tolerance || k == cfg.max_iterations) {
            sol.converged = res <= cfg.tolerance;
            sol.u = std::move(u);
            sol.alpha = std::move(alpha);
            sol.m = std::move(mhat);
            sol.cost = cost;
            return sol;
        }
        stall = res >= 0.95 * prev_res ? stall + 1 : 0;
        if (stall >= 2 && theta > cfg.min_damping) {
            theta *= 0.5;
            stall = 0;
        }
        prev_res = res;
        m_prev = m;
        mhat_prev = mhat;
        m = mix(m, mhat, theta);
    }
    return sol;
}

bool same_cluster(const MfgSolution& a, const MfgSolution& b, double tol) {
    if (!a.m.grid.space().same_as(b.m.grid.space()) || a.m.slices.size() != b.m.slices.size())
        return false;
    if (sup_diff(a.u.du, b.u.du) > tol) return false;
    return path_distance(a.m.grid, a.m.slices, b.m.slices) <= tol;
}

MinimizerSet solve_mfc(const ProblemSpec& spec, const SpaceTimeGrid& grid, const GridDensity& m0,
                       const SolverConfig& cfg) {
    const auto starts = multistart_drifts(grid, cfg);
    std::vector<MfgSolution> runs(starts.size());
    std::vector<std::string> errors(starts.size());
    parallel_for(starts.size(), cfg.threads, [&](std::size_t s) {
        try {
            runs[s] = picard(spec, grid, m0, starts[s].second, starts[s].first, cfg);
            if (!runs[s].converged)
                errors[s] = fmt::format("{}: not converged after {} iterations (residual {:.3e})",
                                        starts[s].first, runs[s].iterations,
                                        runs[s].fixed_point_residual);
        } catch (const Error& e) {
            errors[s] = fmt::format("{}: {}", starts[s].first, e.what());
        }
    });

    MinimizerSet set;
    set.tie_tolerance = cfg.tie_tolerance;
    for (std::size_t s = 0; s < runs.size(); ++s) {
        if (errors[s].empty()) {
            set.solutions.push_back(std::move(runs[s]));
        } else {
            ++set.failed_starts;
            set.failures.push_back(errors[s]);
        }
    }
    require(!set.solutions.empty(), ErrorCode::NotConverged,
            "no multistart converged: " + (set.failures.empty() ? std::string() : set.failures[0]));

    for (std::size_t s = 0; s < set.solutions.size(); ++s) {
        bool placed = false;
        for (Cluster& c : set.clusters) {
            if (same_cluster(set.solutions[c.members.front()], set.solutions[s],
                             cfg.merge_tolerance)) {
                c.members.push_back(s);
                placed = true;
                break;
            }
        }
        if (!placed) set.clusters.push_back(Cluster{{s}, s, 0.0});
    }
    for (Cluster& c : set.clusters) {
        c.representative = c.members.front();
        for (std::size_t s : c.members)
            if (set.solutions[s].cost < set.solutions[c.representative].cost) c.representative = s;
        c.cost = set.solutions[c.representative].cost;
    }
    std::stable_sort(set.clusters.begin(), set.clusters.end(),
                     [](const Cluster& a, const Cluster& b) { return a.cost < b.cost; });
    set.global_min_cost = set.clusters.front().cost;
    return set;
}

MinimizerSet solve_mfc(const ProblemSpec& spec, double t0, const GridDensity& m0,
                       const SolverConfig& cfg) {
    bool on_mesh = false;
    const int n = time_index(spec.grid, t0, &on_mesh);
    const SpaceTimeGrid grid =
        on_mesh ? spec.grid.tail(n) : spec.grid.with_start(t0, spec.grid.nt());
    return solve_mfc(spec, grid, m0, cfg);
}

MasterResidual master_equation_residual(const ProblemSpec& spec, const MfgSolution& sol, int n,
                                        const SolverConfig& cfg) {
    require(sol.converged, ErrorCode::NotConverged, "master residual needs a converged solution");
    const SpaceTimeGrid& grid = sol.m.grid;
    require(n >= 0 && n < grid.nt(), ErrorCode::InvalidArgument, "time index outside [t0, T)");
    const BoxGrid& g = grid.space();
    const std::size_t size = g.size();
    const GridDensity mn{g, sol.m.slices[n]};

    MasterResidual r;
    const MinimizerSet now = solve_mfc(spec, grid.tail(n), mn, cfg);
    r.U_now = now.global_min_cost;
    r.unique = now.unique_minimizer();
    if (n + 1 < grid.nt()) {
        const MinimizerSet next = solve_mfc(spec, grid.tail(n + 1), mn, cfg);
        r.U_next = next.global_min_cost;
        r.unique = r.unique && next.unique_minimizer();
    } else {
        r.U_next = spec.terminal.value(g, mn.values);
    }
    r.dU_dt = (r.U_next - r.U_now) / grid.dt();

    const DiffusionStep diffusion(g, grid.dt());
    Field lap(size);
    diffusion.laplacian(sol.u.u[n], lap);
    r.diffusion_term = g.dot(lap, mn.values);
    double ham = 0.0;
    for (std::size_t i = 0; i < size; ++i) {
        const auto mi = g.multi_index(i);
        double h = 0.0;
        for (int k = 0; k < g.dim(); ++k)
            h += spec.hamiltonian.value(g.coord(mi[k]), sol.u.du[n][k * size + i]);
        ham += g.weight(i) * mn.values[i] * h;
    }
    r.hamiltonian_term = ham;
    r.running_term = spec.running.value(g, mn.values);
    r.residual = std::abs(-r.dU_dt - r.diffusion_term + r.hamiltonian_term - r.running_term);
    return r;
}

std::vector<std::pair<std::string, GridDensity>> standard_perturbations(const InitialMeasure& m0,
                                                                        const BoxGrid& grid,
                                                                        double size) {
    std::vector<std::pair<std::string, GridDensity>> out;
    InitialMeasure shifted = m0;
    shifted.mean[0] += size;
    out.emplace_back("shift", shifted.on(grid));
    InitialMeasure scaled = m0;
    scaled.sd *= 1.0 + size;
    out.emplace_back("variance", scaled.on(grid));
    const GridDensity base = m0.on(grid);
    InitialMeasure bump = m0;
    bump.mean[0] += 1.0;
    bump.sd = 0.3;
    const GridDensity b = bump.on(grid);
    Field v(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) v[i] = base.values[i] + size * b.values[i];
    out.emplace_back("bump", GridDensity::normalized(grid, std::move(v)));
    return out;
}

LipschitzReport lipschitz_diagnostics(const ProblemSpec& spec, const SpaceTimeGrid& grid,
                                      const GridDensity& m0,
                                      const std::vector<std::pair<std::string, GridDensity>>& perturbations,
                                      const SolverConfig& cfg) {
    LipschitzReport rep;
    const MinimizerSet base = solve_mfc(spec, grid, m0, cfg);
    rep.base_unique = base.unique_minimizer();
    const MfgSolution& s1 = base.best();
    for (const auto& [label, mp] : perturbations) {
        LipschitzEntry e;
        e.label = label;
        e.d2_initial = wasserstein2(m0, mp);
        if (e.d2_initial < 1e-12) {
            e.excluded = true;
            rep.entries.push_back(e);
            continue;
        }
        const MinimizerSet other = solve_mfc(spec, grid, mp, cfg);
        e.multiple_clusters = !other.unique_minimizer();
        const MfgSolution& s2 = other.best();
        double dm = 0.0;
        for (std::size_t n = 0; n < s1.m.slices.size(); ++n)
            dm = std::max(dm, wasserstein2(GridDensity{grid.space(), s1.m.slices[n]},
                                           GridDensity{grid.space(), s2.m.slices[n]}));
        e.numerator = sup_diff(s1.u.du, s2.u.du) + dm;
        e.ratio = e.numerator / e.d2_initial;
        rep.max_ratio = std::max(rep.max_ratio, e.ratio);
        rep.entries.push_back(e);
    }
    return rep;
}

ValueReport value_function(const ProblemSpec& spec, const SpaceTimeGrid& grid, const GridDensity& m0,
                           const SolverConfig& cfg) {
    const MinimizerSet set = solve_mfc(spec, grid, m0, cfg);
    return ValueReport{set.global_min_cost, set.unique_minimizer(), set.clusters.size()};
}

double empirical_value_lipschitz(const std::vector<ValueSample>& samples) {
    double c = 0.0;
    for (std::size_t a = 0; a < samples.size(); ++a)
        for (std::size_t b = a + 1; b < samples.size(); ++b) {
            const double denom = std::abs(samples[a].t - samples[b].t) +
                                 wasserstein1(samples[a].m, samples[b].m);
            if (denom > 1e-12)
                c = std::max(c, std::abs(samples[a].value - samples[b].value) / denom);
        }
    return c;
}

DppReport dynamic_programming_gap(const ProblemSpec& spec, const MfgSolution& sol, int n1,
                                  const SolverConfig& cfg) {
    const SpaceTimeGrid& grid = sol.m.grid;
    require(n1 > 0 && n1 < grid.nt(), ErrorCode::InvalidArgument,
            "intermediate time must be interior to the mesh");
    DppReport r;
    r.value_start = sol.cost;
    r.running = running_cost(spec, sol.m, sol.alpha, n1);
    const MinimizerSet tail =
        solve_mfc(spec, grid.tail(n1), GridDensity{grid.space(), sol.m.slices[n1]}, cfg);
    r.value_mid = tail.global_min_cost;
    r.gap = std::abs(r.value_start - r.running - r.value_mid);
    return r;
}

double first_order_residual(const ProblemSpec& spec, const MfgSolution& sol) {
    const BoxGrid& g = sol.m.grid.space();
    const std::size_t size = g.size();
    double worst = 0.0;
    for (int n = 0; n < sol.m.grid.nt(); ++n)
        for (std::size_t i = 0; i < size; ++i) {
            const auto mi = g.multi_index(i);
            for (int k = 0; k < g.dim(); ++k) {
                const double y = g.coord(mi[k]);
                const double dl = -spec.hamiltonian.legendre_argmax(y, sol.alpha.alpha[n][k * size + i]);
                worst = std::max(worst, std::abs(dl + sol.u.du[n][k * size + i]));
            }
        }
    return worst;
}

double drift_consistency(const ProblemSpec& spec, const MfgSolution& sol) {
    const DriftField d = drift_from_value(spec.hamiltonian, sol.u);
    return sup_diff(d.alpha, sol.alpha.alpha);
}

double second_moment_ratio(const MfgSolution& sol) {
    const BoxGrid& g = sol.m.grid.space();
    auto m2 = [&](const Field& m) { return moment(GridDensity{g, m}, 2); };
    const double base = m2(sol.m.slices.front());
    double worst = 0.0;
    for (const Field& m : sol.m.slices) worst = std::max(worst, m2(m));
    return base > 0.0 ? worst / base : INFINITY;
}

std::string convergence_csv(const MfgSolution& sol) {
    std::string out = "iteration,residual,cost,damping\n";
    for (const ConvergenceRecord& r : sol.log)
        out += fmt::format("{},{:.17g},{:.17g},{:.17g}\n", r.iteration, r.residual, r.cost, r.damping);
    return out;
}

}  // namespace mfc
