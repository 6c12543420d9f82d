#include "mfc/particles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "mfc/error.hpp"
#include "mfc/parallel.hpp"

namespace mfc {
namespace {

enum class Stream : std::uint32_t { Initial = 0, Noise = 1, Sampling = 2 };

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t index, Stream stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                      static_cast<std::uint32_t>(stream)};
    return std::mt19937_64(seq);
}

double uniform01(std::mt19937_64& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

// One draw from m: inverse CDF in 1D, rejection against max m otherwise.
void draw(const GridDensity& m, double peak, std::mt19937_64& rng, double* out) {
    const BoxGrid& g = m.grid;
    if (g.dim() == 1) {
        out[0] = quantile_1d(m, uniform01(rng));
        return;
    }
    const double r = g.half_width();
    for (;;) {
        double x[kMaxDim];
        for (int k = 0; k < g.dim(); ++k) x[k] = -r + 2.0 * r * uniform01(rng);
        const double f = g.interpolate(m.values, std::span<const double>(x, g.dim()));
        if (uniform01(rng) * peak <= f) {
            std::copy(x, x + g.dim(), out);
            return;
        }
    }
}

double reflect(double x, double r, int* exits) {
    while (x > r || x < -r) {
        ++*exits;
        x = x > r ? 2.0 * r - x : -2.0 * r - x;
    }
    return x;
}

// drift(n, state, out) fills out (same layout as state) for step n.
template <class Drift>
ParticleEnsemble euler_maruyama(const SpaceTimeGrid& grid, int particles, int dim,
                                std::vector<double> x0, std::uint64_t seed, Drift&& drift) {
    ParticleEnsemble e;
    e.N = particles;
    e.dim = dim;
    e.t0 = grid.t0();
    e.dt = grid.dt();
    e.steps = grid.nt();
    e.noise_seed = seed;
    const double r = grid.space().half_width();
    std::vector<std::mt19937_64> noise;
    noise.reserve(particles);
    for (int j = 0; j < particles; ++j) noise.push_back(make_rng(seed, j, Stream::Noise));
    std::normal_distribution<double> normal(0.0, 1.0);
    const double scale = std::sqrt(2.0 * grid.dt());
    e.positions.reserve(grid.nt() + 1);
    e.positions.push_back(std::move(x0));
    Field a(static_cast<std::size_t>(particles) * dim);
    for (int n = 0; n < grid.nt(); ++n) {
        const Field& x = e.positions.back();
        drift(n, x, a);
        Field next(x.size());
        for (int j = 0; j < particles; ++j)
            for (int k = 0; k < dim; ++k) {
                const std::size_t q = static_cast<std::size_t>(j) * dim + k;
                e.max_drift = std::max(e.max_drift, std::abs(a[q]));
                normal.reset();
                next[q] = reflect(x[q] + grid.dt() * a[q] + scale * normal(noise[j]), r, &e.exits);
            }
        e.positions.push_back(std::move(next));
    }
    return e;
}

// -H_p(x, Du(t_n, x)) for independent particles driven by the base value field.
auto base_feedback(const ProblemSpec& spec, const MfgSolution& sol) {
    return [&spec, &sol](int n, const Field& x, Field& a) {
        const BoxGrid& g = sol.m.grid.space();
        const int dim = g.dim();
        const std::size_t size = g.size();
        const std::size_t count = x.size() / dim;
        for (std::size_t j = 0; j < count; ++j) {
            const std::span<const double> p(x.data() + j * dim, dim);
            for (int k = 0; k < dim; ++k) {
                const std::span<const double> du(sol.u.du[n].data() + k * size, size);
                a[j * dim + k] = -spec.hamiltonian.dp(p[k], g.interpolate(du, p));
            }
        }
    };
}

void check_solution(const MfgSolution& sol, int N) {
    require(sol.converged, ErrorCode::NotConverged, "particle simulation needs a converged solution");
    require(N >= 1, ErrorCode::InvalidArgument, "particle count must be positive");
}

double slice_distance(const ParticleEnsemble& e, const DensityPath& m, int n, int p) {
    const GridDensity mn = m.at(n);
    if (e.dim == 1) return wasserstein_atoms_grid_1d(e.empirical(n), mn, p);
    return wasserstein(e.empirical(n), mn, p);
}

}  // namespace

EmpiricalMeasure ParticleEnsemble::empirical(int n) const {
    return EmpiricalMeasure::uniform(dim, positions.at(n));
}

std::vector<double> sample_initial(const GridDensity& m0, int N, std::uint64_t seed) {
    require(N >= 1, ErrorCode::InvalidArgument, "particle count must be positive");
    const int dim = m0.grid.dim();
    const double peak = *std::max_element(m0.values.begin(), m0.values.end());
    require(peak > 0.0, ErrorCode::EmptyMeasure, "initial density is empty");
    std::vector<double> x(static_cast<std::size_t>(N) * dim);
    for (int j = 0; j < N; ++j) {
        std::mt19937_64 rng = make_rng(seed, j, Stream::Initial);
        draw(m0, peak, rng, x.data() + static_cast<std::size_t>(j) * dim);
    }
    return x;
}

ParticleEnsemble simulate_mckean_vlasov(const ProblemSpec& spec, const MfgSolution& sol, int N,
                                        std::uint64_t seed) {
    check_solution(sol, N);
    const SpaceTimeGrid& grid = sol.m.grid;
    return euler_maruyama(grid, N, grid.dim(), sample_initial(sol.m.at(0), N, seed), seed,
                          base_feedback(spec, sol));
}

ParticleEnsemble simulate_meanfield_feedback(const ProblemSpec& spec, const MfgSolution& sol, int N,
                                             std::uint64_t seed, double delta_track) {
    ParticleEnsemble e = simulate_mckean_vlasov(spec, sol, N, seed);
    e.tracking.resize(e.steps + 1);
    for (int n = 0; n <= e.steps; ++n) {
        e.tracking[n] = slice_distance(e, sol.m, n, 2);
        if (e.tau_index < 0 && e.tracking[n] >= delta_track) e.tau_index = n;
    }
    e.truncated = e.tau_index >= 0;
    return e;
}

double sup_distance(const ParticleEnsemble& e, const DensityPath& m, int p) {
    require(static_cast<int>(m.slices.size()) == e.steps + 1 && m.grid.dim() == e.dim,
            ErrorCode::DimensionMismatch, "ensemble and density path differ in shape");
    double s = 0.0;
    for (int n = 0; n <= e.steps; ++n) s = std::max(s, slice_distance(e, m, n, p));
    return s;
}

double iid_sampling_error(const DensityPath& m, int samples, std::uint64_t seed) {
    require(samples >= 1, ErrorCode::InvalidArgument, "sample count must be positive");
    double s = 0.0;
    for (std::size_t n = 0; n < m.slices.size(); ++n) {
        const GridDensity mn = m.at(static_cast<int>(n));
        const double peak = *std::max_element(mn.values.begin(), mn.values.end());
        std::mt19937_64 rng = make_rng(seed, n, Stream::Sampling);
        std::vector<double> x(static_cast<std::size_t>(samples) * mn.grid.dim());
        for (int j = 0; j < samples; ++j)
            draw(mn, peak, rng, x.data() + static_cast<std::size_t>(j) * mn.grid.dim());
        const EmpiricalMeasure e = EmpiricalMeasure::uniform(mn.grid.dim(), std::move(x));
        s = std::max(s, mn.grid.dim() == 1 ? wasserstein_atoms_grid_1d(e, mn, 1)
                                           : wasserstein(e, mn, 1));
    }
    return s;
}

double SmallNValue::value(int n, std::span<const double> x) const {
    require(static_cast<int>(x.size()) == N, ErrorCode::DimensionMismatch,
            "V^N needs one coordinate per particle");
    require(grid.space().contains(x), ErrorCode::OutOfDomain, "point outside the tensor box");
    return grid.space().interpolate(v.u.at(n), x);
}

SmallNValue solve_vn_small(const ProblemSpec& spec, int N, const SmallNOptions& opts) {
    require(spec.grid.dim() == 1, ErrorCode::InvalidArgument, "V^N is solved for 1D problems only");
    require(N >= 1 && N <= 3, ErrorCode::InvalidArgument, "V^N supports N in {1, 2, 3}");
    const int nx = opts.nx > 0 ? opts.nx : (N == 1 ? 161 : N == 2 ? 81 : 41);
    const BoxGrid box(N, spec.grid.space().half_width(), nx);
    const double entries =
        static_cast<double>(box.size()) * (spec.grid.nt() + 1) * (2.0 + N);
    require(entries <= opts.max_entries, ErrorCode::MemoryBudget,
            fmt::format("tensor grid needs {:.3g} stored values (budget {:.3g}); lower nx", entries,
                        opts.max_entries));

    SmallNValue out;
    out.N = N;
    out.grid = SpaceTimeGrid::product(box, spec.grid.t0(), spec.grid.T(), spec.grid.nt());
    out.base_hamiltonian = std::make_shared<const Hamiltonian>(spec.hamiltonian);
    out.hamiltonian = std::make_shared<const ScaledHamiltonian>(*out.base_hamiltonian, N);

    // Couplings at the empirical measure of each node; symmetric in the particles.
    Field running(box.size()), terminal(box.size());
    for (std::size_t i = 0; i < box.size(); ++i) {
        const Point p = box.point(i);
        const EmpiricalMeasure e = EmpiricalMeasure::uniform(1, std::vector<double>(p.begin(), p.begin() + N));
        running[i] = spec.running.value(e);
        terminal[i] = spec.terminal.value(e);
    }
    const bool no_running = spec.running.is_zero();
    StepSource source;
    if (!no_running)
        source = [&running](int, std::span<double> f) { std::copy(running.begin(), running.end(), f.begin()); };
    out.v = solve_hjb(out.grid, *out.hamiltonian, source, terminal);
    double g = 0.0;
    for (const Field& d : out.v.du)
        for (double q : d) g = std::max(g, std::abs(q));
    out.lipschitz = N * g;
    return out;
}

std::vector<VnSample> vn_sample_points(const ProblemSpec& spec, int N, int count,
                                       std::uint64_t seed) {
    require(count >= 1, ErrorCode::InvalidArgument, "sample count must be positive");
    std::mt19937_64 rng = make_rng(seed, static_cast<std::uint64_t>(N), Stream::Sampling);
    const double half = 0.5 * spec.grid.space().half_width();
    std::uniform_int_distribution<int> step(0, spec.grid.nt());
    std::vector<VnSample> out(count);
    for (VnSample& s : out) {
        s.n = step(rng);
        s.x.resize(N);
        for (double& x : s.x) x = -half + 2.0 * half * uniform01(rng);
    }
    return out;
}

VnGapReport vn_vs_u_gap(const ProblemSpec& spec, const SmallNValue& vn,
                        const std::vector<VnSample>& samples, const SolverConfig& cfg) {
    require(vn.grid.nt() == spec.grid.nt() && vn.grid.t0() == spec.grid.t0(),
            ErrorCode::DimensionMismatch, "V^N and the spec use different time meshes");
    VnGapReport r;
    for (const VnSample& s : samples) {
        require(static_cast<int>(s.x.size()) == vn.N && s.n >= 0 && s.n <= spec.grid.nt(),
                ErrorCode::InvalidArgument, "sample does not match V^N");
        const EmpiricalMeasure e = EmpiricalMeasure::uniform(1, s.x);
        double v = 0.0, u = 0.0;
        if (s.n == spec.grid.nt()) {
            v = u = spec.terminal.value(e);
        } else {
            v = vn.value(s.n, s.x);
            u = solve_mfc(spec, spec.grid.tail(s.n), deposit_particles(e, spec.grid.space()), cfg)
                    .global_min_cost;
        }
        r.vn_values.push_back(v);
        r.u_values.push_back(u);
        r.gaps.push_back(std::abs(v - u));
    }
    if (!r.gaps.empty()) {
        r.max_gap = *std::max_element(r.gaps.begin(), r.gaps.end());
        r.mean_gap = std::accumulate(r.gaps.begin(), r.gaps.end(), 0.0) / r.gaps.size();
    }
    return r;
}

ParticleEnsemble simulate_optimal_yn(const ProblemSpec& spec, const SmallNValue& vn,
                                     std::uint64_t seed) {
    require(vn.N >= 1 && vn.hamiltonian, ErrorCode::InvalidArgument, "V^N is not initialised");
    const BoxGrid& g = vn.grid.space();
    const GridDensity m0 = spec.initial.on(spec.grid.space());
    const std::size_t size = g.size();
    auto drift = [&](int n, const Field& y, Field& a) {
        require(g.contains(y), ErrorCode::OutOfDomain, "Y^N left the tensor box");
        for (int k = 0; k < vn.N; ++k) {
            const std::span<const double> du(vn.v.du[n].data() + k * size, size);
            a[k] = -vn.hamiltonian->dp(y[k], g.interpolate(du, y));
        }
    };
    return euler_maruyama(vn.grid, vn.N, 1, sample_initial(m0, vn.N, seed), seed, drift);
}

std::string ChaosExperimentResult::csv() const {
    std::ostringstream out;
    out << "N,mean_error,ci_halfwidth,replicas_used\n";
    for (const ChaosRow& r : rows)
        out << fmt::format("{},{:.17g},{:.17g},{}\n", r.N, r.mean_error, r.ci_halfwidth,
                           r.replicas_used);
    return out.str();
}

std::string ChaosExperimentResult::fit_summary() const {
    return fmt::format("gamma_hat,c_hat,r_squared,delta_track\n{:.17g},{:.17g},{:.17g},{:.17g}\n",
                       gamma_hat, c_hat, r_squared, delta_track);
}

std::string ChaosExperimentResult::plot_data() const {
    std::ostringstream out;
    out << "# N mean_error\n";
    for (const ChaosRow& r : rows) out << fmt::format("{} {:.17g}\n", r.N, r.mean_error);
    return out.str();
}

ChaosExperimentResult chaos_rate_experiment(const ProblemSpec& spec, const MfgSolution& sol,
                                            const ChaosOptions& opts) {
    require(sol.converged, ErrorCode::NotConverged, "chaos experiment needs a converged solution");
    require(!opts.N_values.empty() && opts.replicas >= 1, ErrorCode::InvalidArgument,
            "chaos experiment needs N values and at least one replica");
    for (std::size_t i = 0; i < opts.N_values.size(); ++i)
        require(opts.N_values[i] >= 1 && (i == 0 || opts.N_values[i] > opts.N_values[i - 1]),
                ErrorCode::InvalidArgument, "N values must be positive and strictly increasing");

    const std::size_t nn = opts.N_values.size();
    const std::size_t reps = static_cast<std::size_t>(opts.replicas);
    std::vector<double> error(nn * reps, 0.0), tracked(nn * reps, 0.0);
    std::vector<char> ok(nn * reps, 0);
    parallel_for(nn * reps, opts.threads, [&](std::size_t idx) {
        const std::size_t i = idx / reps, r = idx % reps;
        const int N = opts.N_values[i];
        const std::uint64_t seed = opts.seed + 1000003ull * static_cast<std::uint64_t>(N) + r;
        try {
            const ParticleEnsemble e = simulate_meanfield_feedback(spec, sol, N, seed);
            error[idx] = sup_distance(e, sol.m, 1);
            tracked[idx] = *std::max_element(e.tracking.begin(), e.tracking.end());
            ok[idx] = std::isfinite(error[idx]) && e.exits == 0;
        } catch (const Error&) {
            ok[idx] = 0;
        }
    });

    ChaosExperimentResult res;
    res.N_values = opts.N_values;
    if (opts.delta_track > 0.0) {
        res.delta_track = opts.delta_track;
    } else {
        double s = 0.0;
        int c = 0;
        for (std::size_t r = 0; r < reps; ++r)
            if (ok[(nn - 1) * reps + r]) s += tracked[(nn - 1) * reps + r], ++c;
        res.delta_track = c > 0 ? 3.0 * s / c : std::numeric_limits<double>::infinity();
    }
    if (reps == 1)
        res.warnings.push_back("replicas = 1: confidence half-widths are undefined (reported as inf)");

    for (std::size_t i = 0; i < nn; ++i) {
        ChaosRow row;
        row.N = opts.N_values[i];
        int truncated = 0;
        for (std::size_t r = 0; r < reps; ++r) {
            const std::size_t idx = i * reps + r;
            if (!ok[idx]) {
                ++row.excluded;
                continue;
            }
            row.errors.push_back(error[idx]);
            if (tracked[idx] >= res.delta_track) ++truncated;
        }
        require(row.excluded * 5 <= opts.replicas, ErrorCode::NotConverged,
                fmt::format("N = {}: {} of {} replicas failed", row.N, row.excluded, opts.replicas));
        row.replicas_used = static_cast<int>(row.errors.size());
        const double n = row.replicas_used;
        row.mean_error = std::accumulate(row.errors.begin(), row.errors.end(), 0.0) / n;
        if (row.replicas_used > 1) {
            double ss = 0.0;
            for (double e : row.errors) ss += (e - row.mean_error) * (e - row.mean_error);
            row.ci_halfwidth = 1.96 * std::sqrt(ss / (n - 1.0) / n);
        } else {
            row.ci_halfwidth = std::numeric_limits<double>::infinity();
        }
        row.truncated_fraction = truncated / n;
        res.rows.push_back(std::move(row));
    }

    // Least squares on (log N, log mean error).
    const double m = static_cast<double>(nn);
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    for (const ChaosRow& r : res.rows) {
        const double x = std::log(static_cast<double>(r.N)), y = std::log(r.mean_error);
        sx += x, sy += y, sxx += x * x, sxy += x * y, syy += y * y;
    }
    if (nn >= 2) {
        const double vx = sxx - sx * sx / m, vy = syy - sy * sy / m, cxy = sxy - sx * sy / m;
        const double slope = cxy / vx;
        res.gamma_hat = -slope;
        res.c_hat = std::exp((sy - slope * sx) / m);
        res.r_squared = vy > 0.0 ? cxy * cxy / (vx * vy) : 1.0;
    } else {
        res.warnings.push_back("a single N value: no rate fit");
        res.c_hat = res.rows[0].mean_error;
    }
    return res;
}

}  // namespace mfc
