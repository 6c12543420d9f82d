#include "mfc/linearized.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "mfc/error.hpp"
#include "mfc/parallel.hpp"

namespace mfc {
namespace {

double control_width(const BoxGrid& g, int j) { return g.axis_weight(j) * g.dx(); }

// Base-state data shared by the forward and backward linear sweeps.
struct Context {
    const ProblemSpec& spec;
    const MfgSolution& base;
    SpaceTimeGrid grid;
    std::size_t size = 0;
    std::size_t kf = 0;  // running features entering the reduction
    std::size_t kg = 0;  // terminal features entering the reduction
    std::vector<Field> phi_f, phi_g;
    std::vector<std::vector<double>> hess_f;  // per step, kf x kf
    std::vector<double> hess_g;               // kg x kg
    FieldPath gamma;                          // h_pp(Du) per step, dim * size

    Context(const ProblemSpec& s, const MfgSolution& b) : spec(s), base(b), grid(b.m.grid) {
        const BoxGrid& g = grid.space();
        size = g.size();
        require(b.alpha.alpha.size() == static_cast<std::size_t>(grid.nt()) &&
                    b.u.du.size() == static_cast<std::size_t>(grid.nt()),
                ErrorCode::DimensionMismatch, "base solution is incomplete");
        if (!spec.running.is_linear()) {
            phi_f = spec.running.feature_fields(g);
            kf = phi_f.size();
            for (int n = 0; n < grid.nt(); ++n)
                hess_f.push_back(spec.running.outer().hessian(spec.running.moments(g, b.m.slices[n])));
        }
        if (!spec.terminal.is_linear()) {
            phi_g = spec.terminal.feature_fields(g);
            kg = phi_g.size();
            hess_g = spec.terminal.outer().hessian(spec.terminal.moments(g, b.m.slices.back()));
        }
        gamma.assign(grid.nt(), Field(g.dim() * size));
        for (int n = 0; n < grid.nt(); ++n)
            for (std::size_t i = 0; i < size; ++i) {
                const auto mi = g.multi_index(i);
                for (int k = 0; k < g.dim(); ++k)
                    gamma[n][k * size + i] =
                        spec.hamiltonian.dpp(g.coord(mi[k]), b.u.du[n][k * size + i]);
            }
    }

    std::size_t dimension() const { return kf * grid.nt() + kg; }

    std::vector<double> moments(const FieldPath& rho) const {
        const BoxGrid& g = grid.space();
        std::vector<double> y(dimension(), 0.0);
        for (int n = 0; n < grid.nt(); ++n)
            for (std::size_t j = 0; j < kf; ++j) y[n * kf + j] = g.dot(phi_f[j], rho[n]);
        for (std::size_t j = 0; j < kg; ++j) y[kf * grid.nt() + j] = g.dot(phi_g[j], rho.back());
        return y;
    }

    // z equation driven by moments y and the sources r1, r3.
    FieldPath backward(const std::vector<double>& y, const LinearSources& src) const {
        Field terminal = src.r3.empty() ? Field(size, 0.0) : src.r3;
        const std::size_t off = kf * grid.nt();
        for (std::size_t j = 0; j < kg; ++j) {
            double c = 0.0;
            for (std::size_t k = 0; k < kg; ++k) c += hess_g[j * kg + k] * y[off + k];
            if (c != 0.0)
                for (std::size_t i = 0; i < size; ++i) terminal[i] += c * phi_g[j][i];
        }
        auto source = [&](int n, std::span<double> f) {
            if (!src.r1.empty())
                for (std::size_t i = 0; i < size; ++i) f[i] += src.r1[n][i];
            for (std::size_t j = 0; j < kf; ++j) {
                double c = 0.0;
                for (std::size_t k = 0; k < kf; ++k) c += hess_f[n][j * kf + k] * y[n * kf + k];
                if (c != 0.0)
                    for (std::size_t i = 0; i < size; ++i) f[i] += c * phi_f[j][i];
            }
        };
        return solve_linear_dual(grid, base.alpha, terminal, 0, grid.nt(), source);
    }

    // Branch-consistent gradient of S z^{n+1}; zero on clamped nodes.
    Field selected_gradient(const FieldPath& z, int n) const {
        const BoxGrid& g = grid.space();
        const DiffusionStep diffusion(g, grid.dt());
        Field v = z[n + 1];
        diffusion.apply(v);
        Field d(g.dim() * size, 0.0);
        for (int k = 0; k < g.dim(); ++k)
            for (std::size_t i = 0; i < size; ++i) {
                const std::int8_t b = base.u.branch[n][k * size + i];
                if (b > 0) d[k * size + i] = scheme::forward_difference(g, v, k, i);
                else if (b < 0) d[k * size + i] = scheme::backward_difference(g, v, k, i);
            }
        return d;
    }

    // rho equation driven by z and the sources xi, r2.
    FieldPath forward(const FieldPath& z, double sigma, const LinearSources& src) const {
        const BoxGrid& g = grid.space();
        Field rho0(size, 0.0);
        if (!src.xi.empty())
            for (std::size_t i = 0; i < size; ++i) rho0[i] = sigma * src.xi[i];
        if (sigma == 0.0 && src.r2.empty())
            return propagate_linear_forward(grid, base.alpha, rho0);
        auto source = [&](int n, std::span<double> f) {
            if (sigma == 0.0) return;
            Field delta = selected_gradient(z, n);
            for (std::size_t q = 0; q < delta.size(); ++q) delta[q] *= -sigma * gamma[n][q];
            scheme::add_drift_perturbation(g, base.alpha.alpha[n], delta, base.m.slices[n], f);
            if (!src.r2.empty()) add_centred_divergence(src.r2[n], sigma, f);
        };
        return propagate_linear_forward(grid, base.alpha, rho0, source);
    }

    void add_centred_divergence(const Field& r, double scale, std::span<double> out) const {
        const BoxGrid& g = grid.space();
        const int nx = g.nx();
        for (int k = 0; k < g.dim(); ++k) {
            const std::size_t st = g.stride(k);
            g.for_each_line(k, [&](std::size_t first) {
                double left = 0.0;
                for (int j = 0; j < nx; ++j) {
                    const std::size_t i = first + j * st;
                    const double right =
                        j < nx - 1 ? 0.5 * (r[k * size + i] + r[k * size + i + st]) : 0.0;
                    out[i] += scale * (right - left) / control_width(g, j);
                    left = right;
                }
            });
        }
    }

    std::vector<double> apply(const std::vector<double>& y, double sigma,
                              const LinearSources& src) const {
        return moments(forward(backward(y, src), sigma, src));
    }
};

void check_budget(std::size_t dim, const LinearizedOptions& opts) {
    const double entries = static_cast<double>(dim) * static_cast<double>(dim);
    require(entries <= opts.max_entries, ErrorCode::MemoryBudget,
            fmt::format("linearized operator needs {:.3g} dense entries (budget {:.3g}); "
                        "coarsen the grid or shorten the horizon",
                        entries, opts.max_entries));
}

Eigen::MatrixXd assemble(const Context& ctx, const LinearizedOptions& opts) {
    const std::size_t dim = ctx.dimension();
    check_budget(dim, opts);
    Eigen::MatrixXd k(dim, dim);
    const LinearSources none;
    std::vector<double> e(dim, 0.0);
    for (std::size_t c = 0; c < dim; ++c) {
        e[c] = 1.0;
        const std::vector<double> col = ctx.apply(e, 1.0, none);
        for (std::size_t r = 0; r < dim; ++r) k(r, c) = col[r];
        e[c] = 0.0;
    }
    return k;
}

double sup_gap(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s = std::max(s, std::abs(a[i] - b[i]));
    return s;
}

LinearizedSolution finish(const Context& ctx, const std::vector<double>& y, double sigma,
                          const LinearSources& src) {
    LinearizedSolution s;
    s.sigma = sigma;
    s.z = ctx.backward(y, src);
    s.rho = ctx.forward(s.z, sigma, src);
    s.residual = sup_gap(ctx.moments(s.rho), y);
    return s;
}

struct Spectrum {
    double smin = 1.0, smax = 1.0;
    int det_sign = 1;
    Eigen::VectorXd kernel;
};

Spectrum spectrum(const Eigen::MatrixXd& k, double sigma) {
    Spectrum s;
    const Eigen::Index n = k.rows();
    if (n == 0) return s;
    const Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n, n) - sigma * k;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    s.smax = sv(0);
    s.smin = sv(n - 1);
    s.kernel = svd.matrixV().col(n - 1);
    const double det = Eigen::PartialPivLU<Eigen::MatrixXd>(m).determinant();
    s.det_sign = det < 0.0 ? -1 : 1;
    return s;
}

}  // namespace

const char* to_string(Verdict v) {
    switch (v) {
        case Verdict::StronglyStable: return "strongly_stable";
        case Verdict::Stable: return "stable";
        case Verdict::Unstable: return "unstable";
        case Verdict::Inconclusive: return "inconclusive";
    }
    return "inconclusive";
}

std::size_t reduced_dimension(const ProblemSpec& spec, const MfgSolution& base) {
    return Context(spec, base).dimension();
}

std::vector<double> assemble_moment_operator(const ProblemSpec& spec, const MfgSolution& base,
                                             const LinearizedOptions& opts) {
    const Context ctx(spec, base);
    const Eigen::MatrixXd k = assemble(ctx, opts);
    std::vector<double> out(k.size());
    for (Eigen::Index r = 0; r < k.rows(); ++r)
        for (Eigen::Index c = 0; c < k.cols(); ++c) out[r * k.cols() + c] = k(r, c);
    return out;
}

LinearizedSolution solve_linearized(const ProblemSpec& spec, const MfgSolution& base, double sigma,
                                    const LinearSources& sources, const LinearizedOptions& opts) {
    require(sigma >= 0.0 && sigma <= 1.0, ErrorCode::InvalidArgument, "sigma must lie in [0, 1]");
    const Context ctx(spec, base);
    const std::size_t size = ctx.size;
    const int nt = ctx.grid.nt();
    require(sources.r1.empty() || (sources.r1.size() == static_cast<std::size_t>(nt) &&
                                   sources.r1[0].size() == size),
            ErrorCode::DimensionMismatch, "R1 must have nt slices on the grid");
    require(sources.r2.empty() ||
                (sources.r2.size() == static_cast<std::size_t>(nt) &&
                 sources.r2[0].size() == size * ctx.grid.dim()),
            ErrorCode::DimensionMismatch, "R2 must have nt vector slices on the grid");
    require(sources.r3.empty() || sources.r3.size() == size, ErrorCode::DimensionMismatch,
            "R3 does not match the grid");
    require(sources.xi.empty() || sources.xi.size() == size, ErrorCode::DimensionMismatch,
            "xi does not match the grid");

    const std::size_t dim = ctx.dimension();
    check_budget(dim, opts);
    const std::vector<double> c = ctx.apply(std::vector<double>(dim, 0.0), sigma, sources);
    if (dim == 0) return finish(ctx, c, sigma, sources);

    if (opts.method == LinearizedOptions::Method::Direct) {
        const Eigen::MatrixXd k = assemble(ctx, opts);
        const Eigen::MatrixXd m = Eigen::MatrixXd::Identity(dim, dim) - sigma * k;
        const Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(c.data(), dim);
        const Eigen::VectorXd y = m.fullPivLu().solve(rhs);
        require(y.allFinite(), ErrorCode::NotConverged, "linearized system is singular");
        return finish(ctx, std::vector<double>(y.data(), y.data() + dim), sigma, sources);
    }

    std::vector<double> y = c;
    for (int it = 1; it <= opts.max_iterations; ++it) {
        const std::vector<double> ty = ctx.apply(y, sigma, sources);
        const double gap = sup_gap(ty, y);
        for (std::size_t i = 0; i < dim; ++i) y[i] += opts.damping * (ty[i] - y[i]);
        require(std::isfinite(gap), ErrorCode::BlowUp, "linearized Picard iteration diverged");
        if (gap <= opts.tolerance) {
            LinearizedSolution s = finish(ctx, y, sigma, sources);
            s.iterations = it;
            return s;
        }
    }
    fail(ErrorCode::NotConverged,
         fmt::format("linearized Picard iteration did not converge in {} iterations",
                     opts.max_iterations));
}

std::vector<double> default_sigma_grid() {
    std::vector<double> s;
    for (int i = 0; i <= 5; ++i) s.push_back(i / 5.0);
    return s;
}

std::string StabilityReport::csv() const {
    std::ostringstream out;
    out << "sigma,min_singular_value,verdict\n";
    for (const StabilityRow& r : rows)
        out << fmt::format("{:.17g},{:.17g},{}\n", r.sigma, r.relative, to_string(verdict));
    return out.str();
}

StabilityReport classify_stability(const ProblemSpec& spec, const MfgSolution& base,
                                   const std::vector<double>& sigma_grid, double threshold,
                                   const LinearizedOptions& opts) {
    require(!sigma_grid.empty(), ErrorCode::InvalidArgument, "sigma grid is empty");
    for (double s : sigma_grid)
        require(s >= 0.0 && s <= 1.0, ErrorCode::InvalidArgument, "sigma values must lie in [0, 1]");
    require(threshold > 0.0, ErrorCode::InvalidArgument, "threshold must be positive");
    StabilityReport r;
    r.sigma_grid = sigma_grid;
    r.threshold = threshold;
    if (!base.converged) {
        r.note = "base solution did not converge";
        return r;
    }
    const Context ctx(spec, base);
    const Eigen::MatrixXd k = assemble(ctx, opts);
    r.dimension = ctx.dimension();
    if (!k.allFinite()) {
        r.note = "linearized sweep produced non-finite values";
        return r;
    }
    std::vector<Spectrum> spectra(sigma_grid.size());
    parallel_for(sigma_grid.size(), opts.threads,
                 [&](std::size_t i) { spectra[i] = spectrum(k, sigma_grid[i]); });
    bool below = false;
    for (std::size_t i = 0; i < sigma_grid.size(); ++i) {
        const Spectrum& s = spectra[i];
        StabilityRow row{sigma_grid[i], s.smin, s.smin / std::max(s.smax, 1.0), s.det_sign};
        below = below || row.relative <= threshold;
        r.sign_change = r.sign_change || row.det_sign < 0;
        r.rows.push_back(row);
        r.min_singular_values.push_back(row.relative);
    }
    const Spectrum one = spectrum(k, 1.0);
    const bool final_ok = one.smin / std::max(one.smax, 1.0) > threshold;
    r.sign_change = r.sign_change || one.det_sign < 0;
    if (!final_ok) {
        r.verdict = Verdict::Unstable;
        r.note = "I - K is singular at sigma = 1";
    } else if (below || r.sign_change) {
        r.verdict = Verdict::Stable;
        r.note = "nonsingular at sigma = 1 but singular for some sigma in [0, 1]";
    } else {
        r.verdict = Verdict::StronglyStable;
    }
    return r;
}

StabilityReport classify_stability(const ProblemSpec& spec, const MinimizerSet& set,
                                   std::size_t cluster, const std::vector<double>& sigma_grid,
                                   double threshold, const LinearizedOptions& opts) {
    require(cluster < set.clusters.size(), ErrorCode::InvalidArgument, "no such cluster");
    const Cluster& c = set.clusters[cluster];
    StabilityReport r =
        classify_stability(spec, set.solutions[c.representative], sigma_grid, threshold, opts);
    if (c.cost > set.global_min_cost + set.tie_tolerance) {
        r.verdict = Verdict::Inconclusive;
        r.note = "base is not a global minimizer";
    } else if (!set.unique_minimizer()) {
        r.verdict = Verdict::Inconclusive;
        r.note = fmt::format("{} distinct minimizers attain the minimum", set.clusters_at_minimum());
    }
    return r;
}

StrongStabilityCheck strong_stability_from_stability_check(const StabilityReport& report,
                                                           bool unique_cluster) {
    StrongStabilityCheck c;
    c.applicable = unique_cluster &&
                   (report.verdict == Verdict::Stable || report.verdict == Verdict::StronglyStable);
    if (!c.applicable) {
        c.note = unique_cluster ? "base is not stable" : "minimizer is not unique";
        return c;
    }
    for (const StabilityRow& row : report.rows) {
        if (row.relative <= report.threshold || row.det_sign < 0)
            c.violations.push_back(row.sigma);
    }
    c.note = c.violations.empty() ? "nonsingular on the whole sigma grid"
                                  : "singular points on the sigma grid";
    return c;
}

void vanish_near_start(DriftField& beta) {
    for (std::size_t n = 0; n < std::min<std::size_t>(2, beta.alpha.size()); ++n)
        std::fill(beta.alpha[n].begin(), beta.alpha[n].end(), 0.0);
}

DriftField random_beta(const SpaceTimeGrid& grid, std::uint64_t seed, double amplitude) {
    const BoxGrid& g = grid.space();
    const std::size_t size = g.size();
    const double r = g.half_width();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    constexpr int kModes = 3;
    DriftField beta = DriftField::zeros(grid);
    for (int k = 0; k < g.dim(); ++k) {
        double c[kModes][kModes];
        for (int a = 0; a < kModes; ++a)
            for (int b = 0; b < kModes; ++b) c[a][b] = amplitude * normal(rng) / (a + b + 1);
        for (int n = 0; n < grid.nt(); ++n) {
            const double tau = (grid.time(n) - grid.t0()) / (grid.T() - grid.t0());
            for (std::size_t i = 0; i < size; ++i) {
                const double x = g.point(i)[k];
                double v = 0.0;
                for (int a = 0; a < kModes; ++a)
                    for (int b = 0; b < kModes; ++b)
                        v += c[a][b] * std::sin((a + 1) * std::numbers::pi * (x + r) / (2.0 * r)) *
                             std::cos(b * std::numbers::pi * tau);
                beta.at(n, k, i) = v;
            }
        }
    }
    vanish_near_start(beta);
    return beta;
}

FieldPath solve_perturbation_rho(const ProblemSpec& spec, const MfgSolution& base,
                                 const DriftField& beta) {
    (void)spec;
    const SpaceTimeGrid& grid = base.m.grid;
    const BoxGrid& g = grid.space();
    require(beta.alpha.size() == static_cast<std::size_t>(grid.nt()) &&
                beta.alpha[0].size() == g.dim() * g.size(),
            ErrorCode::DimensionMismatch, "perturbation does not match the base grid");
    DriftField b = beta;
    vanish_near_start(b);
    auto source = [&](int n, std::span<double> f) {
        scheme::add_drift_perturbation(g, base.alpha.alpha[n], b.alpha[n], base.m.slices[n], f);
    };
    FieldPath rho = propagate_linear_forward(grid, base.alpha, Field(g.size(), 0.0), source);
    double scale = 1.0;
    for (const Field& f : rho)
        for (double v : f) scale = std::max(scale, std::abs(v));
    for (const Field& f : rho)
        require(std::abs(g.integrate(f)) <= 1e-9 * scale, ErrorCode::MassLeak,
                "perturbation changed the total mass");
    return rho;
}

double second_order_form(const ProblemSpec& spec, const MfgSolution& base, const DriftField& beta) {
    const SpaceTimeGrid& grid = base.m.grid;
    const BoxGrid& g = grid.space();
    const std::size_t size = g.size();
    const FieldPath rho = solve_perturbation_rho(spec, base, beta);
    DriftField b = beta;
    vanish_near_start(b);
    double total = 0.0;
    for (int n = 0; n < grid.nt(); ++n) {
        double control = 0.0;
        for (std::size_t i = 0; i < size; ++i) {
            const auto mi = g.multi_index(i);
            double q = 0.0;
            for (int k = 0; k < g.dim(); ++k) {
                const double bb = b.alpha[n][k * size + i];
                q += bb * bb /
                     spec.hamiltonian.dpp(g.coord(mi[k]), base.u.du[n][k * size + i]);
            }
            control += g.weight(i) * base.m.slices[n][i] * q;
        }
        total += grid.dt() * (control + spec.running.second_variation(g, base.m.slices[n], rho[n]));
    }
    return total + spec.terminal.second_variation(g, base.m.slices.back(), rho.back());
}

SecondOrderReport second_order_check(const ProblemSpec& spec, const MfgSolution& base, int samples,
                                     std::uint64_t seed) {
    require(samples > 0, ErrorCode::InvalidArgument, "need at least one sample");
    SecondOrderReport r;
    for (int s = 0; s < samples; ++s) {
        const std::uint64_t sd = seed + static_cast<std::uint64_t>(s);
        r.seeds.push_back(sd);
        r.values.push_back(second_order_form(spec, base, random_beta(base.m.grid, sd)));
    }
    r.minimum = *std::min_element(r.values.begin(), r.values.end());
    return r;
}

double quadratic_identity(const ProblemSpec& spec, const MfgSolution& base,
                          const LinearizedSolution& sol) {
    const Context ctx(spec, base);
    const BoxGrid& g = ctx.grid.space();
    const std::size_t size = ctx.size;
    require(sol.z.size() == static_cast<std::size_t>(ctx.grid.nt() + 1) &&
                sol.rho.size() == sol.z.size(),
            ErrorCode::DimensionMismatch, "linearized solution does not match the base");
    double total = 0.0;
    for (int n = 0; n < ctx.grid.nt(); ++n) {
        const Field d = ctx.selected_gradient(sol.z, n);
        double q = 0.0;
        for (std::size_t i = 0; i < size; ++i) {
            double s = 0.0;
            for (int k = 0; k < g.dim(); ++k)
                s += ctx.gamma[n][k * size + i] * d[k * size + i] * d[k * size + i];
            q += g.weight(i) * base.m.slices[n][i] * s;
        }
        total += ctx.grid.dt() * (sol.sigma * q +
                                  spec.running.second_variation(g, base.m.slices[n], sol.rho[n]));
    }
    return total + spec.terminal.second_variation(g, base.m.slices.back(), sol.rho.back());
}

LinearizedSolution kernel_candidate(const ProblemSpec& spec, const MfgSolution& base, double sigma,
                                    const LinearizedOptions& opts) {
    const Context ctx(spec, base);
    const Eigen::MatrixXd k = assemble(ctx, opts);
    const std::size_t dim = ctx.dimension();
    std::vector<double> y(dim, 0.0);
    if (dim > 0) {
        const Spectrum s = spectrum(k, sigma);
        for (std::size_t i = 0; i < dim; ++i) y[i] = s.kernel(static_cast<Eigen::Index>(i));
    }
    return finish(ctx, y, sigma, LinearSources{});
}

InteriorReport interior_trajectory_stability(const ProblemSpec& spec, const MfgSolution& base,
                                             const SolverConfig& cfg,
                                             const std::vector<double>& fractions) {
    const SpaceTimeGrid& grid = base.m.grid;
    InteriorReport rep;
    for (double f : fractions) {
        require(f > 0.0 && f < 1.0, ErrorCode::InvalidArgument,
                "interior fractions must lie in (0, 1)");
        InteriorPoint p;
        p.fraction = f;
        p.index = std::clamp(static_cast<int>(std::lround(f * grid.nt())), 1, grid.nt() - 1);
        p.t = grid.time(p.index);
        const MinimizerSet set = solve_mfc(spec, grid.tail(p.index), base.m.at(p.index), cfg);
        p.unique = set.unique_minimizer();
        p.verdict = classify_stability(spec, set, 0).verdict;
        if (p.verdict == Verdict::Stable || p.verdict == Verdict::StronglyStable) ++rep.passing;
        rep.points.push_back(p);
    }
    return rep;
}

}  // namespace mfc
