#include "mfc/pde.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "mfc/error.hpp"

namespace mfc {
namespace {

int axis_index(const BoxGrid& g, int axis, std::size_t i) {
    return static_cast<int>((i / g.stride(axis)) % static_cast<std::size_t>(g.nx()));
}

double control_width(const BoxGrid& g, int j) { return g.axis_weight(j) * g.dx(); }

double sup_abs(std::span<const double> f) {
    double s = 0.0;
    for (double v : f) s = std::max(s, std::abs(v));
    return s;
}

void require_finite(std::span<const double> f, const char* what) {
    for (double v : f)
        require(std::isfinite(v), ErrorCode::BlowUp, fmt::format("non-finite value in {}", what));
}

void check_drift(const SpaceTimeGrid& grid, const DriftField& drift) {
    require(drift.alpha.size() == static_cast<std::size_t>(grid.nt()),
            ErrorCode::DimensionMismatch, "drift field does not cover the time mesh");
    const std::size_t n = grid.space().size() * static_cast<std::size_t>(grid.dim());
    for (const Field& a : drift.alpha) {
        require(a.size() == n, ErrorCode::DimensionMismatch, "drift slice has the wrong size");
        require_finite(a, "drift field");
    }
}

void check_cfl(const BoxGrid& g, std::span<const double> alpha, double dt, int n) {
    const double c = scheme::cfl_number(g, alpha, dt);
    require(c <= 1.0 + 1e-12, ErrorCode::BlowUp,
            fmt::format("explicit transport CFL number {:.3f} > 1 at step {}; refine dt", c, n));
}

}  // namespace

DriftField DriftField::zeros(const SpaceTimeGrid& grid) {
    DriftField d;
    d.grid = grid;
    d.alpha.assign(grid.nt(), Field(grid.space().size() * grid.dim(), 0.0));
    return d;
}

double DriftField::sup_norm() const {
    double s = 0.0;
    for (const Field& a : alpha) s = std::max(s, sup_abs(a));
    return s;
}

// --- Diffusion ------------------------------------------------------------------

DiffusionStep::DiffusionStep(const BoxGrid& grid, double dt)
    : grid_(grid), r_(dt / (grid.dx() * grid.dx())) {
    const int n = grid.nx();
    cprime_.resize(n);
    inv_denom_.resize(n);
    const double diag = 1.0 + 2.0 * r_;
    auto lower = [&](int j) { return j == n - 1 ? -2.0 * r_ : -r_; };
    auto upper = [&](int j) { return j == 0 ? -2.0 * r_ : -r_; };
    double prev = 0.0;
    for (int j = 0; j < n; ++j) {
        const double denom = diag - (j > 0 ? lower(j) * prev : 0.0);
        inv_denom_[j] = 1.0 / denom;
        prev = j < n - 1 ? upper(j) * inv_denom_[j] : 0.0;
        cprime_[j] = prev;
    }
}

void DiffusionStep::apply(std::span<double> f) const {
    const int n = grid_.nx();
    std::vector<double> d(n);
    for (int axis = 0; axis < grid_.dim(); ++axis) {
        const std::size_t st = grid_.stride(axis);
        grid_.for_each_line(axis, [&](std::size_t first) {
            double prev = 0.0;
            for (int j = 0; j < n; ++j) {
                const double lower = j == 0 ? 0.0 : (j == n - 1 ? -2.0 * r_ : -r_);
                prev = (f[first + j * st] - lower * prev) * inv_denom_[j];
                d[j] = prev;
            }
            for (int j = n - 2; j >= 0; --j) d[j] -= cprime_[j] * d[j + 1];
            for (int j = 0; j < n; ++j) f[first + j * st] = d[j];
        });
    }
}

void DiffusionStep::laplacian(std::span<const double> f, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    const int n = grid_.nx();
    const double inv = 1.0 / (grid_.dx() * grid_.dx());
    for (int axis = 0; axis < grid_.dim(); ++axis) {
        const std::size_t st = grid_.stride(axis);
        grid_.for_each_line(axis, [&](std::size_t first) {
            for (int j = 0; j < n; ++j) {
                const std::size_t i = first + j * st;
                double lap;
                if (j == 0)
                    lap = 2.0 * (f[i + st] - f[i]);
                else if (j == n - 1)
                    lap = 2.0 * (f[i - st] - f[i]);
                else
                    lap = f[i - st] - 2.0 * f[i] + f[i + st];
                out[i] += lap * inv;
            }
        });
    }
}

// --- Upwind building blocks -----------------------------------------------------

namespace scheme {

double forward_difference(const BoxGrid& g, std::span<const double> v, int axis, std::size_t i) {
    const int j = axis_index(g, axis, i);
    if (j == g.nx() - 1) return std::numeric_limits<double>::quiet_NaN();
    return (v[i + g.stride(axis)] - v[i]) / control_width(g, j);
}

double backward_difference(const BoxGrid& g, std::span<const double> v, int axis, std::size_t i) {
    const int j = axis_index(g, axis, i);
    if (j == 0) return std::numeric_limits<double>::quiet_NaN();
    return (v[i] - v[i - g.stride(axis)]) / control_width(g, j);
}

void numerical_hamiltonian(const BoxGrid& g, const AxisHamiltonian& h, std::span<const double> v,
                           std::span<double> hval, std::span<double> du,
                           std::span<std::int8_t> branch) {
    const int n = g.nx();
    const std::size_t size = g.size();
    std::vector<double> p0(n);
    for (int j = 0; j < n; ++j) p0[j] = h.argmin(g.coord(j));
    std::fill(hval.begin(), hval.end(), 0.0);
    for (int axis = 0; axis < g.dim(); ++axis) {
        const std::size_t st = g.stride(axis);
        g.for_each_line(axis, [&](std::size_t first) {
            for (int j = 0; j < n; ++j) {
                const std::size_t i = first + j * st;
                const double y = g.coord(j);
                const double w = control_width(g, j);
                double best = -std::numeric_limits<double>::infinity();
                double grad = p0[j];
                std::int8_t sel = 0;
                if (j < n - 1) {
                    const double qp = (v[i + st] - v[i]) / w;
                    const double c = std::min(qp, p0[j]);
                    best = h.value(y, c);
                    grad = c;
                    sel = qp < p0[j] ? 1 : 0;
                }
                if (j > 0) {
                    const double qm = (v[i] - v[i - st]) / w;
                    const double c = std::max(qm, p0[j]);
                    const double val = h.value(y, c);
                    if (val > best) {
                        best = val;
                        grad = c;
                        sel = qm > p0[j] ? -1 : 0;
                    }
                }
                hval[i] += best;
                du[axis * size + i] = grad;
                branch[axis * size + i] = sel;
            }
        });
    }
}

void add_transport(const BoxGrid& g, std::span<const double> alpha, std::span<const double> m,
                   std::span<double> out) {
    const int n = g.nx();
    const std::size_t size = g.size();
    for (int axis = 0; axis < g.dim(); ++axis) {
        const std::size_t st = g.stride(axis);
        const double* a = alpha.data() + axis * size;
        g.for_each_line(axis, [&](std::size_t first) {
            double left_flux = 0.0;
            for (int j = 0; j < n; ++j) {
                const std::size_t i = first + j * st;
                double right_flux = 0.0;
                if (j < n - 1)
                    right_flux = std::max(a[i], 0.0) * m[i] + std::min(a[i + st], 0.0) * m[i + st];
                out[i] -= (right_flux - left_flux) / control_width(g, j);
                left_flux = right_flux;
            }
        });
    }
}

void add_transport_adjoint(const BoxGrid& g, std::span<const double> alpha,
                           std::span<const double> v, std::span<double> out) {
    const int n = g.nx();
    const std::size_t size = g.size();
    for (int axis = 0; axis < g.dim(); ++axis) {
        const std::size_t st = g.stride(axis);
        const double* a = alpha.data() + axis * size;
        g.for_each_line(axis, [&](std::size_t first) {
            for (int j = 0; j < n; ++j) {
                const std::size_t i = first + j * st;
                const double w = control_width(g, j);
                if (j < n - 1 && a[i] > 0.0) out[i] += a[i] * (v[i + st] - v[i]) / w;
                if (j > 0 && a[i] < 0.0) out[i] += a[i] * (v[i] - v[i - st]) / w;
            }
        });
    }
}

void add_drift_perturbation(const BoxGrid& g, std::span<const double> alpha,
                            std::span<const double> beta, std::span<const double> m,
                            std::span<double> out) {
    const int n = g.nx();
    const std::size_t size = g.size();
    std::vector<double> flux(n, 0.0);  // flux[j] = J_{j+1/2}
    for (int axis = 0; axis < g.dim(); ++axis) {
        const std::size_t st = g.stride(axis);
        const double* a = alpha.data() + axis * size;
        const double* b = beta.data() + axis * size;
        g.for_each_line(axis, [&](std::size_t first) {
            std::fill(flux.begin(), flux.end(), 0.0);
            for (int j = 0; j < n; ++j) {
                const std::size_t i = first + j * st;
                const double f = b[i] * m[i];
                if (f == 0.0) continue;
                // At alpha = 0 the two one-sided derivatives are averaged, keeping the map linear in beta.
                const double to_right = a[i] > 0.0 ? f : (a[i] < 0.0 ? 0.0 : 0.5 * f);
                if (j < n - 1) flux[j] += to_right;
                if (j > 0) flux[j - 1] += f - to_right;
            }
            for (int j = 0; j < n; ++j) {
                const double left = j > 0 ? flux[j - 1] : 0.0;
                out[first + j * st] -= (flux[j] - left) / control_width(g, j);
            }
        });
    }
}

double cfl_number(const BoxGrid& g, std::span<const double> alpha, double dt) {
    const std::size_t size = g.size();
    double worst = 0.0;
    for (std::size_t i = 0; i < size; ++i) {
        const auto mi = g.multi_index(i);
        double c = 0.0;
        for (int k = 0; k < g.dim(); ++k)
            c += dt * std::abs(alpha[k * size + i]) / control_width(g, mi[k]);
        worst = std::max(worst, c);
    }
    return worst;
}

}  // namespace scheme

// --- Solvers --------------------------------------------------------------------

ValueField solve_hjb(const SpaceTimeGrid& grid, const AxisHamiltonian& h, const StepSource& running,
                     const Field& terminal) {
    const BoxGrid& g = grid.space();
    const std::size_t size = g.size();
    const int dim = g.dim();
    require(terminal.size() == size, ErrorCode::DimensionMismatch,
            "terminal data does not match the grid");
    require_finite(terminal, "terminal data");
    const int nt = grid.nt();
    const double dt = grid.dt();

    ValueField vf;
    vf.grid = grid;
    vf.u.assign(nt + 1, Field());
    vf.du.assign(nt, Field(size * dim));
    vf.branch.assign(nt, std::vector<std::int8_t>(size * dim));
    vf.u[nt] = terminal;

    const DiffusionStep diffusion(g, dt);
    Field v(size), hval(size), src(size), lap(size);
    for (int n = nt - 1; n >= 0; --n) {
        v = vf.u[n + 1];
        diffusion.apply(v);
        scheme::numerical_hamiltonian(g, h, v, hval, vf.du[n], vf.branch[n]);
        std::fill(src.begin(), src.end(), 0.0);
        if (running) running(n, src);
        Field& un = vf.u[n];
        un.resize(size);
        for (std::size_t i = 0; i < size; ++i) un[i] = v[i] - dt * hval[i] + dt * src[i];
        require_finite(un, "HJB solution");
        const double prev = sup_abs(vf.u[n + 1]);
        const double now = sup_abs(un);
        require(now <= 10.0 * std::max(prev, 1.0), ErrorCode::BlowUp,
                fmt::format("HJB blow-up at step {}: |u| grew from {:.3e} to {:.3e}", n, prev, now));
        diffusion.laplacian(v, lap);
        for (std::size_t i = 0; i < size; ++i) {
            const double r = -(vf.u[n + 1][i] - un[i]) / dt - lap[i] + hval[i] - src[i];
            vf.residual = std::max(vf.residual, std::abs(r));
        }
        vf.grad_bound = std::max(vf.grad_bound, sup_abs(vf.du[n]));
    }
    return vf;
}

ValueField solve_hjb_backward(const ProblemSpec& spec, const DensityPath& m_path) {
    const SpaceTimeGrid& grid = m_path.grid;
    require(m_path.slices.size() == static_cast<std::size_t>(grid.nt()) + 1,
            ErrorCode::DimensionMismatch, "density path does not cover the time mesh");
    const BoxGrid& g = grid.space();
    StepSource running;
    if (!spec.running.is_zero()) {
        running = [&](int n, std::span<double> f) {
            const Field fn = spec.running.flat_derivative(g, m_path.slices[n]);
            std::copy(fn.begin(), fn.end(), f.begin());
        };
    }
    const Field terminal = spec.terminal.flat_derivative(g, m_path.slices.back());
    return solve_hjb(grid, spec.hamiltonian, running, terminal);
}

DriftField drift_from_value(const Hamiltonian& h, const ValueField& u) {
    const BoxGrid& g = u.grid.space();
    const std::size_t size = g.size();
    DriftField d = DriftField::zeros(u.grid);
    for (int n = 0; n < u.grid.nt(); ++n)
        for (int k = 0; k < g.dim(); ++k)
            for (std::size_t i = 0; i < size; ++i) {
                const double y = g.coord(g.multi_index(i)[k]);
                d.alpha[n][k * size + i] = -h.dp(y, u.du[n][k * size + i]);
            }
    return d;
}

DensityPath solve_fp_forward(const SpaceTimeGrid& grid, const GridDensity& m0,
                             const DriftField& drift, FpStats* stats) {
    const BoxGrid& g = grid.space();
    require(m0.grid.same_as(g), ErrorCode::DimensionMismatch,
            "initial density is not on the solver grid");
    check_drift(grid, drift);
    for (double v : m0.values)
        require(v >= 0.0 && std::isfinite(v), ErrorCode::NegativeDensity,
                "initial density has negative or non-finite values");
    const std::size_t size = g.size();
    const double dt = grid.dt();
    FpStats local;
    DensityPath path;
    path.grid = grid;
    path.slices.reserve(grid.nt() + 1);
    path.slices.push_back(GridDensity::normalized(g, m0.values).values);

    const DiffusionStep diffusion(g, dt);
    Field next(size);
    for (int n = 0; n < grid.nt(); ++n) {
        const Field& m = path.slices.back();
        check_cfl(g, drift.alpha[n], dt, n);
        next = m;
        Field transport(size, 0.0);
        scheme::add_transport(g, drift.alpha[n], m, transport);
        for (std::size_t i = 0; i < size; ++i) next[i] += dt * transport[i];
        diffusion.apply(next);
        const double before = g.integrate(m);
        const double after = g.integrate(next);
        local.max_mass_drift = std::max(local.max_mass_drift, std::abs(after - before));
        for (double& v : next) {
            local.min_value = std::min(local.min_value, v);
            require(v >= -1e-12, ErrorCode::NegativeDensity,
                    fmt::format("Fokker-Planck produced density {:.3e} at step {}", v, n));
            if (v < 0.0) v = 0.0;
        }
        const double mass = g.integrate(next);
        require(std::abs(mass - 1.0) <= 1e-6, ErrorCode::MassLeak,
                fmt::format("Fokker-Planck mass {:.12f} at step {}", mass, n));
        if (mass != 1.0) {
            for (double& v : next) v /= mass;
            ++local.renormalizations;
        }
        path.slices.push_back(next);
    }
    if (stats) *stats = local;
    return path;
}

FieldPath propagate_linear_forward(const SpaceTimeGrid& grid, const DriftField& drift,
                                   const Field& rho0, const StepSource& source) {
    const BoxGrid& g = grid.space();
    check_drift(grid, drift);
    require(rho0.size() == g.size(), ErrorCode::DimensionMismatch,
            "initial signed density does not match the grid");
    const std::size_t size = g.size();
    const double dt = grid.dt();
    const DiffusionStep diffusion(g, dt);
    FieldPath out;
    out.reserve(grid.nt() + 1);
    out.push_back(rho0);
    Field next(size), src(size);
    for (int n = 0; n < grid.nt(); ++n) {
        const Field& r = out.back();
        next = r;
        std::fill(src.begin(), src.end(), 0.0);
        scheme::add_transport(g, drift.alpha[n], r, src);
        if (source) source(n, src);
        for (std::size_t i = 0; i < size; ++i) next[i] += dt * src[i];
        diffusion.apply(next);
        require_finite(next, "linear forward solve");
        out.push_back(next);
    }
    return out;
}

FieldPath solve_linear_dual(const SpaceTimeGrid& grid, const DriftField& drift,
                            const Field& terminal, int n1, int n2, const StepSource& source) {
    const BoxGrid& g = grid.space();
    check_drift(grid, drift);
    require(0 <= n1 && n1 < n2 && n2 <= grid.nt(), ErrorCode::InvalidArgument,
            "dual solve needs t0 <= t1 < t2 <= T");
    require(terminal.size() == g.size(), ErrorCode::DimensionMismatch,
            "dual terminal data does not match the grid");
    const std::size_t size = g.size();
    const double dt = grid.dt();
    const DiffusionStep diffusion(g, dt);
    FieldPath out(n2 - n1 + 1);
    out.back() = terminal;
    Field v(size), src(size);
    for (int n = n2 - 1; n >= n1; --n) {
        v = out[n + 1 - n1];
        diffusion.apply(v);
        Field psi = v;
        std::fill(src.begin(), src.end(), 0.0);
        scheme::add_transport_adjoint(g, drift.alpha[n], v, src);
        if (source) source(n, src);
        for (std::size_t i = 0; i < size; ++i) psi[i] += dt * src[i];
        require_finite(psi, "dual solve");
        out[n - n1] = std::move(psi);
    }
    return out;
}

FieldPath solve_linear_dual(const SpaceTimeGrid& grid, const DriftField& drift,
                            const Field& terminal, double t1, double t2) {
    auto index = [&](double t) {
        const double s = (t - grid.t0()) / grid.dt();
        const int n = static_cast<int>(std::lround(s));
        require(std::abs(s - n) <= 1e-9, ErrorCode::InvalidArgument,
                fmt::format("time {} is not on the time mesh", t));
        return n;
    };
    return solve_linear_dual(grid, drift, terminal, index(t1), index(t2));
}

}  // namespace mfc
