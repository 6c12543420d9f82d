#include "mfc/model.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "mfc/error.hpp"

namespace mfc {

// --- Hamiltonian ----------------------------------------------------------------

Hamiltonian::Hamiltonian(Params p) : p_(p) {
    require(p.lambda >= 0.0 && std::isfinite(p.lambda), ErrorCode::InvalidArgument,
            "soft-quadratic lambda must be nonnegative");
    require(std::isfinite(p.amplitude), ErrorCode::InvalidArgument, "non-finite drift amplitude");
}

Hamiltonian Hamiltonian::from_descriptor(const std::string& name, double lambda,
                                         const std::string& drift_kind, double amplitude) {
    Params p;
    auto parse_drift = [&]() {
        if (drift_kind == "none") return Drift::None;
        if (drift_kind == "constant") return Drift::Constant;
        if (drift_kind == "tanh") return Drift::Tanh;
        if (drift_kind == "linear") return Drift::Linear;
        fail(ErrorCode::UnknownDescriptor, "unknown drift descriptor '" + drift_kind + "'");
    };
    if (name == "quadratic") {
        return Hamiltonian(p);
    }
    if (name == "quadratic-plus-drift") {
        p.drift = parse_drift();
        p.amplitude = amplitude;
        return Hamiltonian(p);
    }
    if (name == "soft-quadratic") {
        p.lambda = lambda;
        p.drift = parse_drift();
        p.amplitude = amplitude;
        return Hamiltonian(p);
    }
    fail(ErrorCode::UnknownDescriptor, "unknown hamiltonian descriptor '" + name + "'");
}

std::string Hamiltonian::descriptor() const {
    const char* drift_name = "none";
    switch (p_.drift) {
        case Drift::None: drift_name = "none"; break;
        case Drift::Constant: drift_name = "constant"; break;
        case Drift::Tanh: drift_name = "tanh"; break;
        case Drift::Linear: drift_name = "linear"; break;
    }
    if (p_.lambda > 0.0)
        return fmt::format("soft-quadratic(lambda={},drift={},a={})", p_.lambda, drift_name,
                           p_.amplitude);
    if (p_.drift == Drift::None || p_.amplitude == 0.0) return "quadratic";
    return fmt::format("quadratic-plus-drift(drift={},a={})", drift_name, p_.amplitude);
}

double Hamiltonian::drift(double y) const {
    switch (p_.drift) {
        case Drift::None: return 0.0;
        case Drift::Constant: return p_.amplitude;
        case Drift::Tanh: return p_.amplitude * std::tanh(y);
        case Drift::Linear: return p_.amplitude * y;
    }
    return 0.0;
}

double Hamiltonian::drift_dy(double y) const {
    switch (p_.drift) {
        case Drift::None:
        case Drift::Constant: return 0.0;
        case Drift::Tanh: {
            const double c = std::cosh(y);
            return p_.amplitude / (c * c);
        }
        case Drift::Linear: return p_.amplitude;
    }
    return 0.0;
}

double Hamiltonian::value(double y, double q) const {
    double h = q * q + drift(y) * q;
    if (p_.lambda > 0.0) h += p_.lambda * (std::sqrt(1.0 + q * q) - 1.0);
    return h;
}

double Hamiltonian::dp(double y, double q) const {
    double g = 2.0 * q + drift(y);
    if (p_.lambda > 0.0) g += p_.lambda * q / std::sqrt(1.0 + q * q);
    return g;
}

double Hamiltonian::dpp(double, double q) const {
    double g = 2.0;
    if (p_.lambda > 0.0) g += p_.lambda / std::pow(1.0 + q * q, 1.5);
    return g;
}

double Hamiltonian::dx(double y, double q) const { return drift_dy(y) * q; }

double Hamiltonian::argmin(double y) const { return legendre_argmax(y, 0.0); }

double Hamiltonian::legendre_argmax(double y, double a) const {
    const double v = drift(y);
    if (p_.lambda == 0.0) return -(a + v) / 2.0;
    // h_p is strictly increasing; damped Newton on h_p(q) + a = 0.
    auto residual = [&](double q) { return dp(y, q) + a; };
    const double starts[] = {-(a + v) / 2.0, 0.0, 10.0, -10.0};
    double best_q = 0.0;
    double best_r = INFINITY;
    for (double q : starts) {
        double r = residual(q);
        for (int it = 0; it < 100 && std::abs(r) > 1e-14 * (1.0 + std::abs(a) + std::abs(v));
             ++it) {
            const double step = -r / dpp(y, q);
            double t = 1.0;
            double q_new = q + step;
            double r_new = residual(q_new);
            while (std::abs(r_new) >= std::abs(r) && t > 1e-8) {
                t *= 0.5;
                q_new = q + t * step;
                r_new = residual(q_new);
            }
            q = q_new;
            r = r_new;
        }
        if (std::abs(r) < best_r) {
            best_r = std::abs(r);
            best_q = q;
        }
    }
    require(best_r <= 1e-10 * (1.0 + std::abs(a) + std::abs(v)), ErrorCode::NotConverged,
            fmt::format("Legendre Newton did not converge at y={}, a={} (residual {:.3e})", y, a,
                        best_r));
    return best_q;
}

double Hamiltonian::legendre(double y, double a) const {
    if (p_.lambda == 0.0) {
        const double s = a + drift(y);
        return s * s / 4.0;
    }
    const double q = legendre_argmax(y, a);
    return -a * q - value(y, q);
}

double Hamiltonian::value(const Point& x, const Point& p, int dim) const {
    double s = 0.0;
    for (int k = 0; k < dim; ++k) s += value(x[k], p[k]);
    return s;
}

Point Hamiltonian::grad_p(const Point& x, const Point& p, int dim) const {
    Point g{0.0, 0.0, 0.0};
    for (int k = 0; k < dim; ++k) g[k] = dp(x[k], p[k]);
    return g;
}

Point Hamiltonian::grad_x(const Point& x, const Point& p, int dim) const {
    Point g{0.0, 0.0, 0.0};
    for (int k = 0; k < dim; ++k) g[k] = dx(x[k], p[k]);
    return g;
}

Point Hamiltonian::hess_p(const Point& x, const Point& p, int dim) const {
    Point g{0.0, 0.0, 0.0};
    for (int k = 0; k < dim; ++k) g[k] = dpp(x[k], p[k]);
    return g;
}

double legendre(const Hamiltonian& h, const Point& x, const Point& a, int dim) {
    double s = 0.0;
    for (int k = 0; k < dim; ++k) s += h.legendre(x[k], a[k]);
    return s;
}

Point legendre_gradient(const Hamiltonian& h, const Point& x, const Point& a, int dim) {
    Point g{0.0, 0.0, 0.0};
    for (int k = 0; k < dim; ++k) g[k] = -h.legendre_argmax(x[k], a[k]);
    return g;
}

Point legendre_hessian(const Hamiltonian& h, const Point& x, const Point& a, int dim) {
    Point g{0.0, 0.0, 0.0};
    for (int k = 0; k < dim; ++k) g[k] = 1.0 / h.dpp(x[k], h.legendre_argmax(x[k], a[k]));
    return g;
}

DualityReport duality_identities(const Hamiltonian& h, const Point& x, const Point& p, int dim) {
    DualityReport r;
    const Point hp = h.grad_p(x, p, dim);
    Point alpha{0.0, 0.0, 0.0};
    double hp_dot_p = 0.0;
    for (int k = 0; k < dim; ++k) {
        alpha[k] = -hp[k];
        hp_dot_p += hp[k] * p[k];
        r.alpha_norm = std::max(r.alpha_norm, std::abs(alpha[k]));
    }
    const double l = legendre(h, x, alpha, dim);
    r.value_residual = std::abs(h.value(x, p, dim) - hp_dot_p + l);
    for (int k = 0; k < dim; ++k) {
        const double eps = 1e-4 * (1.0 + std::abs(alpha[k]));
        Point ap = alpha;
        Point am = alpha;
        ap[k] += eps;
        am[k] -= eps;
        // Fourth-order central difference keeps the oracle below 1e-7.
        Point app = alpha;
        Point amm = alpha;
        app[k] += 2 * eps;
        amm[k] -= 2 * eps;
        const double d = (8.0 * (legendre(h, x, ap, dim) - legendre(h, x, am, dim)) -
                          (legendre(h, x, app, dim) - legendre(h, x, amm, dim))) /
                         (12.0 * eps);
        r.gradient_residual = std::max(r.gradient_residual, std::abs(d + p[k]));
    }
    return r;
}

HamiltonianCheck check_hamiltonian(const Hamiltonian& h, double half_width, double p_max) {
    HamiltonianCheck c;
    c.c_low = INFINITY;
    c.c_high = 0.0;
    constexpr int kSamples = 20;
    for (int iy = 0; iy < kSamples; ++iy) {
        const double y = -half_width + 2.0 * half_width * iy / (kSamples - 1);
        for (int iq = 0; iq < kSamples; ++iq) {
            const double q = -p_max + 2.0 * p_max * iq / (kSamples - 1);
            const double hv = h.value(y, q);
            const double hpp = h.dpp(y, q);
            c.c_low = std::min(c.c_low, hpp);
            c.c_high = std::max(c.c_high, hpp);
            c.growth_c = std::max(c.growth_c, hv / (1.0 + q * q));
            c.growth_c = std::max(c.growth_c, 0.5 * (-hv + std::sqrt(hv * hv + 4.0 * q * q)));

            const double e = 1e-4;
            const double fd_p = (h.value(y, q + e) - h.value(y, q - e)) / (2 * e);
            const double fd_x = (h.value(y + e, q) - h.value(y - e, q)) / (2 * e);
            const double fd_pp = (h.dp(y, q + e) - h.dp(y, q - e)) / (2 * e);
            c.derivative_error = std::max(
                {c.derivative_error, std::abs(fd_p - h.dp(y, q)) / (1.0 + std::abs(fd_p)),
                 std::abs(fd_x - h.dx(y, q)) / (1.0 + std::abs(fd_x)),
                 std::abs(fd_pp - h.dpp(y, q)) / (1.0 + std::abs(fd_pp))});
        }
    }
    c.ok = c.c_low > 0.0 && std::isfinite(c.growth_c) && c.derivative_error < 1e-5;
    return c;
}

// --- Features and outer functions ------------------------------------------------

double Feature::operator()(const Point& x, int dim) const {
    switch (kind) {
        case Kind::Coordinate: return x[axis];
        case Kind::SquaredNorm: {
            double s = 0.0;
            for (int k = 0; k < dim; ++k) s += x[k] * x[k];
            return s;
        }
        case Kind::Cosine: return std::cos(omega * x[axis]);
        case Kind::Bump: {
            double r2 = 0.0;
            for (int k = 0; k < dim; ++k) r2 += (x[k] - center[k]) * (x[k] - center[k]);
            return std::exp(-r2 / (2.0 * width * width));
        }
    }
    return 0.0;
}

std::string Feature::describe() const {
    switch (kind) {
        case Kind::Coordinate: return fmt::format("x{}", axis);
        case Kind::SquaredNorm: return "|x|^2";
        case Kind::Cosine: return fmt::format("cos({}*x{})", omega, axis);
        case Kind::Bump: return fmt::format("bump(w={})", width);
    }
    return "?";
}

double Outer::value(std::span<const double> s) const {
    switch (kind) {
        case Kind::Zero: return 0.0;
        case Kind::Linear: {
            double v = 0.0;
            for (std::size_t j = 0; j < s.size(); ++j) v += coef[j] * s[j];
            return v;
        }
        case Kind::Quadratic: {
            double v = 0.0;
            for (std::size_t j = 0; j < s.size(); ++j) v += 0.5 * coef[j] * s[j] * s[j];
            return v;
        }
        case Kind::DoubleWell: {
            const double w = s[0] * s[0] - b * b;
            return a * w * w;
        }
    }
    return 0.0;
}

std::vector<double> Outer::gradient(std::span<const double> s) const {
    std::vector<double> g(s.size(), 0.0);
    switch (kind) {
        case Kind::Zero: break;
        case Kind::Linear:
            for (std::size_t j = 0; j < s.size(); ++j) g[j] = coef[j];
            break;
        case Kind::Quadratic:
            for (std::size_t j = 0; j < s.size(); ++j) g[j] = coef[j] * s[j];
            break;
        case Kind::DoubleWell: g[0] = 4.0 * a * s[0] * (s[0] * s[0] - b * b); break;
    }
    return g;
}

std::vector<double> Outer::hessian(std::span<const double> s) const {
    const std::size_t k = s.size();
    std::vector<double> hmat(k * k, 0.0);
    switch (kind) {
        case Kind::Zero:
        case Kind::Linear: break;
        case Kind::Quadratic:
            for (std::size_t j = 0; j < k; ++j) hmat[j * k + j] = coef[j];
            break;
        case Kind::DoubleWell: hmat[0] = 12.0 * a * s[0] * s[0] - 4.0 * a * b * b; break;
    }
    return hmat;
}

std::string Outer::describe() const {
    switch (kind) {
        case Kind::Zero: return "zero";
        case Kind::Linear: return fmt::format("linear({})", fmt::join(coef, ","));
        case Kind::Quadratic: return fmt::format("quadratic({})", fmt::join(coef, ","));
        case Kind::DoubleWell: return fmt::format("double-well(A={},b={})", a, b);
    }
    return "?";
}

// --- Coupling -------------------------------------------------------------------

Coupling::Coupling(std::vector<Feature> features, Outer outer)
    : features_(std::move(features)), outer_(std::move(outer)) {
    if (outer_.kind == Outer::Kind::Linear || outer_.kind == Outer::Kind::Quadratic)
        require(outer_.coef.size() == features_.size(), ErrorCode::InvalidArgument,
                "outer coefficients do not match the feature count");
    if (outer_.kind == Outer::Kind::DoubleWell)
        require(features_.size() == 1, ErrorCode::InvalidArgument,
                "double-well outer function takes exactly one feature");
}

Coupling Coupling::zero() { return Coupling({}, Outer{}); }

Coupling Coupling::linear(Feature f, double c) {
    Outer o;
    o.kind = Outer::Kind::Linear;
    o.coef = {c};
    return Coupling({f}, o);
}

std::vector<Field> Coupling::feature_fields(const BoxGrid& grid) const {
    std::vector<Field> out(features_.size(), Field(grid.size()));
    for (std::size_t j = 0; j < features_.size(); ++j)
        for (std::size_t i = 0; i < grid.size(); ++i)
            out[j][i] = features_[j](grid.point(i), grid.dim());
    return out;
}

std::vector<double> Coupling::moments(const BoxGrid& grid, std::span<const double> m) const {
    std::vector<double> s(features_.size(), 0.0);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (m[i] == 0.0) continue;
        const Point x = grid.point(i);
        const double wm = grid.weight(i) * m[i];
        for (std::size_t j = 0; j < features_.size(); ++j) s[j] += wm * features_[j](x, grid.dim());
    }
    return s;
}

std::vector<double> Coupling::moments(const EmpiricalMeasure& e) const {
    std::vector<double> s(features_.size(), 0.0);
    double total = 0.0;
    for (std::size_t k = 0; k < e.size(); ++k) {
        Point x{0.0, 0.0, 0.0};
        for (int d = 0; d < e.dim; ++d) x[d] = e.point(k)[d];
        for (std::size_t j = 0; j < features_.size(); ++j)
            s[j] += e.weight(k) * features_[j](x, e.dim);
        total += e.weight(k);
    }
    for (double& v : s) v /= total;
    return s;
}

double Coupling::value(const BoxGrid& grid, std::span<const double> m) const {
    if (is_zero()) return 0.0;
    return outer_.value(moments(grid, m));
}

double Coupling::value(const EmpiricalMeasure& e) const {
    if (is_zero()) return 0.0;
    return outer_.value(moments(e));
}

Field Coupling::flat_derivative(const BoxGrid& grid, std::span<const double> m) const {
    Field f(grid.size(), 0.0);
    if (is_zero()) return f;
    const std::vector<double> g = outer_.gradient(moments(grid, m));
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Point x = grid.point(i);
        for (std::size_t j = 0; j < features_.size(); ++j) f[i] += g[j] * features_[j](x, grid.dim());
    }
    return f;
}

double Coupling::flat_derivative_at(const Point& x, int dim, std::span<const double> s) const {
    if (is_zero()) return 0.0;
    const std::vector<double> g = outer_.gradient(s);
    double v = 0.0;
    for (std::size_t j = 0; j < features_.size(); ++j) v += g[j] * features_[j](x, dim);
    return v;
}

double Coupling::second_variation(const BoxGrid& grid, std::span<const double> m,
                                  std::span<const double> rho) const {
    if (is_linear()) return 0.0;
    const std::vector<double> s = moments(grid, m);
    const std::vector<double> r = moments(grid, rho);
    const std::vector<double> hmat = outer_.hessian(s);
    const std::size_t k = s.size();
    double v = 0.0;
    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b) v += hmat[a * k + b] * r[a] * r[b];
    return v;
}

std::string Coupling::describe() const {
    if (is_zero()) return "zero";
    std::vector<std::string> names;
    for (const Feature& f : features_) names.push_back(f.describe());
    return fmt::format("{}[{}]", outer_.describe(), fmt::join(names, ","));
}

CouplingCheck check_coupling(const Coupling& c, const GridDensity& m, const GridDensity& m_prime) {
    require(m.grid.same_as(m_prime.grid), ErrorCode::DimensionMismatch,
            "coupling check needs densities on one grid");
    CouplingCheck r;
    const BoxGrid& g = m.grid;
    const Field f = c.flat_derivative(g, m.values);
    Field diff(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) diff[i] = m_prime.values[i] - m.values[i];
    const double exact = g.dot(f, diff);
    const double base = c.value(g, m.values);
    auto quotient = [&](double s) {
        Field mix(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) mix[i] = m.values[i] + s * diff[i];
        return (c.value(g, mix) - base) / s;
    };
    const double d1 = quotient(1e-2);
    const double d2 = quotient(1e-3);
    r.error_coarse = std::abs(d1 - exact);
    r.error_fine = std::abs(d2 - exact);
    r.richardson_error = std::abs((10.0 * d2 - d1) / 9.0 - exact);
    const double floor = 1e-9 * (1.0 + std::abs(exact) + std::abs(base));
    r.ok = r.error_fine <= floor ||
           (r.error_fine <= 0.2 * r.error_coarse + floor && r.richardson_error <= r.error_fine);
    return r;
}

GridDensity InitialMeasure::on(const BoxGrid& grid) const {
    require(sd > 0.0, ErrorCode::InvalidArgument, "initial standard deviation must be positive");
    Field v(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Point x = grid.point(i);
        double r2 = 0.0;
        for (int k = 0; k < grid.dim(); ++k) r2 += (x[k] - mean[k]) * (x[k] - mean[k]);
        v[i] = std::exp(-r2 / (2.0 * sd * sd));
    }
    return GridDensity::normalized(grid, std::move(v));
}

SpecCheck validate_spec(const ProblemSpec& spec) {
    SpecCheck c;
    c.hamiltonian = check_hamiltonian(spec.hamiltonian, spec.grid.space().half_width());
    const BoxGrid& g = spec.grid.space();
    const GridDensity m = spec.initial.on(g);
    InitialMeasure shifted = spec.initial;
    shifted.mean[0] += 0.5;
    shifted.sd *= 1.3;
    const GridDensity mp = shifted.on(g);
    c.running = check_coupling(spec.running, m, mp);
    c.terminal = check_coupling(spec.terminal, m, mp);
    require(c.hamiltonian.ok, ErrorCode::InvalidArgument,
            "hamiltonian of '" + spec.name + "' fails the sampled convexity/derivative checks");
    require(c.running.ok && c.terminal.ok, ErrorCode::InvalidArgument,
            "coupling of '" + spec.name + "' fails the flat-derivative consistency check");
    return c;
}

std::vector<std::string> builtin_names() {
    return {"quadratic-free", "drifted", "two-well", "two-well-offset"};
}

ProblemSpec builtin(const std::string& name, const BuiltinOptions& opts) {
    ProblemSpec s;
    s.name = name;
    s.horizon = opts.horizon;
    s.grid = SpaceTimeGrid::make(opts.dim, opts.half_width, opts.nx, 0.0, opts.horizon, opts.nt);
    const Feature x0{Feature::Kind::Coordinate, 0};
    if (name == "quadratic-free") {
        s.terminal = Coupling::linear(x0, 0.5);
        s.initial.sd = 0.5;
    } else if (name == "drifted") {
        s.hamiltonian = Hamiltonian({0.0, Hamiltonian::Drift::Tanh, 1.0});
        Outer q;
        q.kind = Outer::Kind::Quadratic;
        q.coef = {1.0};
        s.running = Coupling({x0}, q);
        s.terminal = Coupling::linear(x0, 0.5);
        s.initial.mean[0] = 0.5;
        s.initial.sd = 0.5;
    } else if (name == "two-well" || name == "two-well-offset") {
        Outer w;
        w.kind = Outer::Kind::DoubleWell;
        w.a = 0.5;
        w.b = 1.0;
        s.terminal = Coupling({x0}, w);
        s.initial.sd = 0.5;
        if (name == "two-well-offset") s.initial.mean[0] = 1.25;
    } else {
        fail(ErrorCode::UnknownDescriptor, "unknown builtin problem '" + name + "'");
    }
    return s;
}

std::vector<ProblemSpec> builtin_library(const BuiltinOptions& opts) {
    std::vector<ProblemSpec> out;
    for (const std::string& n : builtin_names()) {
        out.push_back(builtin(n, opts));
        validate_spec(out.back());
    }
    return out;
}

}  // namespace mfc
