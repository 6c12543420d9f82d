#include "mfc/measures.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "mfc/error.hpp"
#include "mfc/transport.hpp"

namespace mfc {
namespace {

// 8-point Gauss-Legendre rule on [-1, 1].
constexpr std::array<double, 8> kGaussNodes{
    -0.9602898564975363, -0.7966664774136267, -0.5255324099163290, -0.1834346424956498,
    0.1834346424956498,  0.5255324099163290,  0.7966664774136267,  0.9602898564975363};
constexpr std::array<double, 8> kGaussWeights{
    0.1012285362903763, 0.2223810344533745, 0.3137066978681171, 0.3626837833783620,
    0.3626837833783620, 0.3137066978681171, 0.2223810344533745, 0.1012285362903763};

// Piecewise-linear density on a uniform 1D node set, with its exact CDF.
class PiecewiseLinear1D {
public:
    explicit PiecewiseLinear1D(const GridDensity& m)
        : x0_(m.grid.coord(0)), dx_(m.grid.dx()), f_(m.values), cdf_(m.values.size(), 0.0) {
        const std::size_t n = f_.size();
        for (std::size_t i = 0; i + 1 < n; ++i)
            cdf_[i + 1] = cdf_[i] + 0.5 * dx_ * (f_[i] + f_[i + 1]);
        const double total = cdf_.back();
        require(total > 0.0, ErrorCode::EmptyMeasure, "grid density has zero mass");
        for (double& v : f_) v /= total;
        for (double& v : cdf_) v /= total;
    }

    std::size_t nodes() const { return f_.size(); }
    double node(std::size_t i) const { return x0_ + static_cast<double>(i) * dx_; }
    double x_end() const { return node(f_.size() - 1); }
    const std::vector<double>& cdf_nodes() const { return cdf_; }

    double quantile(double s) const {
        if (s <= 0.0) return first_support();
        auto it = std::upper_bound(cdf_.begin(), cdf_.end(), s);
        if (it == cdf_.end()) return last_support();
        const std::size_t i = static_cast<std::size_t>(it - cdf_.begin()) - 1;
        const double r = (s - cdf_[i]) / dx_;
        const double a = f_[i];
        const double delta = f_[i + 1] - f_[i];
        const double disc = std::max(0.0, a * a + 2.0 * delta * r);
        const double denom = a + std::sqrt(disc);
        double tau = denom > 0.0 ? 2.0 * r / denom : 0.0;
        tau = std::clamp(tau, 0.0, 1.0);
        return node(i) + tau * dx_;
    }

    /// int_lo^hi |x - c|^p f(x) dx for p in {0, 1, 2}.
    double abs_moment(double lo, double hi, double c, int p) const {
        if (hi <= lo) return 0.0;
        const std::size_t n = f_.size();
        double acc = 0.0;
        std::size_t i = static_cast<std::size_t>(
            std::clamp(std::floor((lo - x0_) / dx_), 0.0, double(n - 2)));
        for (; i + 1 < n; ++i) {
            const double a = std::max(lo, node(i));
            const double b = std::min(hi, node(i + 1));
            if (b > a) {
                const double slope = (f_[i + 1] - f_[i]) / dx_;
                const double A = f_[i] + slope * (c - node(i));
                acc += poly_piece(a - c, b - c, A, slope, p);
            }
            if (node(i + 1) >= hi) break;
        }
        return acc;
    }

private:
    double first_support() const {
        for (std::size_t i = 0; i + 1 < cdf_.size(); ++i)
            if (cdf_[i + 1] > 0.0) return node(i);
        return node(0);
    }
    double last_support() const {
        for (std::size_t i = cdf_.size() - 1; i > 0; --i)
            if (cdf_[i - 1] < 1.0) return node(i);
        return x_end();
    }

    // int_{y0}^{y1} |y|^p (A + B y) dy.
    static double poly_piece(double y0, double y1, double A, double B, int p) {
        auto prim = [A, B, p](double y) {
            const double yp1 = std::pow(y, p + 1);
            return A * yp1 / (p + 1) + B * yp1 * y / (p + 2);
        };
        if (p == 1) {
            if (y0 >= 0.0) return prim(y1) - prim(y0);
            if (y1 <= 0.0) return -(prim(y1) - prim(y0));
            return (prim(y1) - prim(0.0)) - (prim(0.0) - prim(y0));
        }
        return prim(y1) - prim(y0);
    }

    double x0_;
    double dx_;
    std::vector<double> f_;
    std::vector<double> cdf_;
};

// int_0^1 |a0 + a1 t + a2 t^2| dt.
double abs_quadratic_integral(double a0, double a1, double a2) {
    std::array<double, 4> cuts{0.0, 1.0, 0.0, 0.0};
    int ncuts = 2;
    const double scale = std::abs(a0) + std::abs(a1) + std::abs(a2);
    if (scale == 0.0) return 0.0;
    auto push = [&](double r) {
        if (r > 0.0 && r < 1.0) cuts[ncuts++] = r;
    };
    if (std::abs(a2) <= 1e-14 * scale) {
        if (a1 != 0.0) push(-a0 / a1);
    } else {
        const double disc = a1 * a1 - 4.0 * a2 * a0;
        if (disc > 0.0) {
            const double q = -0.5 * (a1 + std::copysign(std::sqrt(disc), a1));
            push(q / a2);
            if (q != 0.0) push(a0 / q);
        }
    }
    std::sort(cuts.begin(), cuts.begin() + ncuts);
    auto prim = [&](double t) { return a0 * t + a1 * t * t / 2.0 + a2 * t * t * t / 3.0; };
    double acc = 0.0;
    for (int k = 0; k + 1 < ncuts; ++k) acc += std::abs(prim(cuts[k + 1]) - prim(cuts[k]));
    return acc;
}

struct SortedAtoms {
    std::vector<double> x;
    std::vector<double> w;
};

SortedAtoms sorted_atoms(const EmpiricalMeasure& e) {
    std::vector<std::size_t> order(e.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return e.points[i] < e.points[j]; });
    SortedAtoms s;
    double total = 0.0;
    for (std::size_t k = 0; k < e.size(); ++k) total += e.weight(k);
    for (std::size_t k : order) {
        s.x.push_back(e.points[k]);
        s.w.push_back(e.weight(k) / total);
    }
    return s;
}

void check_p(int p) {
    require(p == 1 || p == 2, ErrorCode::InvalidArgument, "transport order must be 1 or 2");
}

int dim_of(const Measure& m) {
    return std::visit(
        [](const auto& x) {
            if constexpr (std::is_same_v<std::decay_t<decltype(x)>, GridDensity>)
                return x.grid.dim();
            else
                return x.dim;
        },
        m);
}

void validate_measure(const Measure& m) {
    if (const auto* e = std::get_if<EmpiricalMeasure>(&m)) {
        e->validate();
    } else {
        const auto& g = std::get<GridDensity>(m);
        require(!g.values.empty() && g.values.size() == g.grid.size(), ErrorCode::EmptyMeasure,
                "grid density is empty or does not match its grid");
        require(g.mass() > 0.0, ErrorCode::EmptyMeasure, "grid density has zero mass");
    }
}

// Merge cells into blocks so that at most max_support atoms remain. Each block
// atom sits at the mass centroid of its cells.
EmpiricalMeasure aggregate_cloud(const GridDensity& m, std::size_t max_support) {
    const BoxGrid& g = m.grid;
    const int dim = g.dim();
    const int cells = g.nx() - 1;
    std::size_t total = 1;
    for (int k = 0; k < dim; ++k) total *= static_cast<std::size_t>(cells);
    int factor = 1;
    auto blocks_for = [&](int f) {
        std::size_t b = 1;
        const int per_axis = (cells + f - 1) / f;
        for (int k = 0; k < dim; ++k) b *= static_cast<std::size_t>(per_axis);
        return b;
    };
    while (blocks_for(factor) > max_support) ++factor;
    const EmpiricalMeasure fine = to_point_cloud(m);
    if (factor == 1) return fine;

    const int per_axis = (cells + factor - 1) / factor;
    const std::size_t nb = blocks_for(factor);
    std::vector<double> mass(nb, 0.0);
    std::vector<double> centroid(nb * dim, 0.0);
    for (std::size_t c = 0; c < total; ++c) {
        std::size_t rem = c;
        std::size_t block = 0;
        std::size_t mult = 1;
        for (int k = 0; k < dim; ++k) {
            const int ci = static_cast<int>(rem % cells);
            rem /= cells;
            block += mult * static_cast<std::size_t>(ci / factor);
            mult *= static_cast<std::size_t>(per_axis);
        }
        const double w = fine.weight(c);
        mass[block] += w;
        for (int k = 0; k < dim; ++k) centroid[block * dim + k] += w * fine.points[c * dim + k];
    }
    EmpiricalMeasure out;
    out.dim = dim;
    for (std::size_t b = 0; b < nb; ++b) {
        if (mass[b] <= 0.0) continue;
        for (int k = 0; k < dim; ++k) out.points.push_back(centroid[b * dim + k] / mass[b]);
        out.weights.push_back(mass[b]);
    }
    return out;
}

EmpiricalMeasure resample(const EmpiricalMeasure& e, std::size_t count, std::uint64_t seed) {
    std::vector<double> w(e.size());
    for (std::size_t k = 0; k < e.size(); ++k) w[k] = e.weight(k);
    std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
    std::mt19937_64 rng(seed);
    EmpiricalMeasure out;
    out.dim = e.dim;
    for (std::size_t k = 0; k < count; ++k) {
        const auto p = e.point(pick(rng));
        out.points.insert(out.points.end(), p.begin(), p.end());
    }
    return out;
}

EmpiricalMeasure as_cloud(const Measure& m, const TransportOptions& opts) {
    if (const auto* g = std::get_if<GridDensity>(&m)) return aggregate_cloud(*g, opts.max_support);
    const auto& e = std::get<EmpiricalMeasure>(m);
    if (e.size() > opts.max_support) return resample(e, opts.max_support, opts.seed);
    return e;
}

double cloud_transport(const EmpiricalMeasure& a, const EmpiricalMeasure& b, int p) {
    const std::size_t n = a.size();
    const std::size_t mm = b.size();
    std::vector<double> sa(n), sb(mm), cost(n * mm);
    for (std::size_t i = 0; i < n; ++i) sa[i] = a.weight(i);
    for (std::size_t j = 0; j < mm; ++j) sb[j] = b.weight(j);
    double ta = std::accumulate(sa.begin(), sa.end(), 0.0);
    for (double& v : sa) v /= ta;
    for (std::size_t i = 0; i < n; ++i) {
        const auto x = a.point(i);
        for (std::size_t j = 0; j < mm; ++j) {
            const auto y = b.point(j);
            double d2 = 0.0;
            for (int k = 0; k < a.dim; ++k) d2 += (x[k] - y[k]) * (x[k] - y[k]);
            cost[i * mm + j] = p == 1 ? std::sqrt(d2) : d2;
        }
    }
    const double c = solve_transport(sa, sb, cost).cost;
    return p == 1 ? std::max(0.0, c) : std::sqrt(std::max(0.0, c));
}

}  // namespace

GridDensity GridDensity::normalized(const BoxGrid& grid, Field values) {
    require(values.size() == grid.size(), ErrorCode::DimensionMismatch,
            "density values do not match the grid");
    for (double& v : values) {
        require(std::isfinite(v), ErrorCode::InvalidArgument, "non-finite density value");
        require(v >= -1e-12, ErrorCode::NegativeDensity, "negative density value");
        if (v < 0.0) v = 0.0;
    }
    const double mass = grid.integrate(values);
    require(mass > 0.0, ErrorCode::EmptyMeasure, "density has zero mass");
    for (double& v : values) v /= mass;
    return GridDensity{grid, std::move(values)};
}

EmpiricalMeasure EmpiricalMeasure::uniform(int dim, std::vector<double> points) {
    EmpiricalMeasure e;
    e.dim = dim;
    e.points = std::move(points);
    e.validate();
    return e;
}

void EmpiricalMeasure::validate() const {
    require(dim >= 1 && dim <= kMaxDim, ErrorCode::InvalidArgument, "bad measure dimension");
    require(!points.empty() && points.size() % dim == 0, ErrorCode::EmptyMeasure,
            "empirical measure has no atoms");
    for (double v : points)
        require(std::isfinite(v), ErrorCode::InvalidArgument, "non-finite atom position");
    if (!weights.empty()) {
        require(weights.size() == size(), ErrorCode::DimensionMismatch,
                "weights do not match atoms");
        double s = 0.0;
        for (double w : weights) {
            require(w >= 0.0 && std::isfinite(w), ErrorCode::InvalidArgument, "bad atom weight");
            s += w;
        }
        require(s > 0.0, ErrorCode::EmptyMeasure, "atomic measure has zero mass");
    }
}

double cdf_l1_distance(const GridDensity& a, const GridDensity& b) {
    require(a.grid.dim() == 1 && a.grid.same_as(b.grid), ErrorCode::DimensionMismatch,
            "CDF distance needs two densities on the same 1D grid");
    const PiecewiseLinear1D pa(a);
    const PiecewiseLinear1D pb(b);
    const double dx = a.grid.dx();
    const auto& ca = pa.cdf_nodes();
    const auto& cb = pb.cdf_nodes();
    // Recover normalized nodal densities from CDF increments of each side.
    const double ma = a.mass();
    const double mb = b.mass();
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < ca.size(); ++i) {
        const double d0 = a.values[i] / ma - b.values[i] / mb;
        const double d1 = a.values[i + 1] / ma - b.values[i + 1] / mb;
        const double c0 = ca[i] - cb[i];
        acc += dx * abs_quadratic_integral(c0, dx * d0, 0.5 * dx * (d1 - d0));
    }
    return acc;
}

double quantile_1d(const GridDensity& m, double s) {
    require(m.grid.dim() == 1, ErrorCode::DimensionMismatch, "quantile of a multi-dimensional density");
    require(s >= 0.0 && s <= 1.0, ErrorCode::InvalidArgument, "quantile level outside [0, 1]");
    return PiecewiseLinear1D(m).quantile(s);
}

double wasserstein_atoms_grid_1d(const EmpiricalMeasure& atoms, const GridDensity& m, int p) {
    check_p(p);
    require(atoms.dim == 1 && m.grid.dim() == 1, ErrorCode::DimensionMismatch,
            "1D routine called on multi-dimensional measures");
    atoms.validate();
    const PiecewiseLinear1D pl(m);
    const SortedAtoms s = sorted_atoms(atoms);
    double cum = 0.0;
    double x_prev = pl.quantile(0.0);
    double acc = 0.0;
    for (std::size_t k = 0; k < s.x.size(); ++k) {
        cum += s.w[k];
        const double x_next = (k + 1 == s.x.size()) ? pl.x_end() : pl.quantile(cum);
        acc += pl.abs_moment(x_prev, x_next, s.x[k], p);
        x_prev = std::max(x_prev, x_next);
    }
    return p == 1 ? acc : std::sqrt(acc);
}

double wasserstein_atoms_1d(const EmpiricalMeasure& a, const EmpiricalMeasure& b, int p) {
    check_p(p);
    require(a.dim == 1 && b.dim == 1, ErrorCode::DimensionMismatch,
            "1D routine called on multi-dimensional measures");
    a.validate();
    b.validate();
    const SortedAtoms sa = sorted_atoms(a);
    const SortedAtoms sb = sorted_atoms(b);
    std::size_t i = 0;
    std::size_t j = 0;
    double ra = sa.w[0];
    double rb = sb.w[0];
    double acc = 0.0;
    while (i < sa.x.size() && j < sb.x.size()) {
        const double f = std::min(ra, rb);
        const double d = std::abs(sa.x[i] - sb.x[j]);
        acc += f * (p == 1 ? d : d * d);
        ra -= f;
        rb -= f;
        if (ra <= rb) {
            if (++i < sa.x.size()) ra += sa.w[i];
        } else {
            if (++j < sb.x.size()) rb += sb.w[j];
        }
    }
    return p == 1 ? acc : std::sqrt(acc);
}

double wasserstein_grid_quantile_1d(const GridDensity& a, const GridDensity& b, int p) {
    check_p(p);
    require(a.grid.dim() == 1 && b.grid.dim() == 1, ErrorCode::DimensionMismatch,
            "1D routine called on multi-dimensional measures");
    const PiecewiseLinear1D pa(a);
    const PiecewiseLinear1D pb(b);
    std::vector<double> cuts = pa.cdf_nodes();
    cuts.insert(cuts.end(), pb.cdf_nodes().begin(), pb.cdf_nodes().end());
    cuts.push_back(0.0);
    cuts.push_back(1.0);
    std::sort(cuts.begin(), cuts.end());
    double acc = 0.0;
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
        const double s0 = std::clamp(cuts[k], 0.0, 1.0);
        const double s1 = std::clamp(cuts[k + 1], 0.0, 1.0);
        if (s1 - s0 <= 1e-15) continue;
        const double half = 0.5 * (s1 - s0);
        const double mid = 0.5 * (s1 + s0);
        for (std::size_t g = 0; g < kGaussNodes.size(); ++g) {
            const double s = mid + half * kGaussNodes[g];
            const double d = std::abs(pa.quantile(s) - pb.quantile(s));
            acc += half * kGaussWeights[g] * (p == 1 ? d : d * d);
        }
    }
    return p == 1 ? acc : std::sqrt(acc);
}

double wasserstein(const Measure& a, const Measure& b, int p, const TransportOptions& opts) {
    check_p(p);
    validate_measure(a);
    validate_measure(b);
    require(dim_of(a) == dim_of(b), ErrorCode::DimensionMismatch,
            "transport between measures of different dimension");
    if (dim_of(a) == 1) {
        const auto* ea = std::get_if<EmpiricalMeasure>(&a);
        const auto* eb = std::get_if<EmpiricalMeasure>(&b);
        const auto* ga = std::get_if<GridDensity>(&a);
        const auto* gb = std::get_if<GridDensity>(&b);
        if (ea && eb) return wasserstein_atoms_1d(*ea, *eb, p);
        if (ea && gb) return wasserstein_atoms_grid_1d(*ea, *gb, p);
        if (ga && eb) return wasserstein_atoms_grid_1d(*eb, *ga, p);
        if (p == 1 && ga->grid.same_as(gb->grid)) return cdf_l1_distance(*ga, *gb);
        return wasserstein_grid_quantile_1d(*ga, *gb, p);
    }
    return cloud_transport(as_cloud(a, opts), as_cloud(b, opts), p);
}

double wasserstein1(const Measure& a, const Measure& b, const TransportOptions& opts) {
    return wasserstein(a, b, 1, opts);
}

double wasserstein2(const Measure& a, const Measure& b, const TransportOptions& opts) {
    return wasserstein(a, b, 2, opts);
}

double moment(const Measure& m, int p) {
    require(p >= 1 && p <= 8, ErrorCode::InvalidArgument, "moment order must be in 1..8");
    validate_measure(m);
    auto norm_p = [p](std::span<const double> x, int dim) {
        double r2 = 0.0;
        for (int k = 0; k < dim; ++k) r2 += x[k] * x[k];
        return std::pow(std::sqrt(r2), p);
    };
    if (const auto* g = std::get_if<GridDensity>(&m)) {
        double acc = 0.0;
        for (std::size_t i = 0; i < g->grid.size(); ++i) {
            const Point x = g->grid.point(i);
            acc += g->grid.weight(i) * g->values[i] * norm_p(x, g->grid.dim());
        }
        return acc / g->mass();
    }
    const auto& e = std::get<EmpiricalMeasure>(m);
    double acc = 0.0;
    double total = 0.0;
    for (std::size_t k = 0; k < e.size(); ++k) {
        acc += e.weight(k) * norm_p(e.point(k), e.dim);
        total += e.weight(k);
    }
    return acc / total;
}

Point mean(const Measure& m) {
    validate_measure(m);
    Point out{0.0, 0.0, 0.0};
    if (const auto* g = std::get_if<GridDensity>(&m)) {
        for (std::size_t i = 0; i < g->grid.size(); ++i) {
            const Point x = g->grid.point(i);
            for (int k = 0; k < g->grid.dim(); ++k)
                out[k] += g->grid.weight(i) * g->values[i] * x[k];
        }
        const double mass = g->mass();
        for (double& v : out) v /= mass;
        return out;
    }
    const auto& e = std::get<EmpiricalMeasure>(m);
    double total = 0.0;
    for (std::size_t k = 0; k < e.size(); ++k) {
        total += e.weight(k);
        for (int d = 0; d < e.dim; ++d) out[d] += e.weight(k) * e.point(k)[d];
    }
    for (double& v : out) v /= total;
    return out;
}

GridDensity density_from_particles(const EmpiricalMeasure& e, const BoxGrid& grid,
                                   double bandwidth) {
    require(bandwidth > 0.0, ErrorCode::InvalidArgument, "bandwidth must be positive");
    require(e.dim == grid.dim(), ErrorCode::DimensionMismatch,
            "particle and grid dimensions differ");
    e.validate();
    Field values(grid.size(), 0.0);
    const double inv2h2 = 1.0 / (2.0 * bandwidth * bandwidth);
    const double cutoff = 8.0 * bandwidth;
    for (std::size_t k = 0; k < e.size(); ++k) {
        const auto x = e.point(k);
        const double w = e.weight(k);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const Point y = grid.point(i);
            double r2 = 0.0;
            bool far = false;
            for (int d = 0; d < e.dim; ++d) {
                const double diff = y[d] - x[d];
                if (std::abs(diff) > cutoff) {
                    far = true;
                    break;
                }
                r2 += diff * diff;
            }
            if (!far) values[i] += w * std::exp(-r2 * inv2h2);
        }
    }
    // A kernel narrower than the node spacing can fall between nodes; put the
    // mass on the nearest node instead of failing.
    if (grid.integrate(values) <= 0.0) return deposit_particles(e, grid);
    return GridDensity::normalized(grid, std::move(values));
}

GridDensity deposit_particles(const EmpiricalMeasure& e, const BoxGrid& grid) {
    require(e.dim == grid.dim(), ErrorCode::DimensionMismatch,
            "particle and grid dimensions differ");
    e.validate();
    Field values(grid.size(), 0.0);
    const int dim = grid.dim();
    for (std::size_t k = 0; k < e.size(); ++k) {
        const auto x = e.point(k);
        std::array<int, kMaxDim> base{0, 0, 0};
        std::array<double, kMaxDim> frac{0.0, 0.0, 0.0};
        for (int d = 0; d < dim; ++d) {
            const double s = std::clamp((x[d] + grid.half_width()) / grid.dx(), 0.0,
                                        double(grid.nx() - 1));
            const int i = std::min(static_cast<int>(s), grid.nx() - 2);
            base[d] = i;
            frac[d] = s - i;
        }
        for (int c = 0; c < (1 << dim); ++c) {
            double w = e.weight(k);
            std::array<int, kMaxDim> mi = base;
            for (int d = 0; d < dim; ++d) {
                const int bit = (c >> d) & 1;
                w *= bit ? frac[d] : 1.0 - frac[d];
                mi[d] += bit;
            }
            if (w == 0.0) continue;
            const std::size_t idx = grid.flat_index(mi);
            values[idx] += w / grid.weight(idx);
        }
    }
    return GridDensity::normalized(grid, std::move(values));
}

EmpiricalMeasure to_point_cloud(const GridDensity& m) {
    const BoxGrid& g = m.grid;
    const int dim = g.dim();
    const int cells = g.nx() - 1;
    std::size_t total = 1;
    for (int k = 0; k < dim; ++k) total *= static_cast<std::size_t>(cells);
    EmpiricalMeasure out;
    out.dim = dim;
    out.points.reserve(total * dim);
    out.weights.reserve(total);
    const double vol = std::pow(g.dx(), dim);
    for (std::size_t c = 0; c < total; ++c) {
        std::array<int, kMaxDim> ci{0, 0, 0};
        std::size_t rem = c;
        for (int k = 0; k < dim; ++k) {
            ci[k] = static_cast<int>(rem % cells);
            rem /= cells;
        }
        double avg = 0.0;
        for (int corner = 0; corner < (1 << dim); ++corner) {
            std::array<int, kMaxDim> mi = ci;
            for (int k = 0; k < dim; ++k) mi[k] += (corner >> k) & 1;
            avg += m.values[g.flat_index(mi)];
        }
        avg /= static_cast<double>(1 << dim);
        for (int k = 0; k < dim; ++k) out.points.push_back(g.coord(ci[k]) + 0.5 * g.dx());
        out.weights.push_back(std::max(0.0, avg * vol));
    }
    return out;
}

double boundary_mass(const GridDensity& m, double layer) {
    const BoxGrid& g = m.grid;
    double acc = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const Point x = g.point(i);
        double dist = INFINITY;
        for (int k = 0; k < g.dim(); ++k)
            dist = std::min(dist, g.half_width() - std::abs(x[k]));
        if (dist <= layer) acc += g.weight(i) * m.values[i];
    }
    return acc / m.mass();
}

}  // namespace mfc
