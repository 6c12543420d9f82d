#include "mfc/grid.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mfc/error.hpp"

namespace mfc {

const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument: return "invalid_argument";
        case ErrorCode::DimensionMismatch: return "dimension_mismatch";
        case ErrorCode::EmptyMeasure: return "empty_measure";
        case ErrorCode::MassLeak: return "mass_leak";
        case ErrorCode::NegativeDensity: return "negative_density";
        case ErrorCode::BlowUp: return "blow_up";
        case ErrorCode::NotConverged: return "not_converged";
        case ErrorCode::Inadmissible: return "inadmissible";
        case ErrorCode::MemoryBudget: return "memory_budget";
        case ErrorCode::MissingDerivative: return "missing_derivative";
        case ErrorCode::OutOfDomain: return "out_of_domain";
        case ErrorCode::Config: return "config";
        case ErrorCode::UnknownDescriptor: return "unknown_descriptor";
    }
    return "unknown";
}

BoxGrid::BoxGrid(int dim, double half_width, int nx)
    : dim_(dim), half_width_(half_width), nx_(nx) {
    require(dim >= 1 && dim <= kMaxDim, ErrorCode::InvalidArgument,
            "grid dimension must be in 1..3");
    require(half_width > 0.0 && std::isfinite(half_width), ErrorCode::InvalidArgument,
            "box half-width must be positive");
    require(nx >= 2, ErrorCode::InvalidArgument, "need at least two nodes per axis");
    dx_ = 2.0 * half_width / (nx - 1);
    size_ = 1;
    for (int k = 0; k < dim; ++k) {
        strides_[k] = size_;
        size_ *= static_cast<std::size_t>(nx);
    }
    for (int k = dim; k < kMaxDim; ++k) strides_[k] = size_;

    weights_.resize(size_);
    const double cell = std::pow(dx_, dim);
    for (std::size_t idx = 0; idx < size_; ++idx) {
        const auto mi = multi_index(idx);
        double w = cell;
        for (int k = 0; k < dim; ++k) w *= axis_weight(mi[k]);
        weights_[idx] = w;
    }
}

std::array<int, kMaxDim> BoxGrid::multi_index(std::size_t idx) const {
    std::array<int, kMaxDim> mi{0, 0, 0};
    for (int k = 0; k < dim_; ++k) {
        mi[k] = static_cast<int>(idx % nx_);
        idx /= nx_;
    }
    return mi;
}

std::size_t BoxGrid::flat_index(const std::array<int, kMaxDim>& mi) const {
    std::size_t idx = 0;
    for (int k = 0; k < dim_; ++k) idx += strides_[k] * static_cast<std::size_t>(mi[k]);
    return idx;
}

Point BoxGrid::point(std::size_t idx) const {
    const auto mi = multi_index(idx);
    Point p{0.0, 0.0, 0.0};
    for (int k = 0; k < dim_; ++k) p[k] = coord(mi[k]);
    return p;
}

double BoxGrid::weight(std::size_t idx) const { return weights_[idx]; }

double BoxGrid::dot(std::span<const double> a, std::span<const double> b) const {
    double s = 0.0;
    for (std::size_t i = 0; i < size_; ++i) s += weights_[i] * a[i] * b[i];
    return s;
}

double BoxGrid::integrate(std::span<const double> a) const {
    double s = 0.0;
    for (std::size_t i = 0; i < size_; ++i) s += weights_[i] * a[i];
    return s;
}

bool BoxGrid::contains(std::span<const double> x) const {
    for (int k = 0; k < dim_; ++k)
        if (!(x[k] >= -half_width_ && x[k] <= half_width_)) return false;
    return true;
}

double BoxGrid::interpolate(std::span<const double> values, std::span<const double> x) const {
    std::array<int, kMaxDim> base{0, 0, 0};
    std::array<double, kMaxDim> frac{0.0, 0.0, 0.0};
    for (int k = 0; k < dim_; ++k) {
        const double s = std::clamp((x[k] + half_width_) / dx_, 0.0, double(nx_ - 1));
        int i = std::min(static_cast<int>(s), nx_ - 2);
        base[k] = i;
        frac[k] = s - i;
    }
    double acc = 0.0;
    const int corners = 1 << dim_;
    for (int c = 0; c < corners; ++c) {
        double w = 1.0;
        std::size_t idx = 0;
        for (int k = 0; k < dim_; ++k) {
            const int bit = (c >> k) & 1;
            w *= bit ? frac[k] : 1.0 - frac[k];
            idx += strides_[k] * static_cast<std::size_t>(base[k] + bit);
        }
        if (w != 0.0) acc += w * values[idx];
    }
    return acc;
}

SpaceTimeGrid::SpaceTimeGrid(BoxGrid space, double t0, double T, int nt)
    : space_(std::move(space)), t0_(t0), T_(T), nt_(nt), dt_((T - t0) / nt) {}

SpaceTimeGrid SpaceTimeGrid::make(int dim, double half_width, int nx, double t0, double T,
                                  int nt) {
    require(dim == 1 || dim == 2, ErrorCode::InvalidArgument,
            "space-time grids are 1D or 2D, got dim=" + std::to_string(dim));
    require(nx >= 8, ErrorCode::InvalidArgument, "nx must be at least 8");
    require(nt >= 8, ErrorCode::InvalidArgument, "nt must be at least 8");
    require(half_width > 0.0, ErrorCode::InvalidArgument, "box half-width must be positive");
    require(t0 >= 0.0 && t0 < T, ErrorCode::InvalidArgument, "need 0 <= t0 < T");
    return SpaceTimeGrid(BoxGrid(dim, half_width, nx), t0, T, nt);
}

SpaceTimeGrid SpaceTimeGrid::product(BoxGrid space, double t0, double T, int nt) {
    require(nt >= 1 && t0 < T, ErrorCode::InvalidArgument, "invalid product time mesh");
    return SpaceTimeGrid(std::move(space), t0, T, nt);
}

SpaceTimeGrid SpaceTimeGrid::tail(int n) const {
    require(n >= 0 && n < nt_, ErrorCode::InvalidArgument, "tail index outside the time mesh");
    SpaceTimeGrid g = *this;
    g.t0_ = time(n);
    g.nt_ = nt_ - n;
    return g;
}

SpaceTimeGrid SpaceTimeGrid::with_start(double t0, int nt) const {
    require(t0 >= 0.0 && t0 < T_ && nt >= 1, ErrorCode::InvalidArgument,
            "invalid restart time");
    return SpaceTimeGrid(space_, t0, T_, nt);
}

}  // namespace mfc
