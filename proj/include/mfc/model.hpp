#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mfc/grid.hpp"
#include "mfc/measures.hpp"

namespace mfc {

/// One-dimensional Hamiltonian h(y, q) applied on every axis of a separable H.
class AxisHamiltonian {
public:
    virtual ~AxisHamiltonian() = default;
    virtual double value(double y, double q) const = 0;
    virtual double dp(double y, double q) const = 0;
    virtual double dpp(double y, double q) const = 0;
    /// argmin_q h(y, q).
    virtual double argmin(double y) const = 0;
};

/// Axis-separable Hamiltonian H(x,p) = sum_k h(x_k, p_k) with
///   h(y, q) = q^2 + lambda (sqrt(1 + q^2) - 1) + V(y) q.
/// lambda = 0 gives the quadratic family with closed-form Legendre transform.
class Hamiltonian : public AxisHamiltonian {
public:
    enum class Drift { None, Constant, Tanh, Linear };

    struct Params {
        double lambda = 0.0;
        Drift drift = Drift::None;
        double amplitude = 0.0;
    };

    Hamiltonian() = default;
    explicit Hamiltonian(Params p);

    /// Parses "quadratic", "quadratic-plus-drift", "soft-quadratic".
    static Hamiltonian from_descriptor(const std::string& name, double lambda,
                                       const std::string& drift_kind, double amplitude);

    std::string descriptor() const;
    const Params& params() const { return p_; }

    double drift(double y) const;
    double drift_dy(double y) const;

    double value(double y, double q) const override;
    double dp(double y, double q) const override;
    double dpp(double y, double q) const override;
    double dx(double y, double q) const;
    double argmin(double y) const override;
    /// Per-axis Legendre transform l(y, a) = sup_q (-a q - h(y, q)).
    double legendre(double y, double a) const;
    /// Maximizer q* of the Legendre problem, i.e. h_p(y, q*) = -a.
    double legendre_argmax(double y, double a) const;

    bool analytic_legendre() const { return p_.lambda == 0.0; }

    // Full-vector forms on the first dim coordinates.
    double value(const Point& x, const Point& p, int dim) const;
    Point grad_p(const Point& x, const Point& p, int dim) const;
    Point grad_x(const Point& x, const Point& p, int dim) const;
    /// Diagonal of the (diagonal) Hessian in p.
    Point hess_p(const Point& x, const Point& p, int dim) const;

private:
    Params p_;
};

/// Axis function h_N(y, q) = h(y, N q) / N used by the N-particle equation.
class ScaledHamiltonian : public AxisHamiltonian {
public:
    ScaledHamiltonian(const Hamiltonian& base, double n) : base_(&base), n_(n) {}

    double value(double y, double q) const override { return base_->value(y, n_ * q) / n_; }
    double dp(double y, double q) const override { return base_->dp(y, n_ * q); }
    double dpp(double y, double q) const override { return n_ * base_->dpp(y, n_ * q); }
    double argmin(double y) const override { return base_->argmin(y) / n_; }

private:
    const Hamiltonian* base_;
    double n_;
};

/// L(x, a) = sup_p (-a.p - H(x, p)); analytic for lambda = 0, otherwise
/// damped Newton with multistart (per axis, 100 iterations at most).
double legendre(const Hamiltonian& h, const Point& x, const Point& a, int dim);

/// D_a L(x, a) = -p*(a).
Point legendre_gradient(const Hamiltonian& h, const Point& x, const Point& a, int dim);

/// Diagonal of L_aa(x, a) = H_pp(x, p*)^{-1}.
Point legendre_hessian(const Hamiltonian& h, const Point& x, const Point& a, int dim);

struct DualityReport {
    double alpha_norm = 0.0;
    /// |H - H_p.p + L(x, alpha)| with alpha = -H_p(x, p).
    double value_residual = 0.0;
    /// |D_a L(x, alpha) + p|, D_a L by central differences.
    double gradient_residual = 0.0;
    bool ok() const { return value_residual <= 1e-7 && gradient_residual <= 1e-7; }
};

DualityReport duality_identities(const Hamiltonian& h, const Point& x, const Point& p, int dim);

struct HamiltonianCheck {
    double c_low = 0.0;   // min sampled eigenvalue of h_pp
    double c_high = 0.0;  // max sampled eigenvalue of h_pp
    double growth_c = 0.0;  // smallest C with -C + |p|^2/C <= H <= C(1+|p|^2) on samples
    double derivative_error = 0.0;  // max relative FD mismatch of h_p, h_x, h_pp
    bool ok = false;
};

/// Sampled convexity, growth and derivative checks on a 20 x 20 (y, q) sample
/// with |y| <= half_width and |q| <= p_max.
HamiltonianCheck check_hamiltonian(const Hamiltonian& h, double half_width, double p_max = 10.0);

/// Test function phi(x) used inside cylindrical couplings.
struct Feature {
    enum class Kind { Coordinate, SquaredNorm, Cosine, Bump };
    Kind kind = Kind::Coordinate;
    int axis = 0;        // Coordinate, Cosine
    double omega = 1.0;  // Cosine frequency
    Point center{0.0, 0.0, 0.0};  // Bump centre
    double width = 1.0;           // Bump width

    double operator()(const Point& x, int dim) const;
    std::string describe() const;
};

/// Outer function Phi(s_1..s_k) of a cylindrical coupling.
struct Outer {
    enum class Kind { Zero, Linear, Quadratic, DoubleWell };
    Kind kind = Kind::Zero;
    std::vector<double> coef;  // Linear: weights; Quadratic: kappa per feature
    double a = 0.5;            // DoubleWell: A (s^2 - b^2)^2
    double b = 1.0;

    double value(std::span<const double> s) const;
    std::vector<double> gradient(std::span<const double> s) const;
    /// Row-major k x k Hessian.
    std::vector<double> hessian(std::span<const double> s) const;
    std::string describe() const;
};

/// Cylindrical functional C(m) = Phi(<phi_1, m>, ..., <phi_k, m>) with exact
/// first and second flat derivatives.
class Coupling {
public:
    Coupling() = default;
    Coupling(std::vector<Feature> features, Outer outer);

    static Coupling zero();
    static Coupling linear(Feature f, double c);

    std::size_t features() const { return features_.size(); }
    const std::vector<Feature>& feature_list() const { return features_; }
    const Outer& outer() const { return outer_; }
    bool is_zero() const { return outer_.kind == Outer::Kind::Zero || features_.empty(); }
    bool is_linear() const { return is_zero() || outer_.kind == Outer::Kind::Linear; }
    bool has_second_derivative() const { return true; }

    /// Nodal values of every feature on the grid: result[j][i] = phi_j(x_i).
    std::vector<Field> feature_fields(const BoxGrid& grid) const;
    std::vector<double> moments(const BoxGrid& grid, std::span<const double> m) const;
    std::vector<double> moments(const EmpiricalMeasure& e) const;

    double value(const BoxGrid& grid, std::span<const double> m) const;
    double value_from_moments(std::span<const double> s) const { return outer_.value(s); }
    double value(const EmpiricalMeasure& e) const;

    /// Flat derivative x -> sum_j dPhi_j(s) phi_j(x) at the nodes.
    Field flat_derivative(const BoxGrid& grid, std::span<const double> m) const;
    double flat_derivative_at(const Point& x, int dim, std::span<const double> s) const;

    /// <d^2C/dm^2(m), rho (x) rho> = sum_jk d2Phi_jk <phi_j,rho><phi_k,rho>.
    double second_variation(const BoxGrid& grid, std::span<const double> m,
                            std::span<const double> rho) const;

    std::string describe() const;

private:
    std::vector<Feature> features_;
    Outer outer_;
};

struct CouplingCheck {
    double error_coarse = 0.0;  // at s = 1e-2
    double error_fine = 0.0;    // at s = 1e-3
    double richardson_error = 0.0;
    bool ok = false;
};

/// Directional-difference check of the flat derivative between two densities.
CouplingCheck check_coupling(const Coupling& c, const GridDensity& m, const GridDensity& m_prime);

/// Initial measure family: isotropic Gaussian restricted to the box.
struct InitialMeasure {
    Point mean{0.0, 0.0, 0.0};
    double sd = 0.5;

    GridDensity on(const BoxGrid& grid) const;
};

struct ProblemSpec {
    std::string name;
    Hamiltonian hamiltonian;
    Coupling running;
    Coupling terminal;
    double horizon = 1.0;
    SpaceTimeGrid grid;
    InitialMeasure initial;
    /// Upper bound on |alpha| accepted by the solvers.
    double drift_limit = 50.0;
};

struct SpecCheck {
    HamiltonianCheck hamiltonian;
    CouplingCheck running;
    CouplingCheck terminal;
    bool ok() const { return hamiltonian.ok && running.ok && terminal.ok; }
};

/// Runs every sampled assumption check; throws InvalidArgument on failure.
SpecCheck validate_spec(const ProblemSpec& spec);

struct BuiltinOptions {
    int dim = 1;
    double half_width = 8.0;
    int nx = 161;
    int nt = 64;
    double horizon = 1.0;
};

/// Builtin problems: "quadratic-free", "drifted", "two-well", "two-well-offset".
std::vector<ProblemSpec> builtin_library(const BuiltinOptions& opts = {});
ProblemSpec builtin(const std::string& name, const BuiltinOptions& opts = {});
std::vector<std::string> builtin_names();

}  // namespace mfc
