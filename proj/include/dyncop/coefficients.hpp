#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace dyncop {

/// Named built-in coefficient with its parameters. `other` is the index of a
/// second state component for the coupled (not individually Markov) built-ins.
struct CoefficientSpec {
    std::string name;
    std::vector<double> params;
    int other = -1;

    bool operator==(const CoefficientSpec&) const = default;
};

enum class CoefficientRole { drift, diffusion };

/// Scalar coefficient x -> mu_i(x) or x -> sigma_i(x) of one component.
class Coefficient {
public:
    using Fn = std::function<double(std::span<const double>)>;

    /// Wraps a callable. `d_own` is the analytic derivative with respect to
    /// the component's own coordinate (optional). `own_only` declares that the
    /// value depends on x[component] alone.
    Coefficient(int component, Fn value, Fn d_own = {}, bool own_only = false,
                CoefficientSpec spec = {"custom", {}, -1});

    /// Built-ins. Drift: zero, constant(c), linear(a,b) = a + b x_i,
    /// ou(theta,m) = theta (m - x_i), gbm(mu) = mu x_i, quadratic(a) = a x_i^2,
    /// coupled_linear(a,b,c) = a + b x_i + c x_other.
    /// Diffusion: zero, constant(s), linear(a,b), gbm(s) = s |x_i|,
    /// tanh_modulated(s,c) = s (1 + c tanh x_i),
    /// coupled_tanh(s,c) = s (1 + c tanh x_other).
    static Coefficient from_spec(CoefficientRole role, int component, const CoefficientSpec& spec);

    int component() const noexcept { return component_; }
    double operator()(std::span<const double> x) const { return value_(x); }
    /// d/dx_i, analytic when provided, else a central difference.
    double d_own(std::span<const double> x) const;
    bool own_only() const noexcept { return own_only_; }
    const CoefficientSpec& spec() const noexcept { return spec_; }

private:
    int component_;
    Fn value_;
    Fn d_own_;
    bool own_only_;
    CoefficientSpec spec_;
};

/// Pairwise correlation field rho_ij(x_i, x_j) with rho_ii = 1.
class CorrelationField {
public:
    using Fn = std::function<double(int, int, double, double)>;

    static CorrelationField independent();
    /// Every off-diagonal entry equal to r.
    static CorrelationField constant(double r);
    /// Constant matrix given by its strict upper triangle, row-major
    /// (r12, r13, ..., r23, ...).
    static CorrelationField matrix(int dim, std::vector<double> upper);
    /// rho_ij = scale * tanh(x_i x_j).
    static CorrelationField tanh_product(double scale);
    static CorrelationField custom(Fn fn, bool constant = false);

    double operator()(int i, int j, double xi, double xj) const;
    bool is_constant() const noexcept { return constant_; }
    const CoefficientSpec& spec() const noexcept { return spec_; }

private:
    CorrelationField(Fn fn, bool constant, CoefficientSpec spec)
        : fn_(std::move(fn)), constant_(constant), spec_(std::move(spec)) {}

    Fn fn_;
    bool constant_;
    CoefficientSpec spec_;
};

CorrelationField correlation_from_spec(int dim, const CoefficientSpec& spec);

}  // namespace dyncop
