#pragma once

#include <span>
#include <variant>
#include <vector>

#include "dyncop/copula_core.hpp"

namespace dyncop {

/// A bivariate copula C_{st} linking the law of a process at time s to its
/// law at time t.
class BivariateCopulaFn {
public:
    BivariateCopulaFn(ParametricCopula c, double s, double t);
    BivariateCopulaFn(CopulaGrid g, double s, double t);

    double from_time() const noexcept { return s_; }
    double to_time() const noexcept { return t_; }
    bool parametric() const noexcept { return std::holds_alternative<ParametricCopula>(src_); }
    const std::variant<ParametricCopula, CopulaGrid>& source() const noexcept { return src_; }

    double value(double u1, double u2) const;
    /// dC/du_axis. Analytic for parametric families; grids use central
    /// differences with the lattice spacing (second-order one-sided at the
    /// faces).
    double partial(double u1, double u2, int axis) const;

private:
    std::variant<ParametricCopula, CopulaGrid> src_;
    double s_;
    double t_;
};

struct ProductOptions {
    int quad_points = 512;
    int resolution = 101;  ///< output lattice when both inputs are parametric
    AxiomTolerances input_tolerance{1e-12, 1e-6, 1e-6, 1e-6};
    int threads = 1;
};

/// (C_a * C_b)(x, y) = int_0^1 dC_a(x,z)/dz dC_b(z,y)/dz dz on a lattice.
///
/// The z-nodes are a uniform grid of quad_points merged with the output
/// lattice abscissae. On each node interval both partials are the exact
/// difference quotients of the input copulas (the interval-midpoint central
/// difference), so the quadrature telescopes: boundary values are reproduced
/// exactly, Pi annihilates and M is the identity up to rounding.
CopulaGrid copula_product(const BivariateCopulaFn& ca, const BivariateCopulaFn& cb,
                          const ProductOptions& opt = {});

struct TransitionOptions {
    double density_floor = 1e-12;
};

/// F(t_i, x_i | t_j, x_j) = dC/du_2 (F_{t_i}(x_i), F_{t_j}(x_j)), clamped to [0,1].
double transition_from_copula(const BivariateCopulaFn& c, const MarginalState& m_ti,
                              const MarginalState& m_tj, double x_i, double x_j,
                              const TransitionOptions& opt = {});

/// sup over the lattice of |(C_su * C_ut) - C_st|.
double chapman_kolmogorov_residual(const BivariateCopulaFn& c_su, const BivariateCopulaFn& c_ut,
                                   const BivariateCopulaFn& c_st, const ProductOptions& opt = {});

/// prod_{i>=2} C_{t_{i-1},t_i}(F_{t_{i-1}}(x_{i-1}), F_{t_i}(x_i)) / prod_{i=2}^{n-1} F_{t_i}(x_i)
double markov_joint(std::span<const BivariateCopulaFn> copulas,
                    std::span<const MarginalState> margins, std::span<const double> x);

}  // namespace dyncop
