#pragma once

#include <span>
#include <utility>
#include <vector>

#include "dyncop/copula_core.hpp"
#include "dyncop/sde_engine.hpp"

namespace dyncop {

enum class AnalyticTag { none, brownian, gbm, ou };

const char* to_string(AnalyticTag tag) noexcept;

/// One-dimensional restriction of an SdeSystem to component i. Components
/// other than i are frozen at `freeze_state` when evaluating coefficients.
struct MarginalModel {
    int component = 0;
    Coefficient drift = Coefficient::from_spec(CoefficientRole::drift, 0, {"zero", {}, -1});
    Coefficient diffusion = Coefficient::from_spec(CoefficientRole::diffusion, 0, {"zero", {}, -1});
    std::vector<double> freeze_state;  ///< full state; entry `component` is ignored
    double x0 = 0.0;
    AnalyticTag tag = AnalyticTag::none;
    // Closed-form parameters: brownian N(x0 + a t, s^2 t); ou theta (m - x), s;
    // gbm drift a x, diffusion s x.
    double a = 0.0, s = 0.0, theta = 0.0, mean = 0.0;
    bool frozen = false;  ///< coefficients depend on frozen components

    double mu(double x) const;
    double sigma(double x) const;
    /// d/dx of sigma^2 / 2 at x.
    double d_half_var(double x) const;
};

/// Restriction of `sys` to component i. `freeze` defaults to x0. With
/// `allow_analytic` the closed-form tag is derived from the coefficient specs
/// and verified on probe points.
MarginalModel make_marginal_model(const SdeSystem& sys, int component, std::vector<double> freeze = {},
                                  bool allow_analytic = true);

/// Closed-form marginal at t > 0 for a tagged model.
MarginalState analytic_marginal(const MarginalModel& m, double t, std::vector<double> x_grid);

/// Uniform grid centred on the expected location of component i at t_end,
/// spanning `span` standard deviations each side.
std::vector<double> default_x_grid(const MarginalModel& m, double t_end, int points = 2001, double span = 8.0);

/// Short-time Gaussian N(x0 + mu(x0) t0, sigma(x0)^2 t0) with its standard
/// deviation floored at two grid spacings.
MarginalState initial_marginal(const MarginalModel& m, double t0, std::vector<double> x_grid);

struct KfeOptions {
    bool use_analytic = true;
    double cfl = 0.4;               ///< dt <= cfl dx^2 / max sigma^2
    double mass_tolerance = 1e-4;   ///< per-step drift before renormalization
};

struct KfeDiagnostics {
    int steps = 0;
    double dt = 0.0;
    double max_mass_drift = 0.0;
    double max_clip = 0.0;
};

/// Smallest step count satisfying the explicit stability bound over [t0, t1].
int required_kfe_steps(const MarginalModel& m, double t0, double t1, std::span<const double> x_grid,
                       double cfl = 0.4);

/// Advances `state` to t1 in `steps` explicit steps (0 picks the minimum
/// stable count). Tagged models return the closed form when use_analytic.
MarginalState advance_marginal(const MarginalModel& m, const MarginalState& state, double t1, int steps,
                               const KfeOptions& options = {}, KfeDiagnostics* diag = nullptr);

/// Marginal law at t1 started from the short-time Gaussian at t0.
MarginalState solve_marginal_kfe(const MarginalModel& m, double t0, double t1, std::vector<double> x_grid,
                                 int steps, const KfeOptions& options = {}, KfeDiagnostics* diag = nullptr);

struct JointKfeOptions {
    int points = 101;   ///< nodes per axis
    double span = 6.0;  ///< standard deviations each side of the frozen-model grid
    double cfl = 0.2;
};

/// Exact-marginalization cross-check for n = 2: solves the joint forward
/// equation on a coarse tensor grid from the short-time bivariate Gaussian at
/// t0 and integrates out the other component. Unlike the frozen marginal
/// model it accounts for coupled coefficients.
MarginalState marginal_from_joint_kfe(const SdeSystem& sys, int component, double t0, double t1,
                                      const JointKfeOptions& options = {});

struct OperatorField {
    std::vector<double> x;
    std::vector<double> values;
    double time_stamp = 0.0;
};

/// Conservative discrete -d/dx[mu f] + d^2/dx^2[sigma^2 f / 2] with zero
/// values outside the grid.
OperatorField apply_A_star(std::span<const double> x_grid, std::span<const double> f,
                           const MarginalModel& m, double time_stamp = 0.0);

struct CdfDerivatives {
    std::vector<double> first, second;
};

/// dF/dx and d^2F/dx^2 at the nodes by three-point differences (one-sided at
/// the ends).
CdfDerivatives cdf_derivatives(const MarginalState& F);
/// The same two derivatives at node k alone (structure not validated).
std::pair<double, double> cdf_derivatives_at(const MarginalState& F, std::size_t k);

/// B F = [d/dx(sigma^2/2) - mu] dF/dx + sigma^2/2 d^2F/dx^2 with central
/// differences for the derivatives of F.
OperatorField apply_B_operator(const MarginalState& F, const MarginalModel& m);

}  // namespace dyncop
