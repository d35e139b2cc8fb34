#pragma once

#include <span>

namespace dyncop::normal {

double pdf(double x) noexcept;
double cdf(double x) noexcept;
/// Inverse of the standard normal CDF; returns +-infinity at 0 and 1.
double quantile(double p) noexcept;

/// P(Z1 <= a, Z2 <= b) for standard normals with correlation rho.
double bivariate_cdf(double a, double b, double rho);

/// P(Z <= a) for a standard trivariate normal with correlations
/// (r12, r13, r23). The matrix must be positive semidefinite.
double trivariate_cdf(double a1, double a2, double a3, double r12, double r13, double r23);

}  // namespace dyncop::normal
