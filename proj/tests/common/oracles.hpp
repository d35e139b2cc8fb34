#pragma once

// Reference computations for tests, written without the library's numerics.

#include <cmath>
#include <functional>
#include <numbers>

namespace oracle {

inline double phi(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

inline double Phi(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// Quantile by bisection on Phi.
inline double Phi_inv(double p) {
    double lo = -40.0, hi = 40.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (Phi(mid) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// Composite Simpson on [a, b] with n (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n = 4000) {
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int k = 1; k < n; ++k) s += (k % 2 ? 4.0 : 2.0) * f(a + k * h);
    return s * h / 3.0;
}

// P(Z1 <= a, Z2 <= b), correlation r, |r| < 1: int phi(z) Phi((b - r z)/sqrt(1-r^2)) dz.
inline double bvn(double a, double b, double r) {
    if (a < -12 || b < -12) return 0.0;
    const double s = std::sqrt(1.0 - r * r);
    return simpson([&](double z) { return phi(z) * Phi((b - r * z) / s); }, -12.0, std::min(a, 12.0), 20000);
}

// Gaussian copula with correlation r at (u, v).
inline double gaussian_copula(double u, double v, double r) {
    if (u <= 0.0 || v <= 0.0) return 0.0;
    if (u >= 1.0) return v;
    if (v >= 1.0) return u;
    return bvn(Phi_inv(u), Phi_inv(v), r);
}

// Trivariate P(Z <= a) by Simpson over z1 of the conditional bivariate law.
inline double tvn(double a1, double a2, double a3, double r12, double r13, double r23) {
    const double s2 = std::sqrt(1 - r12 * r12), s3 = std::sqrt(1 - r13 * r13);
    const double rc = (r23 - r12 * r13) / (s2 * s3);
    return simpson([&](double z) { return phi(z) * bvn((a2 - r12 * z) / s2, (a3 - r13 * z) / s3, rc); }, -10.0,
                   std::min(a1, 10.0), 400);
}

}  // namespace oracle
