#include "dyncop/normal.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>

#include "dyncop/quadrature.hpp"

namespace dyncop::normal {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kInvSqrt2Pi = 0.398942280401432677939946059934;

// Acklam's rational approximation, refined below.
double quantile_seed(double p) {
    static constexpr std::array<double, 6> a = {-3.969683028665376e+01, 2.209460984245205e+02,
                                                -2.759285104469687e+02, 1.383577518672690e+02,
                                                -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr std::array<double, 5> b = {-5.447609879822406e+01, 1.615858368580409e+02,
                                                -1.556989798598866e+02, 6.680131188771972e+01,
                                                -1.328068155288572e+01};
    static constexpr std::array<double, 6> c = {-7.784894002430293e-03, -3.223964580411365e-01,
                                                -2.400758277161838e+00, -2.549732539343734e+00,
                                                4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr std::array<double, 4> d = {7.784695709041462e-03, 3.224671290700398e-01,
                                                2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double plow = 0.02425;
    if (p < plow) {
        const double q = std::sqrt(-2 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    }
    if (p > 1 - plow) {
        const double q = std::sqrt(-2 * std::log1p(-p));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    }
    const double q = p - 0.5;
    const double r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
}

}  // namespace

double pdf(double x) noexcept { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double cdf(double x) noexcept { return 0.5 * std::erfc(-x * std::numbers::sqrt2 * 0.5); }

double quantile(double p) noexcept {
    if (std::isnan(p) || p < 0.0 || p > 1.0) return std::numeric_limits<double>::quiet_NaN();
    if (p == 0.0) return -kInf;
    if (p == 1.0) return kInf;
    double x = quantile_seed(p);
    // Halley refinement against the erfc-based CDF. The residual is taken on
    // the smaller tail so that precision is kept for p close to 1.
    for (int it = 0; it < 2; ++it) {
        const double e = (p < 0.5) ? cdf(x) - p : (1.0 - p) - cdf(-x);
        const double u = e / pdf(x);
        x -= u / (1.0 + 0.5 * x * u);
    }
    return x;
}

double bivariate_cdf(double a, double b, double rho) {
    if (std::isnan(a) || std::isnan(b) || std::isnan(rho))
        return std::numeric_limits<double>::quiet_NaN();
    if (a == -kInf || b == -kInf) return 0.0;
    if (a == kInf) return cdf(b);
    if (b == kInf) return cdf(a);
    const double pa = cdf(a);
    const double pb = cdf(b);
    const double lower = std::max(0.0, pa + pb - 1.0);
    const double upper = std::min(pa, pb);
    if (rho >= 1.0) return upper;
    if (rho <= -1.0) return lower;
    if (rho == 0.0) return pa * pb;

    const double s = std::sqrt((1.0 - rho) * (1.0 + rho));
    auto integrand = [&](double z) { return pdf(z) * cdf((b - rho * z) / s); };
    const double knot = b / rho;
    const std::array<double, 1> breaks{knot};
    double value;
    if (a <= 0.0) {
        value = quad::integrate(integrand, std::min(-10.0, a - 8.0), a, 1e-15, breaks);
    } else {
        value = pb - quad::integrate(integrand, a, std::max(10.0, a + 8.0), 1e-15, breaks);
    }
    return std::clamp(value, lower, upper);
}

double trivariate_cdf(double a1, double a2, double a3, double r12, double r13, double r23) {
    std::array<double, 3> lim{a1, a2, a3};
    for (double v : lim)
        if (v == -kInf) return 0.0;
    if (a1 == kInf) return bivariate_cdf(a2, a3, r23);
    if (a2 == kInf) return bivariate_cdf(a1, a3, r13);
    if (a3 == kInf) return bivariate_cdf(a1, a2, r12);

    // Condition on the variable least correlated with the other two so the
    // conditional variances stay away from zero whenever possible.
    std::array<std::array<double, 3>, 3> r{{{1.0, r12, r13}, {r12, 1.0, r23}, {r13, r23, 1.0}}};
    int pivot = 0;
    double best = 2.0;
    for (int k = 0; k < 3; ++k) {
        double worst = 0.0;
        for (int j = 0; j < 3; ++j)
            if (j != k) worst = std::max(worst, std::abs(r[k][j]));
        if (worst < best) {
            best = worst;
            pivot = k;
        }
    }
    const int p = (pivot + 1) % 3;
    const int q = (pivot + 2) % 3;
    const double a = lim[pivot], bp = lim[p], bq = lim[q];
    const double rp = r[pivot][p], rq = r[pivot][q], rpq = r[p][q];
    const double sp = std::sqrt(std::max(0.0, 1.0 - rp * rp));
    const double sq = std::sqrt(std::max(0.0, 1.0 - rq * rq));
    constexpr double tiny = 1e-12;

    auto conditional = [&](double z) {
        const double mp = bp - rp * z;
        const double mq = bq - rq * z;
        if (sp < tiny && sq < tiny) return (mp >= 0.0 && mq >= 0.0) ? 1.0 : 0.0;
        if (sp < tiny) return mp >= 0.0 ? cdf(mq / sq) : 0.0;
        if (sq < tiny) return mq >= 0.0 ? cdf(mp / sp) : 0.0;
        const double rc = std::clamp((rpq - rp * rq) / (sp * sq), -1.0, 1.0);
        return bivariate_cdf(mp / sp, mq / sq, rc);
    };
    auto integrand = [&](double z) { return pdf(z) * conditional(z); };
    std::vector<double> breaks;
    if (rp != 0.0) breaks.push_back(bp / rp);
    if (rq != 0.0) breaks.push_back(bq / rq);
    const double value = quad::integrate(integrand, std::min(-10.0, a - 8.0), a, 1e-13, breaks);
    const double upper = std::min({cdf(a1), cdf(a2), cdf(a3)});
    return std::clamp(value, 0.0, upper);
}

}  // namespace dyncop::normal
