#include "dyncop/markov_product.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "dyncop/error.hpp"
#include "dyncop/parallel.hpp"

namespace dyncop {

namespace {

constexpr double kTimeTol = 1e-12;

}  // namespace

BivariateCopulaFn::BivariateCopulaFn(ParametricCopula c, double s, double t)
    : src_(std::move(c)), s_(s), t_(t) {
    require(std::get<ParametricCopula>(src_).dim() == 2, ErrorKind::parameter,
            "bivariate copula function needs a 2-copula");
    require(s < t, ErrorKind::parameter, "bivariate copula function needs s < t");
}

BivariateCopulaFn::BivariateCopulaFn(CopulaGrid g, double s, double t)
    : src_(std::move(g)), s_(s), t_(t) {
    require(std::get<CopulaGrid>(src_).dim() == 2, ErrorKind::parameter,
            "bivariate copula function needs a 2-copula");
    require(s < t, ErrorKind::parameter, "bivariate copula function needs s < t");
}

double BivariateCopulaFn::value(double u1, double u2) const {
    const std::array<double, 2> u{u1, u2};
    if (auto* p = std::get_if<ParametricCopula>(&src_)) return eval_copula(*p, u);
    return std::get<CopulaGrid>(src_).interpolate(u);
}

double BivariateCopulaFn::partial(double u1, double u2, int axis) const {
    const std::array<double, 2> u{u1, u2};
    if (auto* p = std::get_if<ParametricCopula>(&src_)) return copula_partial(*p, u, axis);
    const CopulaGrid& g = std::get<CopulaGrid>(src_);
    const double h = g.lattice().spacing();
    auto at = [&](double v) {
        std::array<double, 2> w = u;
        w[axis] = v;
        return g.interpolate(w);
    };
    const double c = u[axis];
    require(c >= 0.0 && c <= 1.0, ErrorKind::domain, "partial: point outside the unit square");
    if (c - h < 0.0) return (-3.0 * at(c) + 4.0 * at(c + h) - at(c + 2 * h)) / (2 * h);
    if (c + h > 1.0) return (3.0 * at(c) - 4.0 * at(c - h) + at(c - 2 * h)) / (2 * h);
    return (at(c + h) - at(c - h)) / (2 * h);
}

namespace {

void require_copula(const BivariateCopulaFn& c, const AxiomTolerances& tol, const char* which) {
    if (c.parametric()) return;
    const auto rep = check_copula_axioms(std::get<CopulaGrid>(c.source()), tol);
    require(rep.all_pass(), ErrorKind::precondition,
            std::string("copula_product: input ") + which + " fails the copula axioms");
}

int output_resolution(const BivariateCopulaFn& a, const BivariateCopulaFn& b, int fallback) {
    int m = 0;
    for (const auto* c : {&a, &b})
        if (!c->parametric()) m = std::max(m, std::get<CopulaGrid>(c->source()).resolution());
    return m > 0 ? m : fallback;
}

}  // namespace

CopulaGrid copula_product(const BivariateCopulaFn& ca, const BivariateCopulaFn& cb,
                          const ProductOptions& opt) {
    require(opt.quad_points >= 16, ErrorKind::precondition, "copula_product: quad_points must be >= 16");
    require_copula(ca, opt.input_tolerance, "a");
    require_copula(cb, opt.input_tolerance, "b");

    Lattice lat(2, output_resolution(ca, cb, opt.resolution));
    const int m = lat.resolution();

    std::vector<double> z;
    z.reserve(opt.quad_points + m);
    for (int k = 0; k < opt.quad_points; ++k)
        z.push_back(k == opt.quad_points - 1 ? 1.0 : static_cast<double>(k) / (opt.quad_points - 1));
    for (int k = 0; k < m; ++k) z.push_back(lat.coordinate(k));
    std::sort(z.begin(), z.end());
    z.erase(std::unique(z.begin(), z.end(), [](double p, double q) { return q - p < 1e-14; }),
            z.end());
    const std::size_t nz = z.size();

    // da[i][k] = C_a(x_i, z_{k+1}) - C_a(x_i, z_k), db[k][j] likewise in the first slot of C_b.
    std::vector<double> da(static_cast<std::size_t>(m) * (nz - 1));
    std::vector<double> db((nz - 1) * static_cast<std::size_t>(m));
    parallel_for(static_cast<std::size_t>(m), opt.threads, [&](std::size_t b, std::size_t e) {
        std::vector<double> row(nz);
        for (std::size_t i = b; i < e; ++i) {
            const double x = lat.coordinate(static_cast<int>(i));
            for (std::size_t k = 0; k < nz; ++k) row[k] = ca.value(x, z[k]);
            for (std::size_t k = 0; k + 1 < nz; ++k) da[i * (nz - 1) + k] = row[k + 1] - row[k];
            for (std::size_t k = 0; k < nz; ++k) row[k] = cb.value(z[k], x);
            for (std::size_t k = 0; k + 1 < nz; ++k) db[k * m + i] = row[k + 1] - row[k];
        }
    });

    std::vector<double> values(lat.size());
    parallel_for(static_cast<std::size_t>(m), opt.threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            for (int j = 0; j < m; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k + 1 < nz; ++k)
                    acc += da[i * (nz - 1) + k] * db[k * m + j] / (z[k + 1] - z[k]);
                values[i * m + j] = acc;
            }
        }
    });
    return CopulaGrid(std::move(lat), std::move(values));
}

double transition_from_copula(const BivariateCopulaFn& c, const MarginalState& m_ti,
                              const MarginalState& m_tj, double x_i, double x_j,
                              const TransitionOptions& opt) {
    validate_structure(m_ti);
    validate_structure(m_tj);
    require(std::abs(c.from_time() - m_ti.time_stamp) <= kTimeTol &&
                std::abs(c.to_time() - m_tj.time_stamp) <= kTimeTol,
            ErrorKind::consistency, "transition_from_copula: copula times do not match the marginals");
    require(density_at(m_tj, x_j) >= opt.density_floor, ErrorKind::degenerate,
            "transition_from_copula: conditioning point has zero density");
    const double u1 = std::clamp(cdf_at(m_ti, x_i), 0.0, 1.0);
    const double u2 = std::clamp(cdf_at(m_tj, x_j), 0.0, 1.0);
    return std::clamp(c.partial(u1, u2, 1), 0.0, 1.0);
}

double chapman_kolmogorov_residual(const BivariateCopulaFn& c_su, const BivariateCopulaFn& c_ut,
                                   const BivariateCopulaFn& c_st, const ProductOptions& opt) {
    const double s = c_su.from_time(), u = c_su.to_time(), t = c_ut.to_time();
    require(s < u && u < t && std::abs(c_ut.from_time() - u) <= kTimeTol &&
                std::abs(c_st.from_time() - s) <= kTimeTol &&
                std::abs(c_st.to_time() - t) <= kTimeTol,
            ErrorKind::precondition, "chapman_kolmogorov_residual: copulas do not form a triple s<u<t");
    const CopulaGrid prod = copula_product(c_su, c_ut, opt);
    const Lattice& lat = prod.lattice();
    double worst = 0.0;
    for (int i = 0; i < lat.resolution(); ++i)
        for (int j = 0; j < lat.resolution(); ++j) {
            const std::array<int, 2> k{i, j};
            const double ref = c_st.value(lat.coordinate(i), lat.coordinate(j));
            worst = std::max(worst, std::abs(prod.at(k) - ref));
        }
    return worst;
}

double markov_joint(std::span<const BivariateCopulaFn> copulas,
                    std::span<const MarginalState> margins, std::span<const double> x) {
    const std::size_t n = margins.size();
    require(n >= 2 && copulas.size() == n - 1 && x.size() == n, ErrorKind::consistency,
            "markov_joint: need n margins, n points and n-1 copulas");
    std::vector<double> u(n);
    for (std::size_t i = 0; i < n; ++i) {
        validate_structure(margins[i]);
        u[i] = std::clamp(cdf_at(margins[i], x[i]), 0.0, 1.0);
    }
    for (std::size_t i = 0; i + 1 < n; ++i)
        require(std::abs(copulas[i].from_time() - margins[i].time_stamp) <= kTimeTol &&
                    std::abs(copulas[i].to_time() - margins[i + 1].time_stamp) <= kTimeTol,
                ErrorKind::consistency, "markov_joint: copula times do not match the marginals");
    double num = 1.0;
    for (std::size_t i = 1; i < n; ++i) num *= copulas[i - 1].value(u[i - 1], u[i]);
    double den = 1.0;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        require(u[i] > 0.0, ErrorKind::degenerate, "markov_joint: interior marginal probability is 0");
        den *= u[i];
    }
    return num / den;
}

}  // namespace dyncop
