#include "dyncop/copula_core.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dyncop/error.hpp"
#include "dyncop/normal.hpp"
#include "dyncop/parallel.hpp"

namespace dyncop {

// ---------------------------------------------------------------------------
// CopulaGrid

CopulaGrid::CopulaGrid(Lattice lattice, std::vector<double> values, double time_stamp)
    : lattice_(std::move(lattice)), values_(std::move(values)), time_stamp_(time_stamp) {
    require(lattice_.dim() >= 2, ErrorKind::parameter, "copula grid needs dimension >= 2");
    require(values_.size() == lattice_.size(), ErrorKind::consistency,
            "copula grid: value count does not match the lattice");
    require(time_stamp >= 0.0, ErrorKind::parameter, "copula grid: negative time stamp");
}

double CopulaGrid::interpolate(std::span<const double> u) const {
    const int n = dim();
    require(static_cast<int>(u.size()) == n, ErrorKind::consistency,
            "interpolate: point dimension mismatch");
    const int m = resolution();
    const double h = lattice_.spacing();
    std::vector<int> base(n);
    std::vector<double> w(n);
    for (int a = 0; a < n; ++a) {
        require(u[a] >= 0.0 && u[a] <= 1.0, ErrorKind::domain, "interpolate: point outside [0,1]^n");
        int k = std::min(static_cast<int>(u[a] / h), m - 2);
        base[a] = k;
        w[a] = (u[a] - lattice_.coordinate(k)) / h;
    }
    double acc = 0.0;
    std::vector<int> k(n);
    for (unsigned corner = 0; corner < (1u << n); ++corner) {
        double weight = 1.0;
        for (int a = 0; a < n; ++a) {
            const bool up = (corner >> a) & 1u;
            k[a] = base[a] + (up ? 1 : 0);
            weight *= up ? w[a] : 1.0 - w[a];
        }
        if (weight != 0.0) acc += weight * at(k);
    }
    return acc;
}

// ---------------------------------------------------------------------------
// ParametricCopula

ParametricCopula ParametricCopula::product(int dim) {
    require(dim >= 2, ErrorKind::parameter, "copula dimension must be >= 2");
    return {Family::product, dim, {}};
}

ParametricCopula ParametricCopula::min(int dim) {
    require(dim >= 2, ErrorKind::parameter, "copula dimension must be >= 2");
    return {Family::min, dim, {}};
}

ParametricCopula ParametricCopula::max_bound(int dim) {
    require(dim >= 2, ErrorKind::parameter, "copula dimension must be >= 2");
    return {Family::max_bound, dim, {}};
}

ParametricCopula ParametricCopula::gaussian(double rho) {
    return gaussian(2, {1.0, rho, rho, 1.0});
}

ParametricCopula ParametricCopula::gaussian(int dim, std::vector<double> correlation) {
    require(dim >= 2, ErrorKind::parameter, "copula dimension must be >= 2");
    require(dim <= 3, ErrorKind::unsupported, "Gaussian copula supports dimension 2 or 3");
    require(correlation.size() == static_cast<std::size_t>(dim * dim), ErrorKind::parameter,
            "Gaussian copula: correlation matrix has the wrong size");
    Eigen::MatrixXd r(dim, dim);
    for (int i = 0; i < dim; ++i) {
        for (int j = 0; j < dim; ++j) {
            const double v = correlation[i * dim + j];
            require(std::isfinite(v) && v >= -1.0 && v <= 1.0, ErrorKind::parameter,
                    "Gaussian copula: correlation entries must lie in [-1, 1]");
            require(v == correlation[j * dim + i], ErrorKind::parameter,
                    "Gaussian copula: correlation matrix must be symmetric");
            r(i, j) = v;
        }
        require(correlation[i * dim + i] == 1.0, ErrorKind::parameter,
                "Gaussian copula: correlation matrix must have unit diagonal");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(r, Eigen::EigenvaluesOnly);
    require(eig.eigenvalues().minCoeff() >= -1e-10, ErrorKind::parameter,
            "Gaussian copula: correlation matrix is not positive semidefinite");
    return {Family::gaussian, dim, std::move(correlation)};
}

std::string to_string(ParametricCopula::Family family) {
    switch (family) {
        case ParametricCopula::Family::product: return "product";
        case ParametricCopula::Family::gaussian: return "gaussian";
        case ParametricCopula::Family::min: return "min";
        case ParametricCopula::Family::max_bound: return "max_bound";
    }
    return "unknown";
}

double frechet_lower(std::span<const double> u) noexcept {
    double s = 0.0;
    for (double v : u) s += v;
    return std::max(s - static_cast<double>(u.size()) + 1.0, 0.0);
}

double frechet_upper(std::span<const double> u) noexcept {
    double m = 1.0;
    for (double v : u) m = std::min(m, v);
    return m;
}

namespace {

void check_unit_point(std::span<const double> u, int dim) {
    require(static_cast<int>(u.size()) == dim, ErrorKind::consistency,
            "copula evaluation: point dimension mismatch");
    for (double v : u)
        require(v >= 0.0 && v <= 1.0, ErrorKind::domain,
                "copula evaluation: point outside the unit cube");
}

double eval_gaussian(const ParametricCopula& c, std::span<const double> u) {
    std::vector<int> live;
    for (int i = 0; i < c.dim(); ++i) {
        if (u[i] == 0.0) return 0.0;
        if (u[i] < 1.0) live.push_back(i);
    }
    switch (live.size()) {
        case 0: return 1.0;
        case 1: return u[live[0]];
        case 2: {
            const int i = live[0], j = live[1];
            return normal::bivariate_cdf(normal::quantile(u[i]), normal::quantile(u[j]), c.rho(i, j));
        }
        default:
            return normal::trivariate_cdf(normal::quantile(u[0]), normal::quantile(u[1]),
                                          normal::quantile(u[2]), c.rho(0, 1), c.rho(0, 2),
                                          c.rho(1, 2));
    }
}

}  // namespace

double eval_copula(const ParametricCopula& c, std::span<const double> u) {
    check_unit_point(u, c.dim());
    switch (c.family()) {
        case ParametricCopula::Family::product: {
            double p = 1.0;
            for (double v : u) p *= v;
            return p;
        }
        case ParametricCopula::Family::min: return frechet_upper(u);
        case ParametricCopula::Family::max_bound: return frechet_lower(u);
        case ParametricCopula::Family::gaussian: return eval_gaussian(c, u);
    }
    return 0.0;
}

double copula_partial(const ParametricCopula& c, std::span<const double> u, int axis) {
    require(c.dim() == 2, ErrorKind::unsupported, "copula_partial: bivariate copulas only");
    require(axis == 0 || axis == 1, ErrorKind::domain, "copula_partial: axis must be 0 or 1");
    check_unit_point(u, 2);
    const double ua = u[axis];
    const double uo = u[1 - axis];
    switch (c.family()) {
        case ParametricCopula::Family::product: return uo;
        case ParametricCopula::Family::min: return ua < uo ? 1.0 : 0.0;
        case ParametricCopula::Family::max_bound: return ua + uo > 1.0 ? 1.0 : 0.0;
        case ParametricCopula::Family::gaussian: {
            if (uo == 0.0) return 0.0;
            if (uo == 1.0) return 1.0;
            const double rho = c.rho(0, 1);
            if (rho >= 1.0) return ua < uo ? 1.0 : 0.0;
            if (rho <= -1.0) return ua + uo > 1.0 ? 1.0 : 0.0;
            const double za = normal::quantile(ua);
            const double zo = normal::quantile(uo);
            if (std::isinf(za)) {
                // limit along the face u_axis -> 0 or 1
                const double sign = (za > 0) == (rho > 0) ? -1.0 : 1.0;
                return rho == 0.0 ? uo : (sign > 0 ? 1.0 : 0.0);
            }
            return normal::cdf((zo - rho * za) / std::sqrt((1.0 - rho) * (1.0 + rho)));
        }
    }
    return 0.0;
}

CopulaGrid sample_copula(const ParametricCopula& c, int resolution, double time_stamp,
                         int threads) {
    Lattice lat(c.dim(), resolution);
    std::vector<double> values(lat.size());
    parallel_for(lat.size(), threads, [&](std::size_t begin, std::size_t end) {
        std::vector<int> k(lat.dim());
        std::vector<double> u(lat.dim());
        for (std::size_t idx = begin; idx < end; ++idx) {
            lat.coords(idx, k);
            for (int a = 0; a < lat.dim(); ++a) u[a] = lat.coordinate(k[a]);
            values[idx] = eval_copula(c, u);
        }
    });
    return CopulaGrid(std::move(lat), std::move(values), time_stamp);
}

// ---------------------------------------------------------------------------
// Axioms

AxiomReport check_copula_axioms(const CopulaGrid& g, const AxiomTolerances& tol) {
    const Lattice& lat = g.lattice();
    const int n = lat.dim();
    const int m = lat.resolution();
    AxiomReport rep;
    std::vector<int> k(n);

    auto note = [](AxiomCheck& chk, double violation, double limit, const std::vector<int>& at) {
        if (violation > chk.worst) {
            chk.worst = violation;
            chk.where = at;
        }
        if (violation > limit) chk.pass = false;
    };

    // Signed corner offsets of a lattice cell.
    const unsigned corners = 1u << n;
    std::vector<std::size_t> offset(corners, 0);
    std::vector<double> sign(corners);
    for (unsigned c = 0; c < corners; ++c) {
        int ups = 0;
        for (int a = 0; a < n; ++a)
            if ((c >> a) & 1u) {
                offset[c] += lat.stride(a);
                ++ups;
            }
        sign[c] = (n - ups) % 2 == 0 ? 1.0 : -1.0;
    }

    if (n == 2) {
        // Same checks, unrolled for the bivariate lattice.
        const double* v = g.values().data();
        const std::size_t M = static_cast<std::size_t>(m);
        std::vector<int> at(2);
        auto mark = [&](AxiomCheck& chk, double violation, double limit, int a, int b) {
            if (violation > chk.worst) {
                chk.worst = violation;
                at[0] = a;
                at[1] = b;
                chk.where = at;
            }
            if (violation > limit) chk.pass = false;
        };
        for (int a = 0; a < m; ++a) {
            const double ua = lat.coordinate(a);
            const double* row = v + a * M;
            for (int b = 0; b < m; ++b) {
                const double c = row[b];
                const double ub = lat.coordinate(b);
                if (a == 0 || b == 0) mark(rep.grounded, std::abs(c), tol.grounded, a, b);
                if (a == m - 1) mark(rep.margins, std::abs(c - ub), tol.margin, a, b);
                if (b == m - 1 && a < m - 1) mark(rep.margins, std::abs(c - ua), tol.margin, a, b);
                const double lo = std::max(ua + ub - 1.0, 0.0);
                const double viol = std::max(lo - c, c - std::min(ua, ub));
                if (viol > rep.frechet.worst || viol > tol.frechet) mark(rep.frechet, viol, tol.frechet, a, b);
                if (a < m - 1 && b < m - 1) {
                    const double vol = row[b + M + 1] - row[b + M] - row[b + 1] + c;
                    if (-vol > rep.n_increasing.worst || -vol > tol.volume)
                        mark(rep.n_increasing, -vol, tol.volume, a, b);
                }
            }
        }
        return rep;
    }

    lat.coords(0, k);
    for (std::size_t idx = 0; idx < lat.size(); ++idx, lat.next(k)) {
        const double c = g[idx];
        int zeros = 0, ones = 0, free_axis = -1;
        double sum = 0.0, lo_u = 1.0;
        for (int a = 0; a < n; ++a) {
            const double u = lat.coordinate(k[a]);
            sum += u;
            lo_u = std::min(lo_u, u);
            if (k[a] == 0) ++zeros;
            if (k[a] == m - 1)
                ++ones;
            else
                free_axis = a;
        }
        if (zeros > 0) note(rep.grounded, std::abs(c), tol.grounded, k);
        if (ones == n) note(rep.margins, std::abs(c - 1.0), tol.margin, k);
        if (ones == n - 1) note(rep.margins, std::abs(c - lat.coordinate(k[free_axis])), tol.margin, k);

        const double lo = std::max(sum - n + 1.0, 0.0);
        note(rep.frechet, std::max(lo - c, c - lo_u), tol.frechet, k);

        if (ones == 0) {
            double vol = 0.0;
            for (unsigned q = 0; q < corners; ++q) vol += sign[q] * g[idx + offset[q]];
            note(rep.n_increasing, -vol, tol.volume, k);
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Marginals

void validate_structure(const MarginalState& m) {
    require(m.x.size() >= 2, ErrorKind::invariant, "marginal: needs at least two abscissae");
    require(m.F.size() == m.x.size() && m.f.size() == m.x.size(), ErrorKind::invariant,
            "marginal: x, F and f must have equal length");
    for (std::size_t k = 1; k < m.x.size(); ++k)
        require(m.x[k] > m.x[k - 1], ErrorKind::invariant,
                "marginal: abscissae must be strictly increasing");
}

MarginalReport check_marginal(const MarginalState& m, const MarginalTolerances& tol) {
    validate_structure(m);
    MarginalReport rep;
    const std::size_t n = m.x.size();
    for (std::size_t k = 1; k < n; ++k)
        if (m.F[k] < m.F[k - 1]) rep.monotone = false;
    rep.tails = m.F.front() <= tol.tail && m.F.back() >= 1.0 - tol.tail;
    double mass = 0.0;
    for (std::size_t k = 1; k < n; ++k) mass += 0.5 * (m.f[k] + m.f[k - 1]) * (m.x[k] - m.x[k - 1]);
    rep.mass_error = std::abs(mass - 1.0);
    rep.mass = rep.mass_error <= tol.mass;
    for (std::size_t k = 1; k + 1 < n; ++k) {
        const double fd = (m.F[k + 1] - m.F[k - 1]) / (m.x[k + 1] - m.x[k - 1]);
        rep.consistency_error = std::max(rep.consistency_error, std::abs(fd - m.f[k]));
    }
    rep.consistent = rep.consistency_error <= tol.consistency;
    return rep;
}

namespace {

template <class Samples>
double interp_linear(const std::vector<double>& x, const Samples& y, double at) {
    auto it = std::upper_bound(x.begin(), x.end(), at);
    const std::size_t k = static_cast<std::size_t>(it - x.begin());
    const double w = (at - x[k - 1]) / (x[k] - x[k - 1]);
    return y[k - 1] + w * (y[k] - y[k - 1]);
}

}  // namespace

double cdf_at(const MarginalState& m, double x) {
    if (x <= m.x.front()) return m.F.front();
    if (x >= m.x.back()) return m.F.back();
    return interp_linear(m.x, m.F, x);
}

double density_at(const MarginalState& m, double x) {
    if (x < m.x.front() || x > m.x.back()) return 0.0;
    if (x == m.x.back()) return m.f.back();
    return interp_linear(m.x, m.f, x);
}

double pseudo_inverse(const MarginalState& m, double u) {
    require(u >= 0.0 && u <= 1.0, ErrorKind::domain, "pseudo_inverse: u outside [0,1]");
    validate_structure(m);
    for (std::size_t k = 1; k < m.F.size(); ++k)
        require(m.F[k] >= m.F[k - 1], ErrorKind::invariant,
                "pseudo_inverse: CDF samples are not monotone");
    if (u == 1.0) return m.x.back();
    if (u <= m.F.front()) return m.x.front();
    auto it = std::lower_bound(m.F.begin(), m.F.end(), u);
    if (it == m.F.end()) return m.x.back();
    const std::size_t k = static_cast<std::size_t>(it - m.F.begin());
    const double w = (u - m.F[k - 1]) / (m.F[k] - m.F[k - 1]);
    return m.x[k - 1] + w * (m.x[k] - m.x[k - 1]);
}

namespace {

std::vector<double> margin_levels(std::span<const MarginalState> margins, std::span<const double> x,
                                  int dim) {
    require(static_cast<int>(margins.size()) == dim && static_cast<int>(x.size()) == dim,
            ErrorKind::consistency, "sklar_compose: need one marginal and one coordinate per axis");
    std::vector<double> u(dim);
    for (int i = 0; i < dim; ++i) {
        const MarginalState& m = margins[i];
        validate_structure(m);
        require(std::abs(m.time_stamp - margins[0].time_stamp) <= 1e-12, ErrorKind::consistency,
                "sklar_compose: marginal time stamps differ");
        require(x[i] >= m.x.front() && x[i] <= m.x.back(), ErrorKind::domain,
                "sklar_compose: point outside the marginal grid span");
        u[i] = std::clamp(cdf_at(m, x[i]), 0.0, 1.0);
    }
    return u;
}

}  // namespace

double sklar_compose(const ParametricCopula& c, std::span<const MarginalState> margins,
                     std::span<const double> x) {
    const auto u = margin_levels(margins, x, c.dim());
    return eval_copula(c, u);
}

double sklar_compose(const CopulaGrid& c, std::span<const MarginalState> margins,
                     std::span<const double> x) {
    const auto u = margin_levels(margins, x, c.dim());
    return c.interpolate(u);
}

std::vector<double> linspace(double lo, double hi, int n) {
    require(n >= 2, ErrorKind::parameter, "linspace: need at least two points");
    std::vector<double> v(n);
    for (int i = 0; i < n; ++i) v[i] = lo + (hi - lo) * i / (n - 1);
    v.back() = hi;
    return v;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::vector<double>> read_numeric_csv(const std::filesystem::path& path,
                                                  std::vector<std::string>& header) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::io,
            "empty CSV file " + path.string());
    header.clear();
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        const char* p = line.c_str();
        while (*p) {
            char* end = nullptr;
            const double v = std::strtod(p, &end);
            require(end != p, ErrorKind::io, "malformed number in " + path.string());
            row.push_back(v);
            p = end;
            if (*p == ',') ++p;
        }
        require(row.size() == header.size(), ErrorKind::io,
                "row width does not match header in " + path.string());
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

void write_copula_csv(const CopulaGrid& g, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
    const Lattice& lat = g.lattice();
    for (int a = 0; a < lat.dim(); ++a) out << 'u' << (a + 1) << ',';
    out << "C\n";
    std::vector<int> k(lat.dim());
    for (std::size_t idx = 0; idx < lat.size(); ++idx) {
        lat.coords(idx, k);
        for (int a = 0; a < lat.dim(); ++a) out << fmt17(lat.coordinate(k[a])) << ',';
        out << fmt17(g[idx]) << '\n';
    }
    require(static_cast<bool>(out), ErrorKind::io, "write failed for " + path.string());
}

CopulaGrid read_copula_csv(const std::filesystem::path& path, double time_stamp) {
    std::vector<std::string> header;
    auto rows = read_numeric_csv(path, header);
    const int n = static_cast<int>(header.size()) - 1;
    require(n >= 2 && header.back() == "C", ErrorKind::io,
            "copula CSV header must read u1,...,un,C in " + path.string());
    const int m = static_cast<int>(std::lround(std::pow(static_cast<double>(rows.size()), 1.0 / n)));
    Lattice lat(n, m);
    require(lat.size() == rows.size(), ErrorKind::io,
            "copula CSV row count is not a full lattice in " + path.string());
    std::vector<double> values(lat.size());
    std::vector<int> k(n);
    for (std::size_t idx = 0; idx < rows.size(); ++idx) {
        lat.coords(idx, k);
        for (int a = 0; a < n; ++a)
            require(std::abs(rows[idx][a] - lat.coordinate(k[a])) <= 1e-12, ErrorKind::io,
                    "copula CSV rows are not in row-major lattice order in " + path.string());
        values[idx] = rows[idx][n];
    }
    return CopulaGrid(std::move(lat), std::move(values), time_stamp);
}

void write_marginal_csv(const MarginalState& m, const std::filesystem::path& path) {
    validate_structure(m);
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
    out << "x,F,f\n";
    for (std::size_t k = 0; k < m.x.size(); ++k)
        out << fmt17(m.x[k]) << ',' << fmt17(m.F[k]) << ',' << fmt17(m.f[k]) << '\n';
    require(static_cast<bool>(out), ErrorKind::io, "write failed for " + path.string());
}

MarginalState read_marginal_csv(const std::filesystem::path& path, int component,
                                double time_stamp) {
    std::vector<std::string> header;
    auto rows = read_numeric_csv(path, header);
    require(header == std::vector<std::string>{"x", "F", "f"}, ErrorKind::io,
            "marginal CSV header must read x,F,f in " + path.string());
    MarginalState m;
    m.component = component;
    m.time_stamp = time_stamp;
    for (const auto& r : rows) {
        m.x.push_back(r[0]);
        m.F.push_back(r[1]);
        m.f.push_back(r[2]);
    }
    validate_structure(m);
    return m;
}

}  // namespace dyncop
