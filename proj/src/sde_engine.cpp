#include "dyncop/sde_engine.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dyncop/error.hpp"
#include "dyncop/parallel.hpp"
#include "dyncop/rng.hpp"

namespace dyncop {

bool SdeSystem::all_markov() const noexcept {
    return std::all_of(markov_flags.begin(), markov_flags.end(), [](bool b) { return b; });
}

std::vector<double> SdeSystem::mu(std::span<const double> x) const {
    std::vector<double> out(dim);
    for (int i = 0; i < dim; ++i) out[i] = drift[i](x);
    return out;
}

std::vector<double> SdeSystem::sigma(std::span<const double> x) const {
    std::vector<double> out(dim);
    for (int i = 0; i < dim; ++i) out[i] = diffusion[i](x);
    return out;
}

SdeSystem make_system(std::vector<double> x0, std::vector<Coefficient> drift,
                      std::vector<Coefficient> diffusion, CorrelationField rho) {
    const int n = static_cast<int>(x0.size());
    require(n >= 1, ErrorKind::parameter, "system: empty initial state");
    require(drift.size() == x0.size() && diffusion.size() == x0.size(), ErrorKind::consistency,
            "system: drift, diffusion and x0 sizes differ");
    for (int i = 0; i < n; ++i)
        require(drift[i].component() == i && diffusion[i].component() == i, ErrorKind::consistency,
                "system: coefficient " + std::to_string(i) + " bound to the wrong component");
    SdeSystem s;
    s.dim = n;
    s.x0 = std::move(x0);
    s.drift = std::move(drift);
    s.diffusion = std::move(diffusion);
    s.rho = std::move(rho);
    s.markov_flags.resize(n);
    for (int i = 0; i < n; ++i) s.markov_flags[i] = s.drift[i].own_only() && s.diffusion[i].own_only();
    validate_system(s);
    return s;
}

void validate_system(const SdeSystem& sys, int probe_count, std::uint64_t seed) {
    const int n = sys.dim;
    require(static_cast<int>(sys.markov_flags.size()) == n, ErrorKind::consistency,
            "system: markov_flags size differs from dim");
    auto gen = rng::Xoshiro256(seed);
    std::vector<double> x(n), y(n);
    for (int p = 0; p < probe_count; ++p) {
        for (int k = 0; k < n; ++k) x[k] = sys.x0[k] + 4.0 * (2.0 * gen.uniform() - 1.0);
        for (int i = 0; i < n; ++i) {
            const double s = sys.diffusion[i](x);
            require(std::isfinite(s) && s >= 0.0, ErrorKind::invariant,
                    "system: diffusion " + std::to_string(i) + " negative or non-finite at a probe point");
            for (int j = 0; j < n; ++j) {
                const double r = sys.rho(i, j, x[i], x[j]);
                require(r >= -1.0 && r <= 1.0, ErrorKind::invariant, "system: rho entry outside [-1,1]");
                require(std::abs(r - sys.rho(j, i, x[j], x[i])) <= 1e-14, ErrorKind::invariant,
                        "system: rho is not symmetric");
            }
            if (!sys.markov_flags[i] || n == 1) continue;
            y = x;
            for (int j = 0; j < n; ++j)
                if (j != i) y[j] = sys.x0[j] + 4.0 * (2.0 * gen.uniform() - 1.0);
            require(sys.drift[i](x) == sys.drift[i](y) && sys.diffusion[i](x) == sys.diffusion[i](y),
                    ErrorKind::invariant,
                    "system: component " + std::to_string(i) +
                        " is flagged individually Markov but its coefficients depend on other components");
        }
    }
}

namespace {

std::vector<double> raw_correlation(const SdeSystem& sys, std::span<const double> x) {
    const int n = sys.dim;
    std::vector<double> r(static_cast<std::size_t>(n * n));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) r[i * n + j] = sys.rho(i, j, x[i], x[j]);
    return r;
}

// Lower Cholesky factor of a PSD matrix, tolerating zero pivots.
bool cholesky(std::span<const double> a, int n, std::span<double> l) {
    std::fill(l.begin(), l.end(), 0.0);
    for (int j = 0; j < n; ++j) {
        double d = a[j * n + j];
        for (int k = 0; k < j; ++k) d -= l[j * n + k] * l[j * n + k];
        if (d < -1e-12) return false;
        const double ljj = d > 1e-14 ? std::sqrt(d) : 0.0;
        l[j * n + j] = ljj;
        for (int i = j + 1; i < n; ++i) {
            double s = a[i * n + j];
            for (int k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
            if (ljj == 0.0) {
                if (std::abs(s) > 1e-10) return false;
                l[i * n + j] = 0.0;
            } else {
                l[i * n + j] = s / ljj;
            }
        }
    }
    return true;
}

}  // namespace

CorrelationResult correlation_at(const SdeSystem& sys, std::span<const double> x) {
    const int n = sys.dim;
    const auto raw = raw_correlation(sys, x);
    Eigen::MatrixXd a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = 0.5 * (raw[i * n + j] + raw[j * n + i]);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
    CorrelationResult out;
    out.min_eigenvalue = es.eigenvalues().minCoeff();
    Eigen::MatrixXd p = a;
    if (out.min_eigenvalue < 0.0) {
        const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
        p = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
        for (int i = 0; i < n; ++i) {
            const double d = std::sqrt(std::max(p(i, i), 1e-300));
            p.row(i) /= d;
            p.col(i) /= d;
        }
        for (int i = 0; i < n; ++i) p(i, i) = 1.0;
    }
    out.matrix.resize(static_cast<std::size_t>(n * n));
    double change = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            out.matrix[i * n + j] = p(i, j);
            change = std::max(change, std::abs(p(i, j) - raw[i * n + j]));
        }
    out.projected = change > 1e-12;
    return out;
}

namespace {

struct Constants {
    double lip_mu = 0.0, lip_sigma = 0.0, growth = 0.0;
};

Constants estimate_constants(const SdeSystem& sys, const ProbeBox& box, int count, std::uint64_t seed) {
    const int n = sys.dim;
    auto gen = rng::Xoshiro256(seed);
    std::vector<double> x(n), y(n);
    auto draw = [&](std::vector<double>& v) {
        for (int k = 0; k < n; ++k) v[k] = box.lo[k] + (box.hi[k] - box.lo[k]) * gen.uniform();
    };
    Constants c;
    for (int p = 0; p < count; ++p) {
        draw(x);
        draw(y);
        const auto mx = sys.mu(x), my = sys.mu(y), sx = sys.sigma(x), sy = sys.sigma(y);
        double dx2 = 0, dm2 = 0, ds2 = 0, m2 = 0, s2 = 0, x2 = 0;
        for (int k = 0; k < n; ++k) {
            dx2 += (x[k] - y[k]) * (x[k] - y[k]);
            dm2 += (mx[k] - my[k]) * (mx[k] - my[k]);
            ds2 += (sx[k] - sy[k]) * (sx[k] - sy[k]);
            m2 += mx[k] * mx[k];
            s2 += sx[k] * sx[k];
            x2 += x[k] * x[k];
        }
        if (dx2 > 0) {
            c.lip_mu = std::max(c.lip_mu, std::sqrt(dm2 / dx2));
            c.lip_sigma = std::max(c.lip_sigma, std::sqrt(ds2 / dx2));
        }
        c.growth = std::max(c.growth, std::sqrt((m2 + s2) / (1.0 + x2)));
    }
    return c;
}

}  // namespace

ConditionReport check_existence_conditions(const SdeSystem& sys, const ProbeBox& box, int probe_count,
                                           std::uint64_t seed) {
    const int n = sys.dim;
    require(static_cast<int>(box.lo.size()) == n && static_cast<int>(box.hi.size()) == n,
            ErrorKind::consistency, "probe box dimension differs from the system");
    for (int k = 0; k < n; ++k)
        require(std::isfinite(box.lo[k]) && std::isfinite(box.hi[k]) && box.lo[k] < box.hi[k],
                ErrorKind::domain, "probe box must be bounded and non-empty");
    const Constants in = estimate_constants(sys, box, probe_count, seed);
    ProbeBox wide = box;
    for (int k = 0; k < n; ++k) {
        const double c = 0.5 * (box.lo[k] + box.hi[k]), h = box.hi[k] - box.lo[k];
        wide.lo[k] = c - h;
        wide.hi[k] = c + h;
    }
    const Constants out = estimate_constants(sys, wide, probe_count, seed + 1);

    ConditionReport r;
    r.lipschitz_drift = in.lip_mu;
    r.lipschitz_diffusion = in.lip_sigma;
    r.growth_constant = in.growth;
    r.extended_lipschitz = std::max(out.lip_mu, out.lip_sigma);
    r.extended_growth = out.growth;
    auto grows = [](double a, double b) { return b > 1.5 * a + 1e-12; };
    if (grows(in.lip_mu, out.lip_mu) || grows(in.lip_sigma, out.lip_sigma)) {
        r.lipschitz_ok = false;
        r.violations.push_back("Lipschitz constant grows with the probe box (superlinear coefficients)");
    }
    if (grows(in.growth, out.growth)) {
        r.growth_ok = false;
        r.violations.push_back("linear-growth bound fails: |mu|^2 + |sigma|^2 grows faster than 1 + |x|^2");
    }
    for (double v : {in.lip_mu, in.lip_sigma, in.growth, out.lip_mu, out.lip_sigma, out.growth})
        if (!std::isfinite(v)) {
            r.lipschitz_ok = r.growth_ok = false;
            r.violations.push_back("non-finite coefficient inside the probe box");
            break;
        }
    return r;
}

PathEnsemble simulate_paths(const SdeSystem& sys, std::vector<double> t_grid, std::size_t n_paths,
                            std::uint64_t seed, const SimulationOptions& options) {
    const int n = sys.dim;
    require(t_grid.size() >= 2, ErrorKind::parameter, "simulate: t_grid needs at least two times");
    require(t_grid.front() == 0.0, ErrorKind::parameter, "simulate: t_grid must start at 0");
    for (std::size_t k = 1; k < t_grid.size(); ++k)
        require(t_grid[k] > t_grid[k - 1], ErrorKind::parameter, "simulate: t_grid must be strictly increasing");
    require(n_paths >= 1, ErrorKind::parameter, "simulate: n_paths must be positive");
    require(options.max_dt > 0 && options.noise_refinement >= 1, ErrorKind::parameter,
            "simulate: invalid step options");

    if (!options.override_conditions) {
        ProbeBox box = options.probe_box;
        if (box.lo.empty()) {
            for (int k = 0; k < n; ++k) {
                box.lo.push_back(sys.x0[k] - 5.0);
                box.hi.push_back(sys.x0[k] + 5.0);
            }
        }
        const auto rep = check_existence_conditions(sys, box);
        if (!rep.all_pass())
            fail(ErrorKind::precondition, "simulate: existence conditions fail (" + rep.violations.front() +
                                              "); set override to simulate anyway");
    }

    PathEnsemble e;
    e.n_paths = n_paths;
    e.dim = n;
    e.seed = seed;
    e.t_grid = std::move(t_grid);
    const std::size_t nt = e.t_grid.size();
    e.states.assign(n_paths * nt * n, 0.0);

    std::vector<int> substeps(nt, 0);
    for (std::size_t k = 1; k < nt; ++k)
        substeps[k] = std::max(1, static_cast<int>(std::ceil((e.t_grid[k] - e.t_grid[k - 1]) / options.max_dt - 1e-9)));

    const bool const_rho = sys.rho.is_constant();
    std::vector<double> l_const(static_cast<std::size_t>(n * n));
    if (const_rho) {
        const auto cr = correlation_at(sys, sys.x0);
        require(cr.min_eigenvalue >= -0.5, ErrorKind::model,
                "simulate: correlation matrix is severely indefinite (min eigenvalue " +
                    std::to_string(cr.min_eigenvalue) + ")");
        if (cr.projected) {
            std::uint64_t steps = 0;
            for (int m : substeps) steps += static_cast<std::uint64_t>(m);
            e.projections = steps * n_paths;
        }
        require(cholesky(cr.matrix, n, l_const), ErrorKind::model, "simulate: projected correlation has no factor");
    }

    std::vector<std::uint64_t> proj_counts(n_paths, 0);
    parallel_for(n_paths, options.threads, [&](std::size_t begin, std::size_t end) {
        std::vector<double> x(n), mu(n), sg(n), xi(n), dw(n), l(static_cast<std::size_t>(n * n)), a(n * n);
        const int r = options.noise_refinement;
        for (std::size_t p = begin; p < end; ++p) {
            auto gen = rng::Xoshiro256::stream(seed, p);
            std::copy(sys.x0.begin(), sys.x0.end(), x.begin());
            double* out = &e.states[p * nt * n];
            std::copy(x.begin(), x.end(), out);
            for (std::size_t k = 1; k < nt; ++k) {
                const double dt = (e.t_grid[k] - e.t_grid[k - 1]) / substeps[k];
                for (int s = 0; s < substeps[k]; ++s) {
                    for (int i = 0; i < n; ++i) {
                        mu[i] = sys.drift[i](x);
                        sg[i] = sys.diffusion[i](x);
                    }
                    const double* lp = l_const.data();
                    if (!const_rho) {
                        for (int i = 0; i < n; ++i)
                            for (int j = 0; j < n; ++j) a[i * n + j] = sys.rho(i, j, x[i], x[j]);
                        if (!cholesky(a, n, l)) {
                            const auto cr = correlation_at(sys, x);
                            if (cr.min_eigenvalue < -0.5) {
                                std::ostringstream msg;
                                msg << "simulate: correlation matrix severely indefinite on path " << p
                                    << " near t=" << e.t_grid[k - 1] + s * dt;
                                fail(ErrorKind::model, msg.str());
                            }
                            ++proj_counts[p];
                            cholesky(cr.matrix, n, l);
                        }
                        lp = l.data();
                    }
                    std::fill(dw.begin(), dw.end(), 0.0);
                    for (int q = 0; q < r; ++q) {
                        for (int i = 0; i < n; ++i) xi[i] = gen.normal();
                        for (int i = 0; i < n; ++i) {
                            double v = 0.0;
                            for (int j = 0; j <= i; ++j) v += lp[i * n + j] * xi[j];
                            dw[i] += v;
                        }
                    }
                    const double scale = std::sqrt(dt / r);
                    for (int i = 0; i < n; ++i) x[i] += mu[i] * dt + sg[i] * dw[i] * scale;
                    for (int i = 0; i < n; ++i)
                        if (!std::isfinite(x[i])) {
                            std::ostringstream msg;
                            msg << "simulate: non-finite state on path " << p << " at t="
                                << e.t_grid[k - 1] + (s + 1) * dt;
                            fail(ErrorKind::blow_up, msg.str());
                        }
                }
                std::copy(x.begin(), x.end(), out + k * n);
            }
        }
    });
    for (auto c : proj_counts) e.projections += c;
    return e;
}

void write_paths_csv(const PathEnsemble& e, const std::filesystem::path& path) {
    std::ofstream os(path);
    require(static_cast<bool>(os), ErrorKind::io, "cannot open " + path.string() + " for writing");
    os << "path,time,component,value\n";
    char buf[64];
    for (std::size_t p = 0; p < e.n_paths; ++p)
        for (std::size_t t = 0; t < e.n_times(); ++t)
            for (int c = 0; c < e.dim; ++c) {
                std::snprintf(buf, sizeof buf, "%.17g", e.at(p, t, c));
                os << p << ',' << e.t_grid[t] << ',' << c << ',' << buf << '\n';
            }
    require(static_cast<bool>(os), ErrorKind::io, "write failed: " + path.string());
}

namespace {

constexpr char kMagic[8] = {'C', 'P', 'D', 'P', 'A', 'T', 'H', '1'};

template <class T>
void put_le(std::ostream& os, T v) {
    static_assert(sizeof(T) == 8);
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    unsigned char b[8];
    for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(u >> (8 * k));
    os.write(reinterpret_cast<const char*>(b), 8);
}

template <class T>
T get_le(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    require(static_cast<bool>(is), ErrorKind::io, "path file truncated");
    std::uint64_t u = 0;
    for (int k = 0; k < 8; ++k) u |= static_cast<std::uint64_t>(b[k]) << (8 * k);
    T v;
    std::memcpy(&v, &u, 8);
    return v;
}

}  // namespace

void write_paths_binary(const PathEnsemble& e, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    require(static_cast<bool>(os), ErrorKind::io, "cannot open " + path.string() + " for writing");
    os.write(kMagic, 8);
    put_le<std::uint64_t>(os, e.n_paths);
    put_le<std::uint64_t>(os, e.n_times());
    put_le<std::uint64_t>(os, static_cast<std::uint64_t>(e.dim));
    put_le<std::uint64_t>(os, e.seed);
    for (double t : e.t_grid) put_le(os, t);
    for (double v : e.states) put_le(os, v);
    require(static_cast<bool>(os), ErrorKind::io, "write failed: " + path.string());
}

PathEnsemble read_paths_binary(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    require(static_cast<bool>(is), ErrorKind::io, "cannot open " + path.string());
    char magic[8];
    is.read(magic, 8);
    require(static_cast<bool>(is) && std::memcmp(magic, kMagic, 8) == 0, ErrorKind::io,
            path.string() + " is not a path ensemble file");
    PathEnsemble e;
    e.n_paths = get_le<std::uint64_t>(is);
    const auto nt = get_le<std::uint64_t>(is);
    e.dim = static_cast<int>(get_le<std::uint64_t>(is));
    e.seed = get_le<std::uint64_t>(is);
    e.t_grid.resize(nt);
    for (auto& t : e.t_grid) t = get_le<double>(is);
    e.states.resize(e.n_paths * nt * e.dim);
    for (auto& v : e.states) v = get_le<double>(is);
    return e;
}

}  // namespace dyncop
