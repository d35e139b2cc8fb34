#include "dyncop/copula_pde.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <tuple>

#include <nlohmann/json.hpp>

#include "dyncop/error.hpp"
#include "dyncop/parallel.hpp"

namespace dyncop {

const char* to_string(RhsForm form) noexcept {
    switch (form) {
        case RhsForm::simplified: return "simplified";
        case RhsForm::general: return "general";
        case RhsForm::galichon2d: return "galichon2d";
    }
    return "simplified";
}

RhsForm parse_rhs_form(const std::string& name) {
    if (name == "simplified") return RhsForm::simplified;
    if (name == "general") return RhsForm::general;
    if (name == "galichon2d") return RhsForm::galichon2d;
    fail(ErrorKind::configuration, "unknown rhs form '" + name + "' (simplified, general, galichon2d)");
}

namespace {

// Applies the 1-D first or second difference operator along `axis`.
void difference(const Lattice& lat, std::span<const double> v, int axis, int order, std::span<double> out) {
    const int m = lat.resolution();
    const double h = lat.spacing();
    const std::size_t st = lat.stride(axis);
    const std::size_t outer = lat.size() / (st * m);
    const double c1 = 1.0 / (2 * h), c2 = 1.0 / (h * h);
    if (st == 1) {
        for (std::size_t o = 0; o < outer; ++o) {
            const double* a = v.data() + o * m;
            double* d = out.data() + o * m;
            if (order == 1) {
                d[0] = (-3 * a[0] + 4 * a[1] - a[2]) * c1;
                for (int k = 1; k < m - 1; ++k) d[k] = (a[k + 1] - a[k - 1]) * c1;
                d[m - 1] = (3 * a[m - 1] - 4 * a[m - 2] + a[m - 3]) * c1;
            } else {
                d[0] = (2 * a[0] - 5 * a[1] + 4 * a[2] - a[3]) * c2;
                for (int k = 1; k < m - 1; ++k) d[k] = (a[k + 1] - 2 * a[k] + a[k - 1]) * c2;
                d[m - 1] = (2 * a[m - 1] - 5 * a[m - 2] + 4 * a[m - 3] - a[m - 4]) * c2;
            }
        }
        return;
    }
    for (std::size_t o = 0; o < outer; ++o) {
        const double* src = v.data() + o * st * m;
        double* dst = out.data() + o * st * m;
        // The innermost index runs over `in`, contiguous for every axis but the last.
        auto row = [&](int k) { return src + static_cast<std::size_t>(k) * st; };
        auto orow = [&](int k) { return dst + static_cast<std::size_t>(k) * st; };
        if (order == 1) {
            for (std::size_t in = 0; in < st; ++in) {
                orow(0)[in] = (-3 * row(0)[in] + 4 * row(1)[in] - row(2)[in]) * c1;
                orow(m - 1)[in] = (3 * row(m - 1)[in] - 4 * row(m - 2)[in] + row(m - 3)[in]) * c1;
            }
            for (int k = 1; k < m - 1; ++k) {
                const double* a = row(k - 1);
                const double* b = row(k + 1);
                double* d = orow(k);
                for (std::size_t in = 0; in < st; ++in) d[in] = (b[in] - a[in]) * c1;
            }
        } else {
            for (std::size_t in = 0; in < st; ++in) {
                orow(0)[in] = (2 * row(0)[in] - 5 * row(1)[in] + 4 * row(2)[in] - row(3)[in]) * c2;
                orow(m - 1)[in] =
                    (2 * row(m - 1)[in] - 5 * row(m - 2)[in] + 4 * row(m - 3)[in] - row(m - 4)[in]) * c2;
            }
            for (int k = 1; k < m - 1; ++k) {
                const double* a = row(k - 1);
                const double* c = row(k);
                const double* b = row(k + 1);
                double* d = orow(k);
                for (std::size_t in = 0; in < st; ++in) d[in] = (b[in] - 2 * c[in] + a[in]) * c2;
            }
        }
    }
}

// inf{x : F(x) >= u} on the linearly interpolated CDF (F already verified monotone).
double inverse_cdf(const MarginalState& m, double u) {
    if (u >= 1.0) return m.x.back();
    if (u <= m.F.front()) return m.x.front();
    const auto it = std::lower_bound(m.F.begin(), m.F.end(), u);
    if (it == m.F.end()) return m.x.back();
    const std::size_t k = static_cast<std::size_t>(it - m.F.begin());
    const double w = (u - m.F[k - 1]) / (m.F[k] - m.F[k - 1]);
    return m.x[k - 1] + w * (m.x[k] - m.x[k - 1]);
}

}  // namespace

std::vector<MarginalState> initial_margins(const SdeSystem& sys, double t, const PdeOptions& opt) {
    require(t > 0.0, ErrorKind::domain, "workspace: margins need a copula time stamp t > 0");
    const double horizon = opt.horizon > 0.0 ? opt.horizon : std::max(2.0 * t, 1.0);
    std::vector<MarginalState> margins(sys.dim);
    for (int i = 0; i < sys.dim; ++i) {
        const MarginalModel mm = make_marginal_model(sys, i, opt.freeze_state, opt.analytic_margins);
        auto grid = default_x_grid(mm, std::max(horizon, t), opt.margin_points, opt.x_span);
        margins[i] = mm.tag != AnalyticTag::none ? analytic_marginal(mm, t, std::move(grid))
                                                 : initial_marginal(mm, t, std::move(grid));
    }
    return margins;
}

PdeWorkspace::PdeWorkspace(const SdeSystem& system, const CopulaGrid& copula, const PdeOptions& options)
    : PdeWorkspace(system, copula, initial_margins(system, copula.time_stamp(), options), options) {}

PdeWorkspace::PdeWorkspace(SdeSystem system, CopulaGrid copula, std::vector<MarginalState> margins,
                           const PdeOptions& options)
    : sys_(std::move(system)), copula_(std::move(copula)), opt_(options) {
    const int n = sys_.dim;
    require(n >= 2, ErrorKind::parameter, "workspace: copula dimension must be at least 2");
    require(copula_.dim() == n, ErrorKind::consistency, "workspace: copula and system dimensions differ");
    require(copula_.resolution() >= 5, ErrorKind::parameter, "workspace: lattice resolution must be at least 5");
    require(static_cast<int>(margins.size()) == n, ErrorKind::consistency, "workspace: need one marginal per component");
    require(opt_.density_floor > 0.0, ErrorKind::parameter, "workspace: density floor must be positive");
    for (int i = 0; i < n; ++i)
        models_.push_back(make_marginal_model(sys_, i, opt_.freeze_state, opt_.analytic_margins));

    const Lattice& lat = copula_.lattice();
    const int m = lat.resolution();
    pinned_.assign(lat.size(), 0);
    std::vector<int> k(n);
    for (std::size_t idx = 0; idx < lat.size(); ++idx) {
        lat.coords(idx, k);
        int ones = 0;
        bool zero = false;
        for (int a = 0; a < n; ++a) {
            zero = zero || k[a] == 0;
            ones += k[a] == m - 1;
        }
        pinned_[idx] = zero || ones >= n - 1;
    }
    set_margins(std::move(margins));
    rebuild_derivatives();
}

bool PdeWorkspace::pinned(std::size_t flat) const { return pinned_[flat] != 0; }

const std::vector<double>& PdeWorkspace::mixed(int i, int j) const {
    if (i > j) std::swap(i, j);
    require(i != j, ErrorKind::parameter, "mixed derivative needs distinct axes");
    return mixed_[i * sys_.dim + j];
}

std::vector<double> PdeWorkspace::hessian(std::size_t flat) const {
    const int n = sys_.dim;
    std::vector<double> h(static_cast<std::size_t>(n * n));
    for (int i = 0; i < n; ++i) {
        h[i * n + i] = d2_[i][flat];
        for (int j = i + 1; j < n; ++j) h[i * n + j] = h[j * n + i] = mixed_[i * n + j][flat];
    }
    return h;
}

std::vector<double> PdeWorkspace::set_copula(CopulaGrid copula) {
    require(copula.lattice() == copula_.lattice(), ErrorKind::consistency, "workspace: lattice changed");
    std::vector<double> previous = std::move(copula_).release();
    copula_ = std::move(copula);
    rebuild_derivatives();
    return previous;
}

void PdeWorkspace::set_margins(std::vector<MarginalState> margins) {
    const int n = sys_.dim;
    require(static_cast<int>(margins.size()) == n, ErrorKind::consistency, "workspace: need one marginal per component");
    for (int i = 0; i < n; ++i) {
        const MarginalState& ms = margins[i];
        require(ms.x.size() >= 3 && ms.F.size() == ms.x.size() && ms.f.size() == ms.x.size(), ErrorKind::invariant,
                "workspace: marginal needs at least three nodes and equal-length x, F, f");
        require(std::abs(ms.time_stamp - copula_.time_stamp()) <= 1e-12 * std::max(1.0, copula_.time_stamp()),
                ErrorKind::consistency, "workspace: marginal time stamps differ from the copula");
        bool ordered = true;
        for (std::size_t k = 1; k < ms.x.size(); ++k) ordered &= (ms.x[k] > ms.x[k - 1]) & (ms.F[k] >= ms.F[k - 1]);
        require(ordered, ErrorKind::invariant,
                "workspace: marginal abscissae must increase strictly and CDF samples monotonically");
    }
    margins_ = std::move(margins);
    rebuild_maps();
}

void PdeWorkspace::rebuild_derivatives() {
    const int n = sys_.dim;
    const Lattice& lat = copula_.lattice();
    const auto v = copula_.values();
    d1_.resize(n);
    d2_.resize(n);
    mixed_.resize(static_cast<std::size_t>(n * n));
    for (int i = 0; i < n; ++i) {
        d1_[i].resize(lat.size());
        d2_[i].resize(lat.size());
        difference(lat, v, i, 1, d1_[i]);
        difference(lat, v, i, 2, d2_[i]);
    }
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            mixed_[i * n + j].resize(lat.size());
            difference(lat, d1_[i], j, 1, mixed_[i * n + j]);
        }
}

void PdeWorkspace::rebuild_maps() {
    const int n = sys_.dim;
    const Lattice& lat = copula_.lattice();
    const int m = lat.resolution();
    const double floor = opt_.density_floor;
    x_.assign(n, std::vector<double>(m));
    f_.assign(n, std::vector<double>(m));
    xmid_.assign(n, std::vector<double>(m - 1));
    dF_.assign(n, std::vector<double>(m));
    d2F_.assign(n, std::vector<double>(m));
    std::vector<int> hits(n, 0);
    for (int i = 0; i < n; ++i) {
        const MarginalState& ms = margins_[i];
        // Reliable abscissae carry density at or above the floor.
        std::size_t lo = 0, hi = ms.x.size() - 1;
        while (lo < hi && ms.f[lo] < floor) ++lo;
        while (hi > lo && ms.f[hi] < floor) --hi;
        const double xlo = ms.x[lo], xhi = ms.x[hi];
        // Derivatives of F interpolated linearly between the bracketing nodes.
        auto derivs_at = [&](double x) -> std::pair<double, double> {
            if (x <= ms.x.front()) return cdf_derivatives_at(ms, 0);
            if (x >= ms.x.back()) return cdf_derivatives_at(ms, ms.x.size() - 1);
            const std::size_t j = static_cast<std::size_t>(std::upper_bound(ms.x.begin(), ms.x.end(), x) - ms.x.begin());
            const auto [a1, a2] = cdf_derivatives_at(ms, j - 1);
            const auto [b1, b2] = cdf_derivatives_at(ms, j);
            const double w = (x - ms.x[j - 1]) / (ms.x[j] - ms.x[j - 1]);
            return {a1 + w * (b1 - a1), a2 + w * (b2 - a2)};
        };
        auto clamp_x = [&](double x) { return std::clamp(x, xlo, xhi); };
        for (int k = 0; k < m; ++k) {
            const double u = lat.coordinate(k);
            const double x = clamp_x(inverse_cdf(ms, u));
            const double f = density_at(ms, x);
            if (f < floor && k > 0 && k < m - 1) ++hits[i];
            x_[i][k] = x;
            f_[i][k] = std::max(f, floor);
            std::tie(dF_[i][k], d2F_[i][k]) = derivs_at(x);
        }
        for (int k = 0; k + 1 < m; ++k)
            xmid_[i][k] = clamp_x(inverse_cdf(ms, 0.5 * (lat.coordinate(k) + lat.coordinate(k + 1))));
    }
    double clean = 1.0;
    for (int i = 0; i < n; ++i) clean *= 1.0 - static_cast<double>(hits[i]) / (m - 2);
    floor_fraction_ = 1.0 - clean;
}

double RhsField::sup() const noexcept {
    double s = 0.0;
    for (double v : values) s = std::max(s, std::abs(v));
    return s;
}

namespace {

// Full state at a lattice node.
void node_state(const PdeWorkspace& w, std::span<const int> k, std::span<double> x) {
    for (int a = 0; a < w.system().dim; ++a) x[a] = w.x_map(a)[k[a]];
}

RhsField make_field(const PdeWorkspace& w) {
    RhsField r;
    r.values.assign(w.lattice().size(), 0.0);
    r.floor_fraction = w.floor_fraction();
    r.accuracy_warning = r.floor_fraction > 0.05;
    return r;
}

// Runs body(flat, coords) over every node that is not pinned.
template <class Body>
void for_each_free(const PdeWorkspace& w, Body&& body) {
    const Lattice& lat = w.lattice();
    parallel_for(lat.size(), w.options().threads, [&](std::size_t begin, std::size_t end) {
        std::vector<int> k(lat.dim());
        lat.coords(begin, k);
        for (std::size_t idx = begin; idx < end; ++idx, lat.next(k))
            if (!w.pinned(idx)) body(idx, std::span<const int>(k));
    });
}

// Coefficients of B^i at state z: {d/dx_i (sigma_i^2 / 2) - mu_i, sigma_i^2 / 2}.
std::pair<double, double> b_coefficients(const SdeSystem& sys, int i, std::span<const double> z) {
    const double s = sys.diffusion[i](z);
    return {s * sys.diffusion[i].d_own(z) - sys.drift[i](z), 0.5 * s * s};
}

}  // namespace

RhsField rhs_simplified(const PdeWorkspace& w) {
    const SdeSystem& sys = w.system();
    const int n = sys.dim;
    require(sys.all_markov(), ErrorKind::precondition,
            "rhs_simplified requires individually Markov coefficients; use rhs_general");
    const int m = w.lattice().resolution();

    // sigma_i(x_i) f_i(x_i) per axis and rho_ij(x_i, x_j) per pair.
    std::vector<std::vector<double>> sf(n, std::vector<double>(m));
    std::vector<double> state(sys.x0);
    for (int i = 0; i < n; ++i) {
        state = sys.x0;
        for (int k = 0; k < m; ++k) {
            state[i] = w.x_map(i)[k];
            sf[i][k] = sys.diffusion[i](state) * w.density_map(i)[k];
        }
    }
    std::vector<std::vector<double>> rho(static_cast<std::size_t>(n * n));
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            auto& tab = rho[i * n + j];
            tab.resize(static_cast<std::size_t>(m * m));
            if (sys.rho.is_constant()) {
                std::fill(tab.begin(), tab.end(), sys.rho(i, j, sys.x0[i], sys.x0[j]));
                continue;
            }
            for (int a = 0; a < m; ++a)
                for (int b = 0; b < m; ++b) tab[a * m + b] = sys.rho(i, j, w.x_map(i)[a], w.x_map(j)[b]);
        }

    std::vector<const double*> d2(n), mix(static_cast<std::size_t>(n * n)), tab(static_cast<std::size_t>(n * n));
    for (int i = 0; i < n; ++i) {
        d2[i] = w.d2(i).data();
        for (int j = 0; j < n; ++j)
            if (i != j) {
                mix[i * n + j] = w.mixed(i, j).data();
                tab[i * n + j] = rho[std::min(i, j) * n + std::max(i, j)].data();
            }
    }
    RhsField r = make_field(w);
    if (n == 2) {
        // Free nodes are exactly the interior square.
        const double* s0 = sf[0].data();
        const double* s1 = sf[1].data();
        const double* r01 = tab[1];
        const double* c01 = mix[1];
        for (int a = 1; a < m - 1; ++a)
            for (int b = 1; b < m - 1; ++b) {
                const std::size_t idx = static_cast<std::size_t>(a) * m + b;
                r.values[idx] = 0.5 * (s0[a] * s0[a] * d2[0][idx] + s1[b] * s1[b] * d2[1][idx]) +
                                c01[idx] * s0[a] * r01[a * m + b] * s1[b];
            }
        return r;
    }
    for_each_free(w, [&](std::size_t idx, std::span<const int> k) {
        double diag = 0.0;
        for (int i = 0; i < n; ++i) diag += sf[i][k[i]] * sf[i][k[i]] * d2[i][idx];
        // Tr{[H - diag(H)] D A rho A D}: only off-diagonal pairs contribute.
        double trace = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                if (i == j) continue;
                const double rij = tab[i * n + j][k[std::min(i, j)] * m + k[std::max(i, j)]];
                trace += mix[i * n + j][idx] * (sf[j][k[j]] * rij * sf[i][k[i]]);
            }
        r.values[idx] = 0.5 * diag + 0.5 * trace;
    });
    return r;
}

namespace {

// For every node k, the sum over lattice cells c below k along the axes in
// `axes` of the cell difference of G times W, where W is sampled at the node
// with its `axes` coordinates replaced by the cell indices.
std::vector<double> cell_sums(const Lattice& lat, const std::vector<double>& G, const std::vector<double>& W,
                              const std::vector<int>& axes) {
    const int n = lat.dim();
    const int m = lat.resolution();
    std::vector<double> out(lat.size(), 0.0);
    if (axes.empty()) {
        for (std::size_t idx = 0; idx < lat.size(); ++idx) out[idx] = G[idx] * W[idx];
        return out;
    }
    std::vector<double> V(lat.size(), 0.0);
    std::vector<int> k(n);
    const std::size_t corners = std::size_t{1} << axes.size();
    lat.coords(0, k);
    for (std::size_t idx = 0; idx < lat.size(); ++idx, lat.next(k)) {
        bool inside = true;
        for (int a : axes) inside = inside && k[a] < m - 1;
        if (!inside) continue;
        double diff = 0.0;
        for (std::size_t e = 0; e < corners; ++e) {
            std::size_t off = 0;
            int up = 0;
            for (std::size_t q = 0; q < axes.size(); ++q)
                if (e >> q & 1) {
                    off += lat.stride(axes[q]);
                    ++up;
                }
            const double sign = ((static_cast<int>(axes.size()) - up) % 2 == 0) ? 1.0 : -1.0;
            diff += sign * G[idx + off];
        }
        V[idx] = diff * W[idx];
    }
    for (int a : axes) {
        const std::size_t st = lat.stride(a);
        lat.coords(0, k);
        for (std::size_t idx = 0; idx < lat.size(); ++idx, lat.next(k))
            if (k[a] > 0) V[idx] += V[idx - st];
    }
    lat.coords(0, k);
    for (std::size_t idx = 0; idx < lat.size(); ++idx, lat.next(k)) {
        bool above = true;
        std::size_t off = 0;
        for (int a : axes) {
            above = above && k[a] > 0;
            off += lat.stride(a);
        }
        if (above) out[idx] = V[idx - off];
    }
    return out;
}

// Builds W[idx] = fn(z) with z_a = x_a at the node for a in `node_axes`, and
// the midpoint abscissa of the cell starting at k_a otherwise.
template <class Fn>
std::vector<double> weight_table(const PdeWorkspace& w, const std::vector<int>& node_axes, Fn&& fn) {
    const Lattice& lat = w.lattice();
    const int n = lat.dim();
    const int m = lat.resolution();
    std::vector<double> W(lat.size(), 0.0);
    parallel_for(lat.size(), w.options().threads, [&](std::size_t begin, std::size_t end) {
        std::vector<int> k(n);
        std::vector<double> z(n);
        lat.coords(begin, k);
        for (std::size_t idx = begin; idx < end; ++idx, lat.next(k)) {
            bool ok = true;
            for (int a = 0; a < n; ++a) {
                const bool node = std::find(node_axes.begin(), node_axes.end(), a) != node_axes.end();
                if (node) {
                    z[a] = w.x_map(a)[k[a]];
                } else if (k[a] < m - 1) {
                    z[a] = w.x_mid(a)[k[a]];
                } else {
                    ok = false;
                }
            }
            if (ok) W[idx] = fn(std::span<const double>(z), std::span<const int>(k));
        }
    });
    return W;
}

std::vector<int> other_axes(int n, std::initializer_list<int> skip) {
    std::vector<int> out;
    for (int a = 0; a < n; ++a)
        if (std::find(skip.begin(), skip.end(), a) == skip.end()) out.push_back(a);
    return out;
}

}  // namespace

RhsField rhs_general(const PdeWorkspace& w) {
    const SdeSystem& sys = w.system();
    const int n = sys.dim;
    require(n <= 3, ErrorKind::unsupported, "rhs_general supports n = 2 and n = 3 only");
    const Lattice& lat = w.lattice();
    const bool inside = w.options().first_term == FirstTermVariant::at_z;

    std::vector<double> total(lat.size(), 0.0);
    auto accumulate = [&](const std::vector<double>& term, auto&& factor) {
        for_each_free(w, [&](std::size_t idx, std::span<const int> k) { total[idx] += factor(k) * term[idx]; });
    };

    for (int i = 0; i < n; ++i) {
        const auto S = other_axes(n, {i});
        const auto& fi = w.density_map(i);
        // First group: (1/2) int sigma_i(z)^2 f_i^2 d_z(...) C_ii.
        const auto W1 = weight_table(w, {i}, [&](std::span<const double> z, std::span<const int> k) {
            const double s = sys.diffusion[i](z);
            return inside ? s * s * fi[k[i]] * fi[k[i]] : s * s;
        });
        const auto I1 = cell_sums(lat, w.d2(i), W1, S);
        accumulate(I1, [&](std::span<const int> k) { return inside ? 0.5 : 0.5 * fi[k[i]] * fi[k[i]]; });

        // Second group: -C_i B^i F_i(x_i) + int d_z(...) C_i B^i F_i(z_i).
        const auto& dF = w.dF(i);
        const auto& d2F = w.d2F(i);
        auto bf = [&](std::span<const double> z, std::span<const int> k) {
            const auto [c1, c2] = b_coefficients(sys, i, z);
            return c1 * dF[k[i]] + c2 * d2F[k[i]];
        };
        const auto W2 = weight_table(w, {i}, bf);
        const auto I2 = cell_sums(lat, w.d1(i), W2, S);
        accumulate(I2, [](std::span<const int>) { return 1.0; });
        const auto Bnode = weight_table(w, other_axes(n, {}), bf);
        std::vector<double> local(lat.size());
        for (std::size_t idx = 0; idx < lat.size(); ++idx) local[idx] = w.d1(i)[idx] * Bnode[idx];
        accumulate(local, [](std::span<const int>) { return -1.0; });
    }

    // Third group: (1/2) sum over i != j, taken once per unordered pair.
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const auto W3 = weight_table(w, {i, j}, [&](std::span<const double> z, std::span<const int>) {
                return sys.diffusion[i](z) * sys.diffusion[j](z);
            });
            const auto I3 = cell_sums(lat, w.mixed(i, j), W3, other_axes(n, {i, j}));
            const auto& xi = w.x_map(i);
            const auto& xj = w.x_map(j);
            const auto& fi = w.density_map(i);
            const auto& fj = w.density_map(j);
            accumulate(I3, [&](std::span<const int> k) {
                return sys.rho(i, j, xi[k[i]], xj[k[j]]) * fi[k[i]] * fj[k[j]];
            });
        }

    RhsField r = make_field(w);
    r.values = std::move(total);
    return r;
}

RhsField galichon2d_rhs(const PdeWorkspace& w) {
    const SdeSystem& sys = w.system();
    require(sys.dim == 2, ErrorKind::unsupported, "galichon2d_rhs is defined for n = 2 only");
    const Lattice& lat = w.lattice();
    const int m = lat.resolution();
    const auto& x1 = w.x_map(0);
    const auto& x2 = w.x_map(1);
    const auto& f1 = w.density_map(0);
    const auto& f2 = w.density_map(1);
    const auto& C1 = w.d1(0);
    const auto& C2 = w.d1(1);
    const auto& C11 = w.d2(0);
    const auto& C22 = w.d2(1);
    const auto& C12 = w.mixed(0, 1);
    auto at = [m](int a, int b) { return static_cast<std::size_t>(a) * m + b; };

    // B_1 F_1 at x_1 with the state (x_1, z_2), and B_2 F_2 at x_2 with (z_1, x_2).
    auto B = [&](int comp, double za, double zb, double dF, double d2F) {
        const double z[2] = {za, zb};
        const double s = sys.diffusion[comp](z);
        const double ds = sys.diffusion[comp].d_own(z);
        return (s * ds - sys.drift[comp](z)) * dF + 0.5 * s * s * d2F;
    };
    std::vector<double> B1mid(static_cast<std::size_t>(m * m)), B2mid(static_cast<std::size_t>(m * m));
    for (int a = 0; a < m; ++a)
        for (int l = 0; l + 1 < m; ++l) {
            B1mid[at(a, l)] = B(0, x1[a], w.x_mid(1)[l], w.dF(0)[a], w.d2F(0)[a]);
            B2mid[at(a, l)] = B(1, w.x_mid(0)[l], x2[a], w.dF(1)[a], w.d2F(1)[a]);
        }

    RhsField r = make_field(w);
    for_each_free(w, [&](std::size_t idx, std::span<const int> k) {
        const int a = k[0], b = k[1];
        const double x[2] = {x1[a], x2[b]};
        const double s1 = sys.diffusion[0](x), s2 = sys.diffusion[1](x);
        double v = 0.5 * s1 * s1 * f1[a] * f1[a] * C11[idx] + 0.5 * s2 * s2 * f2[b] * f2[b] * C22[idx];
        v -= C1[idx] * B(0, x1[a], x2[b], w.dF(0)[a], w.d2F(0)[a]);
        // int_{(-inf, x2]} C_12 f_2 B_1F_1 dz_2 = int_0^{u2} C_12 B_1F_1 dv, cell by cell.
        double i1 = 0.0;
        for (int l = 0; l < b; ++l) i1 += (C1[at(a, l + 1)] - C1[at(a, l)]) * B1mid[at(a, l)];
        v += i1;
        v -= C2[idx] * B(1, x1[a], x2[b], w.dF(1)[b], w.d2F(1)[b]);
        double i2 = 0.0;
        for (int l = 0; l < a; ++l) i2 += (C2[at(l + 1, b)] - C2[at(l, b)]) * B2mid[at(b, l)];
        v += i2;
        v += s1 * s2 * sys.rho(0, 1, x1[a], x2[b]) * f1[a] * f2[b] * C12[idx];
        r.values[idx] = v;
    });
    return r;
}

RhsField evaluate_rhs(const PdeWorkspace& w, RhsForm form) {
    switch (form) {
        case RhsForm::simplified: return rhs_simplified(w);
        case RhsForm::general: return rhs_general(w);
        case RhsForm::galichon2d: return galichon2d_rhs(w);
    }
    return rhs_simplified(w);
}

double stable_pde_dt(const PdeWorkspace& w) {
    const SdeSystem& sys = w.system();
    const Lattice& lat = w.lattice();
    const int n = sys.dim;
    const int m = lat.resolution();
    double worst = 0.0;
    if (sys.all_markov()) {
        std::vector<double> state(sys.x0);
        for (int i = 0; i < n; ++i) {
            state = sys.x0;
            for (int k = 1; k < m - 1; ++k) {
                state[i] = w.x_map(i)[k];
                const double sf = sys.diffusion[i](state) * w.density_map(i)[k];
                worst = std::max(worst, 0.5 * sf * sf);
            }
        }
    } else {
        std::vector<double> x(n);
        std::vector<int> k(n);
        for (std::size_t idx = 0; idx < lat.size(); ++idx) {
            if (w.pinned(idx)) continue;
            lat.coords(idx, k);
            node_state(w, k, x);
            for (int i = 0; i < n; ++i) {
                const double sf = sys.diffusion[i](x) * w.density_map(i)[k[i]];
                worst = std::max(worst, 0.5 * sf * sf);
            }
        }
    }
    if (worst == 0.0) return std::numeric_limits<double>::infinity();
    const double h = lat.spacing();
    return 0.25 * h * h / worst;
}

int required_pde_steps(const PdeWorkspace& w, double t1) {
    const double dt = stable_pde_dt(w);
    if (!std::isfinite(dt)) return 1;
    return std::max(1, static_cast<int>(std::ceil((t1 - w.time()) / dt - 1e-9)));
}

namespace {

std::vector<MarginalState> advance_all(const PdeWorkspace& w, const std::vector<MarginalState>& from, double t,
                                       const KfeOptions& kfe) {
    std::vector<MarginalState> out(from.size());
    parallel_for(from.size(), w.options().threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) out[i] = advance_marginal(w.models()[i], from[i], t, 0, kfe);
    });
    return out;
}

}  // namespace

EvolveResult evolve(PdeWorkspace& w, double t1, int steps, RhsForm form, const EvolveOptions& options) {
    const double t0 = w.time();
    require(t1 > t0, ErrorKind::domain, "evolve: t1 must exceed the copula time stamp");
    if (form == RhsForm::simplified)
        require(w.system().all_markov(), ErrorKind::precondition,
                "evolve: the simplified form requires individually Markov coefficients; use general");
    if (form == RhsForm::galichon2d)
        require(w.system().dim == 2, ErrorKind::unsupported, "evolve: galichon2d requires n = 2");
    if (form == RhsForm::general)
        require(w.system().dim <= 3, ErrorKind::unsupported, "evolve: general form supports n <= 3");
    if (steps <= 0) steps = required_pde_steps(w, t1);

    const Lattice lat = w.lattice();
    const int n = lat.dim();
    const int m = lat.resolution();
    const std::size_t N = lat.size();
    const double dt = (t1 - t0) / steps;

    // Pinned targets and Fréchet bounds per node.
    std::vector<double> target(N, 0.0), lower(N), upper(N);
    {
        std::vector<int> k(n);
        for (std::size_t idx = 0; idx < N; ++idx) {
            lat.coords(idx, k);
            double sum = 0.0, mn = 1.0;
            bool zero = false;
            int free_axis = -1, ones = 0;
            for (int a = 0; a < n; ++a) {
                const double u = lat.coordinate(k[a]);
                sum += u;
                mn = std::min(mn, u);
                zero = zero || k[a] == 0;
                if (k[a] == m - 1)
                    ++ones;
                else
                    free_axis = a;
            }
            lower[idx] = std::max(sum - n + 1, 0.0);
            upper[idx] = mn;
            if (zero)
                target[idx] = 0.0;
            else if (ones == n)
                target[idx] = 1.0;
            else if (ones == n - 1)
                target[idx] = lat.coordinate(k[free_axis]);
        }
    }

    EvolveResult res;
    std::vector<double> C(w.copula().values().begin(), w.copula().values().end());
    std::vector<double> stage(N), acc(N);
    AxiomTolerances tol;
    tol.margin = options.margin_tolerance;
    tol.volume = options.volume_tolerance;

    for (int s = 0; s < steps; ++s) {
        const double t = t0 + s * dt;
        const double th = t + 0.5 * dt;
        const double te = (s == steps - 1) ? t1 : t0 + (s + 1) * dt;

        const double bound = stable_pde_dt(w);
        if (dt > bound * (1.0 + 1e-12)) {
            const int needed = s + static_cast<int>(std::ceil((t1 - t) / bound - 1e-9));
            std::ostringstream msg;
            msg << "evolve: dt " << dt << " exceeds the stability bound " << bound << " at step " << s
                << "; at least " << needed << " steps are required";
            fail(ErrorKind::configuration, msg.str());
        }

        const RhsField k1 = evaluate_rhs(w, form);
        if (k1.accuracy_warning) ++res.accuracy_warnings;
        const auto half = advance_all(w, w.margins(), th, options.kfe);
        const auto full = advance_all(w, half, te, options.kfe);

        auto set_stage = [&](const std::vector<double>& k, double c, double time) {
            stage.resize(N);
            for (std::size_t i = 0; i < N; ++i) stage[i] = C[i] + c * k[i];
            stage = w.set_copula(CopulaGrid(lat, std::move(stage), time));
        };

        for (std::size_t i = 0; i < N; ++i) acc[i] = k1.values[i];
        set_stage(k1.values, 0.5 * dt, th);
        w.set_margins(half);
        const RhsField k2 = evaluate_rhs(w, form);
        for (std::size_t i = 0; i < N; ++i) acc[i] += 2.0 * k2.values[i];
        set_stage(k2.values, 0.5 * dt, th);
        const RhsField k3 = evaluate_rhs(w, form);
        for (std::size_t i = 0; i < N; ++i) acc[i] += 2.0 * k3.values[i];
        set_stage(k3.values, dt, te);
        w.set_margins(full);
        const RhsField k4 = evaluate_rhs(w, form);
        for (std::size_t i = 0; i < N; ++i) acc[i] += k4.values[i];

        StepDiagnostics d;
        d.step = s;
        d.t = te;
        d.dt = dt;
        d.rhs_sup = k1.sup();
        for (std::size_t i = 0; i < N; ++i) {
            double v = C[i] + dt / 6.0 * acc[i];
            if (w.pinned(i)) {
                d.max_boundary_correction = std::max(d.max_boundary_correction, std::abs(v - target[i]));
                v = target[i];
            } else if (v < lower[i] || v > upper[i]) {
                const double c = std::clamp(v, lower[i], upper[i]);
                d.max_clip = std::max(d.max_clip, std::abs(v - c));
                ++d.clipped_points;
                v = c;
            }
            C[i] = v;
        }
        res.steps.push_back(d);
        if (options.trace) options.trace->push_back(d);
        const double frac = static_cast<double>(d.clipped_points) / static_cast<double>(N);
        res.max_clip_fraction = std::max(res.max_clip_fraction, frac);
        if (frac > options.clip_fraction_limit) {
            std::ostringstream msg;
            msg << "evolve: Fréchet clipping active on " << d.clipped_points << " of " << N
                << " lattice points at step " << s;
            fail(ErrorKind::divergence, msg.str());
        }

        w.set_copula(CopulaGrid(lat, C, te));
        const AxiomReport rep = check_copula_axioms(w.copula(), tol);
        if (!rep.all_pass()) {
            std::ostringstream msg;
            msg << "evolve: copula axioms violated after step " << s << " (grounded " << rep.grounded.worst
                << ", margins " << rep.margins.worst << ", volume " << rep.n_increasing.worst << ", frechet "
                << rep.frechet.worst << ")";
            fail(ErrorKind::divergence, msg.str());
        }
    }
    res.grid = w.copula();
    return res;
}

nlohmann::json diagnostics_json(const EvolveResult& r) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& d : r.steps)
        steps.push_back({{"step", d.step},
                         {"t", d.t},
                         {"dt", d.dt},
                         {"max_boundary_correction", d.max_boundary_correction},
                         {"max_clip", d.max_clip},
                         {"clipped_points", d.clipped_points},
                         {"rhs_sup", d.rhs_sup}});
    return {{"steps", std::move(steps)},
            {"accuracy_warnings", r.accuracy_warnings},
            {"max_clip_fraction", r.max_clip_fraction}};
}

}  // namespace dyncop
