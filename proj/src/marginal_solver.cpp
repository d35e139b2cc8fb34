#include "dyncop/marginal_solver.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>

#include "dyncop/error.hpp"
#include "dyncop/normal.hpp"

namespace dyncop {

const char* to_string(AnalyticTag tag) noexcept {
    switch (tag) {
        case AnalyticTag::none: return "none";
        case AnalyticTag::brownian: return "brownian";
        case AnalyticTag::gbm: return "gbm";
        case AnalyticTag::ou: return "ou";
    }
    return "none";
}

namespace {

double eval_frozen(const Coefficient& c, const std::vector<double>& freeze, int i, double x) {
    thread_local std::vector<double> state;
    state.assign(freeze.begin(), freeze.end());
    state[i] = x;
    return c(state);
}

double d_frozen(const Coefficient& c, const std::vector<double>& freeze, int i, double x) {
    thread_local std::vector<double> state;
    state.assign(freeze.begin(), freeze.end());
    state[i] = x;
    return c.d_own(state);
}

bool is_zero_drift(const CoefficientSpec& s) {
    return s.name == "zero" || (s.name == "constant" && s.params.size() == 1 && s.params[0] == 0.0);
}

}  // namespace

double MarginalModel::mu(double x) const { return eval_frozen(drift, freeze_state, component, x); }
double MarginalModel::sigma(double x) const { return eval_frozen(diffusion, freeze_state, component, x); }
double MarginalModel::d_half_var(double x) const {
    return sigma(x) * d_frozen(diffusion, freeze_state, component, x);
}

MarginalModel make_marginal_model(const SdeSystem& sys, int i, std::vector<double> freeze, bool allow_analytic) {
    require(i >= 0 && i < sys.dim, ErrorKind::parameter, "marginal model: component out of range");
    if (freeze.empty()) freeze = sys.x0;
    require(static_cast<int>(freeze.size()) == sys.dim, ErrorKind::consistency,
            "marginal model: freeze state has the wrong dimension");
    MarginalModel m{i, sys.drift[i], sys.diffusion[i], std::move(freeze), sys.x0[i]};
    m.frozen = !sys.markov_flags[i];
    if (!allow_analytic || m.frozen) return m;

    const auto& ds = m.drift.spec();
    const auto& ss = m.diffusion.spec();
    if (ss.name == "constant" && ss.params[0] > 0.0) {
        if (is_zero_drift(ds) || ds.name == "constant") {
            m.tag = AnalyticTag::brownian;
            m.a = ds.name == "constant" ? ds.params[0] : 0.0;
            m.s = ss.params[0];
        } else if (ds.name == "ou" && ds.params[0] > 0.0) {
            m.tag = AnalyticTag::ou;
            m.theta = ds.params[0];
            m.mean = ds.params[1];
            m.s = ss.params[0];
        } else if (ds.name == "linear" && ds.params[1] < 0.0) {
            m.tag = AnalyticTag::ou;
            m.theta = -ds.params[1];
            m.mean = ds.params[0] / m.theta;
            m.s = ss.params[0];
        }
    } else if (ss.name == "gbm" && ss.params[0] > 0.0 && m.x0 > 0.0) {
        if (ds.name == "gbm" || is_zero_drift(ds)) {
            m.tag = AnalyticTag::gbm;
            m.a = ds.name == "gbm" ? ds.params[0] : 0.0;
            m.s = ss.params[0];
        }
    }
    if (m.tag == AnalyticTag::none) return m;

    // The tagged family must reproduce the coefficients.
    for (int k = -8; k <= 8; ++k) {
        const double x = m.tag == AnalyticTag::gbm ? m.x0 * std::exp(0.25 * k) : m.x0 + 0.5 * k;
        double mu = 0.0, sg = 0.0;
        switch (m.tag) {
            case AnalyticTag::brownian: mu = m.a; sg = m.s; break;
            case AnalyticTag::ou: mu = m.theta * (m.mean - x); sg = m.s; break;
            case AnalyticTag::gbm: mu = m.a * x; sg = m.s * x; break;
            case AnalyticTag::none: break;
        }
        const double tol = 1e-12 * std::max(1.0, std::abs(x));
        require(std::abs(m.mu(x) - mu) <= tol && std::abs(m.sigma(x) - sg) <= tol, ErrorKind::invariant,
                std::string("marginal model: coefficients do not match the ") + to_string(m.tag) + " family");
    }
    return m;
}

MarginalState analytic_marginal(const MarginalModel& m, double t, std::vector<double> x_grid) {
    require(m.tag != AnalyticTag::none, ErrorKind::precondition, "analytic marginal: model has no closed form");
    require(t > 0.0, ErrorKind::domain, "analytic marginal: t must be positive");
    std::vector<double> x0(m.freeze_state);
    if (!x0.empty()) x0[m.component] = m.x0;
    if (m.tag == AnalyticTag::gbm) {
        const double sd = m.s * std::sqrt(t);
        const double loc = std::log(m.x0) + (m.a - 0.5 * m.s * m.s) * t;
        return sample_marginal(
            m.component, std::move(x_grid),
            [&](double x) { return x <= 0.0 ? 0.0 : normal::cdf((std::log(x) - loc) / sd); },
            [&](double x) { return x <= 0.0 ? 0.0 : normal::pdf((std::log(x) - loc) / sd) / (x * sd); }, t,
            std::move(x0));
    }
    double mean = 0.0, sd = 0.0;
    if (m.tag == AnalyticTag::brownian) {
        mean = m.x0 + m.a * t;
        sd = m.s * std::sqrt(t);
    } else {
        const double e = std::exp(-m.theta * t);
        mean = m.mean + (m.x0 - m.mean) * e;
        sd = m.s * std::sqrt(-std::expm1(-2.0 * m.theta * t) / (2.0 * m.theta));
    }
    return sample_marginal(
        m.component, std::move(x_grid), [&](double x) { return normal::cdf((x - mean) / sd); },
        [&](double x) { return normal::pdf((x - mean) / sd) / sd; }, t, std::move(x0));
}

namespace {

double uniform_spacing(std::span<const double> x) {
    require(x.size() >= 5, ErrorKind::parameter, "marginal grid needs at least 5 points");
    const double dx = (x.back() - x.front()) / static_cast<double>(x.size() - 1);
    require(dx > 0.0, ErrorKind::parameter, "marginal grid must be increasing");
    for (std::size_t k = 1; k < x.size(); ++k)
        require(std::abs(x[k] - x[k - 1] - dx) <= 1e-9 * std::max(1.0, std::abs(dx) * x.size()),
                ErrorKind::parameter, "marginal solver requires a uniform x grid");
    return dx;
}

double trapezoid(std::span<const double> x, std::span<const double> f) {
    double s = 0.0;
    for (std::size_t k = 1; k < x.size(); ++k) s += 0.5 * (f[k] + f[k - 1]) * (x[k] - x[k - 1]);
    return s;
}

void cumulative_cdf(MarginalState& st) {
    st.F.assign(st.x.size(), 0.0);
    for (std::size_t k = 1; k < st.x.size(); ++k)
        st.F[k] = std::min(1.0, st.F[k - 1] + 0.5 * (st.f[k] + st.f[k - 1]) * (st.x[k] - st.x[k - 1]));
}

// Coefficients sampled once per grid: D = sigma^2/2 at nodes (with one ghost
// node at each end) and mu at cell faces.
struct FluxCoefficients {
    std::vector<double> D;       // size N + 2, index k + 1 holds node k
    std::vector<double> mu_mid;  // size N + 1, face between nodes k - 1 and k
    double max_var = 0.0;
    double max_abs_mu = 0.0;
};

FluxCoefficients sample_coefficients(const MarginalModel& m, std::span<const double> x, double dx) {
    const std::size_t N = x.size();
    FluxCoefficients c;
    c.D.resize(N + 2);
    c.mu_mid.resize(N + 1);
    for (std::size_t k = 0; k < N + 2; ++k) {
        const double xk = x.front() + (static_cast<double>(k) - 1.0) * dx;
        const double s = m.sigma(xk);
        c.D[k] = 0.5 * s * s;
        c.max_var = std::max(c.max_var, s * s);
    }
    for (std::size_t k = 0; k < N + 1; ++k) {
        const double xm = x.front() + (static_cast<double>(k) - 0.5) * dx;
        c.mu_mid[k] = m.mu(xm);
        c.max_abs_mu = std::max(c.max_abs_mu, std::abs(c.mu_mid[k]));
    }
    return c;
}

// out_k = -(J_{k+1/2} - J_{k-1/2}) / dx with f = 0 outside the grid.
void flux_divergence(const FluxCoefficients& c, std::span<const double> f, double dx, std::span<double> out) {
    const std::size_t N = f.size();
    auto fv = [&](std::ptrdiff_t k) { return (k < 0 || k >= static_cast<std::ptrdiff_t>(N)) ? 0.0 : f[k]; };
    double j_left = 0.0;
    for (std::size_t face = 0; face <= N; ++face) {
        const auto l = static_cast<std::ptrdiff_t>(face) - 1, r = static_cast<std::ptrdiff_t>(face);
        const double fl = fv(l), fr = fv(r);
        const double dl = c.D[face], dr = c.D[face + 1];
        const double mu = c.mu_mid[face];
        double adv;
        if (std::abs(mu) * dx <= dl + dr) {
            adv = mu * 0.5 * (fl + fr);
        } else {
            adv = mu > 0 ? mu * fl : mu * fr;
        }
        const double j = adv - (dr * fr - dl * fl) / dx;
        if (face > 0) out[face - 1] = -(j - j_left) / dx;
        j_left = j;
    }
}

double stable_dt(const FluxCoefficients& c, double dx, double cfl) {
    double dt = std::numeric_limits<double>::infinity();
    if (c.max_var > 0) dt = std::min(dt, cfl * dx * dx / c.max_var);
    if (c.max_abs_mu > 0) dt = std::min(dt, 0.5 * dx / c.max_abs_mu);
    return dt;
}

}  // namespace

std::vector<double> default_x_grid(const MarginalModel& m, double t_end, int points, double span) {
    require(t_end > 0.0, ErrorKind::domain, "default x grid: t_end must be positive");
    require(span > 0.0, ErrorKind::parameter, "default x grid: span must be positive");
    const double rt = std::sqrt(t_end);
    double lo = 0.0, hi = 0.0;
    switch (m.tag) {
        case AnalyticTag::brownian: {
            const double mean = m.x0 + m.a * t_end, sd = m.s * rt;
            lo = std::min(m.x0, mean) - span * sd;
            hi = std::max(m.x0, mean) + span * sd;
            break;
        }
        case AnalyticTag::ou: {
            const double mean = m.mean + (m.x0 - m.mean) * std::exp(-m.theta * t_end);
            const double sd = m.s * std::sqrt(-std::expm1(-2.0 * m.theta * t_end) / (2.0 * m.theta));
            lo = std::min(m.x0, mean) - span * sd;
            hi = std::max(m.x0, mean) + span * sd;
            break;
        }
        case AnalyticTag::gbm: {
            const double loc = (m.a - 0.5 * m.s * m.s) * t_end, w = span * m.s * rt;
            lo = m.x0 * std::exp(std::min(0.0, loc) - w);
            hi = m.x0 * std::exp(std::max(0.0, loc) + w);
            break;
        }
        case AnalyticTag::none: {
            const double s0 = m.sigma(m.x0);
            double s = s0;
            for (double k : {-3.0, 3.0}) s = std::max(s, m.sigma(m.x0 + k * s0 * rt));
            const double end = m.x0 + m.mu(m.x0) * t_end;
            const double half = s > 0.0 ? span * s * rt : 1.0;
            lo = std::min(m.x0, end) - half;
            hi = std::max(m.x0, end) + half;
            break;
        }
    }
    return linspace(lo, hi, points);
}

MarginalState initial_marginal(const MarginalModel& m, double t0, std::vector<double> x_grid) {
    require(t0 > 0.0, ErrorKind::domain, "initial marginal: t0 must be positive");
    const double dx = uniform_spacing(x_grid);
    const double mean = m.x0 + m.mu(m.x0) * t0;
    const double sd = std::max(m.sigma(m.x0) * std::sqrt(t0), 2.0 * dx);
    std::vector<double> x0(m.freeze_state);
    if (!x0.empty()) x0[m.component] = m.x0;
    MarginalState st = sample_marginal(
        m.component, std::move(x_grid), [&](double x) { return normal::cdf((x - mean) / sd); },
        [&](double x) { return normal::pdf((x - mean) / sd) / sd; }, t0, std::move(x0));
    const double mass = trapezoid(st.x, st.f);
    for (double& v : st.f) v /= mass;
    cumulative_cdf(st);
    return st;
}

int required_kfe_steps(const MarginalModel& m, double t0, double t1, std::span<const double> x_grid, double cfl) {
    const double dx = uniform_spacing(x_grid);
    const double dt = stable_dt(sample_coefficients(m, x_grid, dx), dx, cfl);
    if (!std::isfinite(dt)) return 1;
    return std::max(1, static_cast<int>(std::ceil((t1 - t0) / dt - 1e-9)));
}

MarginalState advance_marginal(const MarginalModel& m, const MarginalState& state, double t1, int steps,
                               const KfeOptions& options, KfeDiagnostics* diag) {
    validate_structure(state);
    const double t0 = state.time_stamp;
    require(t1 >= t0, ErrorKind::domain, "advance marginal: t1 precedes the state time");
    if (m.tag != AnalyticTag::none && options.use_analytic) {
        auto out = analytic_marginal(m, t1, state.x);
        out.x0 = state.x0;
        if (diag) *diag = {};
        return out;
    }
    MarginalState out = state;
    out.time_stamp = t1;
    if (t1 == t0) return out;

    const double dx = uniform_spacing(state.x);
    const FluxCoefficients c = sample_coefficients(m, state.x, dx);
    const double dt_max = stable_dt(c, dx, options.cfl);
    const int needed = std::isfinite(dt_max) ? std::max(1, static_cast<int>(std::ceil((t1 - t0) / dt_max - 1e-9))) : 1;
    if (steps <= 0) steps = needed;
    if (steps < needed) {
        std::ostringstream msg;
        msg << "marginal solver: " << steps << " steps violate the stability bound; at least " << needed
            << " steps are required";
        fail(ErrorKind::configuration, msg.str());
    }
    const double dt = (t1 - t0) / steps;
    const std::size_t N = state.x.size();
    std::vector<double> f = state.f, rate(N);
    KfeDiagnostics d;
    d.steps = steps;
    d.dt = dt;
    for (int s = 0; s < steps; ++s) {
        const double before = trapezoid(out.x, f);
        flux_divergence(c, f, dx, rate);
        for (std::size_t k = 0; k < N; ++k) {
            f[k] += dt * rate[k];
            if (f[k] < 0.0) {
                d.max_clip = std::max(d.max_clip, -f[k]);
                f[k] = 0.0;
            }
        }
        const double after = trapezoid(out.x, f);
        const double drift = std::abs(after - before);
        d.max_mass_drift = std::max(d.max_mass_drift, drift);
        if (drift > options.mass_tolerance) {
            std::ostringstream msg;
            msg << "marginal solver: mass drift " << drift << " at step " << s
                << " exceeds tolerance; widen the x grid";
            fail(ErrorKind::accuracy, msg.str());
        }
        require(after > 0.0, ErrorKind::accuracy, "marginal solver: density vanished");
        for (double& v : f) v /= after;
    }
    out.f = std::move(f);
    cumulative_cdf(out);
    if (diag) *diag = d;
    return out;
}

MarginalState solve_marginal_kfe(const MarginalModel& m, double t0, double t1, std::vector<double> x_grid,
                                 int steps, const KfeOptions& options, KfeDiagnostics* diag) {
    require(t1 >= t0, ErrorKind::domain, "solve_marginal_kfe: t1 precedes t0");
    if (m.tag != AnalyticTag::none && options.use_analytic) {
        if (diag) *diag = {};
        return analytic_marginal(m, t1, std::move(x_grid));
    }
    require(t0 > 0.0, ErrorKind::precondition,
            "solve_marginal_kfe: numerical solves start from t0 > 0 (short-time Gaussian)");
    return advance_marginal(m, initial_marginal(m, t0, std::move(x_grid)), t1, steps, options, diag);
}

OperatorField apply_A_star(std::span<const double> x_grid, std::span<const double> f, const MarginalModel& m,
                           double time_stamp) {
    require(x_grid.size() == f.size(), ErrorKind::consistency, "apply_A_star: size mismatch");
    const double dx = uniform_spacing(x_grid);
    const FluxCoefficients c = sample_coefficients(m, x_grid, dx);
    OperatorField out{std::vector<double>(x_grid.begin(), x_grid.end()), std::vector<double>(f.size()), time_stamp};
    flux_divergence(c, f, dx, out.values);
    return out;
}

namespace {

// First and second derivative at x[at] of the parabola through three nodes.
std::pair<double, double> parabola_derivs(const double* x, const double* y, int at) {
    const double x0 = x[0], x1 = x[1], x2 = x[2];
    const double d01 = (y[1] - y[0]) / (x1 - x0), d12 = (y[2] - y[1]) / (x2 - x1);
    const double second = 2.0 * (d12 - d01) / (x2 - x0);
    // p'(x) = d01 + (second / 2) (2x - x0 - x1)
    return {d01 + 0.5 * second * (2.0 * x[at] - x0 - x1), second};
}

}  // namespace

std::pair<double, double> cdf_derivatives_at(const MarginalState& F, std::size_t k) {
    const std::size_t N = F.x.size();
    const std::size_t c = std::clamp<std::size_t>(k, 1, N - 2);
    return parabola_derivs(&F.x[c - 1], &F.F[c - 1], static_cast<int>(k + 1 - c));
}

CdfDerivatives cdf_derivatives(const MarginalState& F) {
    validate_structure(F);
    const std::size_t N = F.x.size();
    require(N >= 3, ErrorKind::parameter, "cdf derivatives: need at least 3 nodes");
    CdfDerivatives d{std::vector<double>(N), std::vector<double>(N)};
    for (std::size_t k = 0; k < N; ++k) std::tie(d.first[k], d.second[k]) = cdf_derivatives_at(F, k);
    return d;
}

OperatorField apply_B_operator(const MarginalState& F, const MarginalModel& m) {
    const CdfDerivatives d = cdf_derivatives(F);
    OperatorField out{F.x, std::vector<double>(F.x.size()), F.time_stamp};
    for (std::size_t k = 0; k < F.x.size(); ++k) {
        const double x = F.x[k];
        const double s = m.sigma(x);
        out.values[k] = (m.d_half_var(x) - m.mu(x)) * d.first[k] + 0.5 * s * s * d.second[k];
    }
    return out;
}

MarginalState marginal_from_joint_kfe(const SdeSystem& sys, int component, double t0, double t1,
                                      const JointKfeOptions& opt) {
    require(sys.dim == 2, ErrorKind::unsupported, "joint forward solve supports n = 2 only");
    require(component == 0 || component == 1, ErrorKind::parameter, "joint forward solve: component out of range");
    require(t0 > 0.0 && t1 >= t0, ErrorKind::domain, "joint forward solve: need 0 < t0 <= t1");
    require(opt.points >= 11 && opt.span > 0.0 && opt.cfl > 0.0, ErrorKind::parameter,
            "joint forward solve: invalid options");
    const int P = opt.points;
    std::array<std::vector<double>, 2> ax;
    std::array<double, 2> h{};
    for (int i = 0; i < 2; ++i) {
        ax[i] = default_x_grid(make_marginal_model(sys, i, {}, false), t1, P, opt.span);
        h[i] = ax[i][1] - ax[i][0];
    }
    const std::size_t N = static_cast<std::size_t>(P) * P;
    auto at = [P](int a, int b) { return static_cast<std::size_t>(a) * P + b; };

    // Coefficients at the nodes: mu_i, D_i = sigma_i^2 / 2, c = rho sigma_0 sigma_1.
    std::vector<double> mu0(N), mu1(N), D0(N), D1(N), cx(N);
    double rate = 0.0;
    std::vector<double> x(2);
    for (int a = 0; a < P; ++a)
        for (int b = 0; b < P; ++b) {
            x[0] = ax[0][a];
            x[1] = ax[1][b];
            const auto m = sys.mu(x), s = sys.sigma(x);
            const std::size_t k = at(a, b);
            mu0[k] = m[0];
            mu1[k] = m[1];
            D0[k] = 0.5 * s[0] * s[0];
            D1[k] = 0.5 * s[1] * s[1];
            cx[k] = sys.rho(0, 1, x[0], x[1]) * s[0] * s[1];
            rate = std::max(rate, 2 * D0[k] / (h[0] * h[0]) + 2 * D1[k] / (h[1] * h[1]) +
                                      std::abs(cx[k]) / (h[0] * h[1]) + std::abs(m[0]) / h[0] +
                                      std::abs(m[1]) / h[1]);
        }

    // Short-time bivariate Gaussian with standard deviations floored at 2h.
    const auto m0 = sys.mu(sys.x0), s0 = sys.sigma(sys.x0);
    const double r0 = sys.rho(0, 1, sys.x0[0], sys.x0[1]);
    std::array<double, 2> mean{}, sd{};
    for (int i = 0; i < 2; ++i) {
        mean[i] = sys.x0[i] + m0[i] * t0;
        sd[i] = std::max(s0[i] * std::sqrt(t0), 2.0 * h[i]);
    }
    const double rr = std::clamp(r0, -0.99, 0.99);
    std::vector<double> f(N), g(N), out(N);
    for (int a = 0; a < P; ++a)
        for (int b = 0; b < P; ++b) {
            const double z0 = (ax[0][a] - mean[0]) / sd[0], z1 = (ax[1][b] - mean[1]) / sd[1];
            f[at(a, b)] = std::exp(-(z0 * z0 - 2 * rr * z0 * z1 + z1 * z1) / (2 * (1 - rr * rr)));
        }
    auto mass = [&](const std::vector<double>& v) {
        double sum = 0.0;
        for (double e : v) sum += e;
        return sum * h[0] * h[1];
    };
    const double m_init = mass(f);
    for (double& v : f) v /= m_init;

    const int steps = rate > 0.0 ? std::max(1, static_cast<int>(std::ceil((t1 - t0) * rate / opt.cfl))) : 1;
    const double dt = (t1 - t0) / steps;
    auto val = [&](const std::vector<double>& coef, int a, int b) {
        return (a < 0 || b < 0 || a >= P || b >= P) ? 0.0 : coef[at(a, b)] * f[at(a, b)];
    };
    for (int s = 0; s < steps; ++s) {
        for (int a = 0; a < P; ++a)
            for (int b = 0; b < P; ++b) {
                const double adv = (val(mu0, a + 1, b) - val(mu0, a - 1, b)) / (2 * h[0]) +
                                   (val(mu1, a, b + 1) - val(mu1, a, b - 1)) / (2 * h[1]);
                const double diff = (val(D0, a + 1, b) - 2 * val(D0, a, b) + val(D0, a - 1, b)) / (h[0] * h[0]) +
                                    (val(D1, a, b + 1) - 2 * val(D1, a, b) + val(D1, a, b - 1)) / (h[1] * h[1]);
                const double mixed = (val(cx, a + 1, b + 1) - val(cx, a + 1, b - 1) - val(cx, a - 1, b + 1) +
                                      val(cx, a - 1, b - 1)) /
                                     (4 * h[0] * h[1]);
                out[at(a, b)] = f[at(a, b)] + dt * (diff + mixed - adv);
            }
        for (double& v : out) v = std::max(v, 0.0);
        const double m = mass(out);
        require(m > 0.0 && std::isfinite(m), ErrorKind::accuracy, "joint forward solve: density vanished");
        for (double& v : out) v /= m;
        f.swap(out);
    }

    MarginalState st;
    st.component = component;
    st.x = ax[component];
    st.f.assign(P, 0.0);
    st.time_stamp = t1;
    st.x0 = sys.x0;
    for (int a = 0; a < P; ++a)
        for (int b = 0; b < P; ++b) st.f[component == 0 ? a : b] += f[at(a, b)] * h[1 - component];
    cumulative_cdf(st);
    return st;
}

}  // namespace dyncop
