#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "dyncop/marginal_solver.hpp"
#include "helpers.hpp"

using namespace dyncop;
using testing_util::expect_error;

namespace {

Coefficient drift(int i, const std::string& name, std::vector<double> p = {}, int other = -1) {
    return Coefficient::from_spec(CoefficientRole::drift, i, {name, std::move(p), other});
}

Coefficient diffusion(int i, const std::string& name, std::vector<double> p = {}, int other = -1) {
    return Coefficient::from_spec(CoefficientRole::diffusion, i, {name, std::move(p), other});
}

SdeSystem one_dim(double x0, Coefficient mu, Coefficient sigma) {
    return make_system({x0}, {std::move(mu)}, {std::move(sigma)}, CorrelationField::independent());
}

double sup_cdf_error(const MarginalState& m, double mean, double sd) {
    double worst = 0.0;
    for (std::size_t k = 0; k < m.x.size(); ++k)
        worst = std::max(worst, std::abs(m.F[k] - oracle::Phi((m.x[k] - mean) / sd)));
    return worst;
}

double sup_pdf_error(const MarginalState& m, double mean, double sd) {
    double worst = 0.0;
    for (std::size_t k = 0; k < m.x.size(); ++k)
        worst = std::max(worst, std::abs(m.f[k] - oracle::phi((m.x[k] - mean) / sd) / sd));
    return worst;
}

double integral(const std::vector<double>& x, const std::vector<double>& f) {
    double s = 0.0;
    for (std::size_t k = 1; k < x.size(); ++k) s += 0.5 * (f[k] + f[k - 1]) * (x[k] - x[k - 1]);
    return s;
}

KfeOptions numeric() {
    KfeOptions o;
    o.use_analytic = false;
    return o;
}

}  // namespace

TEST(MarginalModel, DetectsClosedFormFamilies) {
    EXPECT_EQ(make_marginal_model(one_dim(0, drift(0, "zero"), diffusion(0, "constant", {1})), 0).tag,
              AnalyticTag::brownian);
    EXPECT_EQ(make_marginal_model(one_dim(0, drift(0, "ou", {1, 0}), diffusion(0, "constant", {1})), 0).tag,
              AnalyticTag::ou);
    EXPECT_EQ(make_marginal_model(one_dim(0, drift(0, "linear", {0.5, -2}), diffusion(0, "constant", {1})), 0).tag,
              AnalyticTag::ou);
    EXPECT_EQ(make_marginal_model(one_dim(1, drift(0, "gbm", {0.05}), diffusion(0, "gbm", {0.2})), 0).tag,
              AnalyticTag::gbm);
    EXPECT_EQ(make_marginal_model(one_dim(0, drift(0, "zero"), diffusion(0, "tanh_modulated", {1, 0.3})), 0).tag,
              AnalyticTag::none);
    EXPECT_EQ(make_marginal_model(one_dim(0, drift(0, "zero"), diffusion(0, "constant", {1})), 0, {}, false).tag,
              AnalyticTag::none);
    auto coupled = make_system({0, 1}, {drift(0, "coupled_linear", {0, -1, 0.5}, 1), drift(1, "zero")},
                               {diffusion(0, "constant", {1}), diffusion(1, "constant", {1})},
                               CorrelationField::independent());
    const auto m = make_marginal_model(coupled, 0);
    EXPECT_TRUE(m.frozen);
    EXPECT_EQ(m.tag, AnalyticTag::none);
    EXPECT_DOUBLE_EQ(m.mu(0.0), 0.5);  // other component frozen at its x0 = 1
    const auto moved = make_marginal_model(coupled, 0, {0.0, 3.0});
    EXPECT_DOUBLE_EQ(moved.mu(0.0), 1.5);
}

TEST(MarginalModel, GbmClosedFormMatchesLognormal) {
    const auto m = make_marginal_model(one_dim(2.0, drift(0, "gbm", {0.1}), diffusion(0, "gbm", {0.3})), 0);
    const double t = 1.5;
    const auto st = analytic_marginal(m, t, linspace(0.05, 10, 400));
    const double loc = std::log(2.0) + (0.1 - 0.045) * t, sd = 0.3 * std::sqrt(t);
    for (std::size_t k = 0; k < st.x.size(); ++k)
        EXPECT_NEAR(st.F[k], oracle::Phi((std::log(st.x[k]) - loc) / sd), 1e-12);
}

TEST(Kfe, BrownianCdfMatchesNormal) {
    const auto m = make_marginal_model(one_dim(0, drift(0, "zero"), diffusion(0, "constant", {1})), 0);
    KfeDiagnostics d;
    const auto st = solve_marginal_kfe(m, 0.01, 1.0, default_x_grid(m, 1.0), 0, numeric(), &d);
    EXPECT_LE(sup_cdf_error(st, 0.0, 1.0), 1e-4);
    EXPECT_LE(d.max_mass_drift, 1e-7);
    EXPECT_GT(d.steps, 0);
}

TEST(Kfe, OrnsteinUhlenbeckReachesStationaryLaw) {
    const auto m = make_marginal_model(one_dim(1.5, drift(0, "ou", {1, 0}), diffusion(0, "constant", {std::sqrt(2.0)})), 0);
    const auto st = solve_marginal_kfe(m, 0.01, 8.0, linspace(-7, 7, 1401), 0, numeric());
    EXPECT_LE(sup_pdf_error(st, 0.0, 1.0), 1e-3);
}

TEST(Kfe, AnalyticTagShortCircuits) {
    const auto m = make_marginal_model(one_dim(0.5, drift(0, "ou", {2, 1}), diffusion(0, "constant", {0.5})), 0);
    const auto st = solve_marginal_kfe(m, 0.0, 1.0, linspace(-2, 4, 301), 0);
    const double mean = 1 + (0.5 - 1) * std::exp(-2.0), sd = 0.5 * std::sqrt((1 - std::exp(-4.0)) / 4);
    EXPECT_LE(sup_cdf_error(st, mean, sd), 1e-13);
}

TEST(Kfe, NoDynamicsKeepsInitialSurrogate) {
    const auto m = make_marginal_model(one_dim(0.7, drift(0, "zero"), diffusion(0, "zero")), 0);
    const auto grid = linspace(-1, 2.4, 341);
    const auto init = initial_marginal(m, 0.05, grid);
    // sigma = 0: the surrogate width is floored at two grid spacings.
    double mean = 0.0, var = 0.0;
    for (std::size_t k = 0; k < grid.size(); ++k) mean += grid[k] * init.f[k] * 0.01;
    for (std::size_t k = 0; k < grid.size(); ++k) var += (grid[k] - mean) * (grid[k] - mean) * init.f[k] * 0.01;
    EXPECT_NEAR(mean, 0.7, 1e-9);
    EXPECT_NEAR(std::sqrt(var), 0.02, 1e-4);
    const auto st = advance_marginal(m, init, 1.0, 0, numeric());
    for (std::size_t k = 0; k < grid.size(); ++k) EXPECT_NEAR(st.f[k], init.f[k], 1e-12);
    EXPECT_EQ(st.time_stamp, 1.0);
}

TEST(Kfe, MassPositivityAndRenormalization) {
    const auto m = make_marginal_model(
        one_dim(0.2, drift(0, "linear", {0.3, -0.5}), diffusion(0, "tanh_modulated", {0.8, 0.4})), 0);
    EXPECT_EQ(m.tag, AnalyticTag::none);
    KfeDiagnostics d;
    const auto st = solve_marginal_kfe(m, 0.02, 2.0, default_x_grid(m, 2.0), 0, numeric(), &d);
    EXPECT_LE(d.max_mass_drift, 1e-7);
    EXPECT_NEAR(integral(st.x, st.f), 1.0, 1e-6);
    for (double v : st.f) EXPECT_GE(v, -1e-12);
    EXPECT_TRUE(check_marginal(st).all_pass());
}

TEST(Kfe, SecondOrderSpatialConvergence) {
    const auto m = make_marginal_model(one_dim(0, drift(0, "zero"), diffusion(0, "constant", {1})), 0);
    const auto init_exact = [&](int points) {
        const auto grid = linspace(-8, 8, points);
        return sample_marginal(0, grid, [](double x) { return oracle::Phi(x / 0.5); },
                               [](double x) { return oracle::phi(x / 0.5) / 0.5; }, 0.25);
    };
    double err[2];
    for (int r = 0; r < 2; ++r) {
        const int points = r == 0 ? 81 : 161;
        const auto st = advance_marginal(m, init_exact(points), 1.0, 0, numeric());
        err[r] = sup_cdf_error(st, 0.0, 1.0);
    }
    EXPECT_GE(err[0] / err[1], 3.5) << err[0] << " " << err[1];
}

TEST(Kfe, TooFewStepsIsConfigurationError) {
    const auto m = make_marginal_model(one_dim(0, drift(0, "zero"), diffusion(0, "constant", {1})), 0);
    try {
        solve_marginal_kfe(m, 0.01, 1.0, default_x_grid(m, 1.0), 10, numeric());
        ADD_FAILURE() << "no error raised";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::configuration);
        EXPECT_NE(std::string(e.what()).find("steps"), std::string::npos);
    }
    const int need = required_kfe_steps(m, 0.01, 1.0, default_x_grid(m, 1.0));
    EXPECT_NO_THROW(solve_marginal_kfe(m, 0.01, 1.0, default_x_grid(m, 1.0), need, numeric()));
}

TEST(Kfe, MassLossThroughNarrowGridIsAccuracyError) {
    const auto m = make_marginal_model(one_dim(0, drift(0, "zero"), diffusion(0, "constant", {1})), 0);
    KfeOptions o = numeric();
    o.mass_tolerance = 1e-7;
    expect_error(ErrorKind::accuracy, [&] { solve_marginal_kfe(m, 0.1, 1.0, linspace(-1, 1, 201), 0, o); });
}

TEST(Kfe, NumericalSolveNeedsPositiveStart) {
    const auto m = make_marginal_model(one_dim(0, drift(0, "zero"), diffusion(0, "tanh_modulated", {1, 0.2})), 0);
    expect_error(ErrorKind::precondition, [&] { solve_marginal_kfe(m, 0.0, 1.0, linspace(-8, 8, 201), 0); });
}

TEST(OperatorB, BrownianValueAtOne) {
    const auto m = make_marginal_model(one_dim(0, drift(0, "zero"), diffusion(0, "constant", {1})), 0);
    const auto F = analytic_marginal(m, 1.0, linspace(-8, 8, 16001));
    const auto B = apply_B_operator(F, m);
    const auto k = static_cast<std::size_t>(9000);  // x = 1
    ASSERT_NEAR(B.x[k], 1.0, 1e-12);
    EXPECT_NEAR(B.values[k], -0.5 * 1.0 * oracle::phi(1.0), 1e-6);
    EXPECT_NEAR(B.values[k], -0.12099, 1e-5);
}

TEST(OperatorB, VanishesWhereCdfIsLinear) {
    const auto m = make_marginal_model(one_dim(0, drift(0, "zero"), diffusion(0, "constant", {0.7})), 0);
    // Uniform density on [-1, 1].
    const auto F = sample_marginal(0, linspace(-2, 2, 401), [](double x) { return std::clamp(0.5 * (x + 1), 0.0, 1.0); },
                                   [](double x) { return std::abs(x) <= 1 ? 0.5 : 0.0; }, 1.0);
    const auto B = apply_B_operator(F, m);
    for (std::size_t k = 0; k < F.x.size(); ++k)
        if (std::abs(std::abs(F.x[k]) - 1.0) > 0.02) EXPECT_NEAR(B.values[k], 0.0, 1e-9) << F.x[k];
}

TEST(OperatorB, EqualsTimeDerivativeOfSolvedCdf) {
    const auto m = make_marginal_model(one_dim(0, drift(0, "zero"), diffusion(0, "constant", {1})), 0);
    const auto grid = default_x_grid(m, 1.1);
    const auto F0 = solve_marginal_kfe(m, 0.01, 0.99, grid, 0, numeric());
    const auto F1 = solve_marginal_kfe(m, 0.01, 1.0, grid, 0, numeric());
    const auto F2 = solve_marginal_kfe(m, 0.01, 1.01, grid, 0, numeric());
    const auto B = apply_B_operator(F1, m);
    double worst = 0.0;
    for (std::size_t k = 0; k < grid.size(); ++k)
        worst = std::max(worst, std::abs((F2.F[k] - F0.F[k]) / 0.02 - B.values[k]));
    EXPECT_LE(worst, 1e-3);
}

TEST(OperatorAStar, StationaryOrnsteinUhlenbeckDensity) {
    const auto m = make_marginal_model(one_dim(0, drift(0, "ou", {1, 0}), diffusion(0, "constant", {std::sqrt(2.0)})), 0);
    const auto x = linspace(-8, 8, 1601);
    std::vector<double> f(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) f[k] = oracle::phi(x[k]);
    const auto a = apply_A_star(x, f, m);
    double worst = 0.0;
    for (double v : a.values) worst = std::max(worst, std::abs(v));
    EXPECT_LE(worst, 1e-3);
}

TEST(OperatorAStar, PlateauInteriorAndConservation) {
    const auto m = make_marginal_model(one_dim(0, drift(0, "zero"), diffusion(0, "constant", {0.9})), 0);
    const auto x = linspace(-3, 3, 601);
    std::vector<double> f(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) f[k] = std::abs(x[k]) <= 1.0 ? 0.5 : 0.0;
    const auto a = apply_A_star(x, f, m);
    for (std::size_t k = 0; k < x.size(); ++k)
        if (std::abs(x[k]) < 0.95) EXPECT_NEAR(a.values[k], 0.0, 1e-12);
    double total = 0.0;
    for (double v : a.values) total += v * 0.01;
    EXPECT_NEAR(total, 0.0, 1e-12);
}

TEST(OperatorAStar, DualToGenerator) {
    // <A* f, G> against <f, A G>, A G = mu G' + sigma^2/2 G''.
    const auto m = make_marginal_model(
        one_dim(0, drift(0, "linear", {0.2, -0.7}), diffusion(0, "tanh_modulated", {0.9, 0.3})), 0);
    const auto x = linspace(-8, 8, 3201);
    std::vector<double> f(x.size()), G(x.size()), AG(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double z = (x[k] - 0.4) / 0.8;
        f[k] = oracle::phi(z) / 0.8;
        const double g = std::exp(-x[k] * x[k] / 2);
        G[k] = g;
        const double s = m.sigma(x[k]);
        AG[k] = m.mu(x[k]) * (-x[k] * g) + 0.5 * s * s * (x[k] * x[k] - 1) * g;
    }
    const auto a = apply_A_star(x, f, m);
    std::vector<double> lhs(x.size()), rhs(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
        lhs[k] = a.values[k] * G[k];
        rhs[k] = f[k] * AG[k];
    }
    EXPECT_LE(std::abs(integral(x, lhs) - integral(x, rhs)), 1e-3);
}

TEST(JointKfe, IndependentMarkovComponentsMatchClosedForm) {
    auto sys = make_system({0.0, 0.5}, {drift(0, "zero"), drift(1, "ou", {1, 0})},
                           {diffusion(0, "constant", {1}), diffusion(1, "constant", {0.8})},
                           CorrelationField::constant(0.6));
    const auto m0 = marginal_from_joint_kfe(sys, 0, 0.25, 1.0);
    EXPECT_LE(sup_cdf_error(m0, 0.0, 1.0), 2e-3);
    // The short-time start is not the exact OU law at t0, so the OU component
    // is compared with the one-dimensional solve from the same start.
    const auto m1 = marginal_from_joint_kfe(sys, 1, 0.25, 1.0);
    const auto ref = solve_marginal_kfe(make_marginal_model(sys, 1), 0.25, 1.0, m1.x, 0, numeric());
    double worst = 0.0;
    for (std::size_t k = 0; k < m1.x.size(); ++k) worst = std::max(worst, std::abs(m1.F[k] - ref.F[k]));
    EXPECT_LE(worst, 2e-3);
}

TEST(JointKfe, CoupledDriftMatchesLyapunovOracleBetterThanFreezing) {
    // dX = (-X + 0.5 Y) dt + dB1, dY = dB2, rho = 0.4: a Gaussian process whose
    // mean m and covariance P solve m' = A m, P' = A P + P A^T + Q.
    const double r = 0.4, t0 = 0.25, t1 = 1.0;
    auto sys = make_system({0.0, 1.0}, {drift(0, "coupled_linear", {0, -1, 0.5}, 1), drift(1, "zero")},
                           {diffusion(0, "constant", {1}), diffusion(1, "constant", {1})},
                           CorrelationField::constant(r));
    double m[2] = {0.5 * t0, 1.0};
    double P[2][2] = {{t0, r * t0}, {r * t0, t0}};
    const double A[2][2] = {{-1, 0.5}, {0, 0}}, Q[2][2] = {{1, r}, {r, 1}};
    const int n = 20000;
    const double h = (t1 - t0) / n;
    for (int s = 0; s < n; ++s) {
        // Linear ODE: midpoint rule is ample at this step size.
        auto rhs = [&](const double mm[2], const double PP[2][2], double dm[2], double dP[2][2]) {
            for (int i = 0; i < 2; ++i) {
                dm[i] = A[i][0] * mm[0] + A[i][1] * mm[1];
                for (int j = 0; j < 2; ++j) {
                    double v = Q[i][j];
                    for (int k = 0; k < 2; ++k) v += A[i][k] * PP[k][j] + PP[i][k] * A[j][k];
                    dP[i][j] = v;
                }
            }
        };
        double dm[2], dP[2][2], mh[2], Ph[2][2];
        rhs(m, P, dm, dP);
        for (int i = 0; i < 2; ++i) {
            mh[i] = m[i] + 0.5 * h * dm[i];
            for (int j = 0; j < 2; ++j) Ph[i][j] = P[i][j] + 0.5 * h * dP[i][j];
        }
        rhs(mh, Ph, dm, dP);
        for (int i = 0; i < 2; ++i) {
            m[i] += h * dm[i];
            for (int j = 0; j < 2; ++j) P[i][j] += h * dP[i][j];
        }
    }
    const auto joint = marginal_from_joint_kfe(sys, 0, t0, t1);
    const double exact_err = sup_cdf_error(joint, m[0], std::sqrt(P[0][0]));
    EXPECT_LE(exact_err, 3e-3);

    const auto frozen = make_marginal_model(sys, 0);
    const auto approx = solve_marginal_kfe(frozen, t0, t1, joint.x, 0, numeric());
    const double frozen_err = sup_cdf_error(approx, m[0], std::sqrt(P[0][0]));
    EXPECT_GT(frozen_err, 3 * exact_err);
}

TEST(JointKfe, RejectsOtherDimensions) {
    auto sys = make_system({0, 0, 0}, {drift(0, "zero"), drift(1, "zero"), drift(2, "zero")},
                           {diffusion(0, "constant", {1}), diffusion(1, "constant", {1}), diffusion(2, "constant", {1})},
                           CorrelationField::independent());
    expect_error(ErrorKind::unsupported, [&] { marginal_from_joint_kfe(sys, 0, 0.25, 1.0); });
}
