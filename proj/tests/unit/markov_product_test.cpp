#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "dyncop/markov_product.hpp"
#include "helpers.hpp"

using namespace dyncop;
using testing_util::expect_error;
using testing_util::normal_margin;

namespace {

double sup_gap(const CopulaGrid& g, const BivariateCopulaFn& ref) {
    const Lattice& lat = g.lattice();
    double worst = 0.0;
    for (int i = 0; i < lat.resolution(); ++i)
        for (int j = 0; j < lat.resolution(); ++j) {
            const std::array<int, 2> k{i, j};
            worst = std::max(worst, std::abs(g.at(k) - ref.value(lat.coordinate(i), lat.coordinate(j))));
        }
    return worst;
}

BivariateCopulaFn fn(const ParametricCopula& c, double s = 0.0, double t = 1.0) { return {c, s, t}; }

}  // namespace

TEST(CopulaProduct, ProductCopulaAnnihilatesFromBothSides) {
    const auto pi = fn(ParametricCopula::product(2));
    for (const auto& c : {ParametricCopula::gaussian(0.6), ParametricCopula::min(2), ParametricCopula::max_bound(2),
                          ParametricCopula::gaussian(-0.3)}) {
        EXPECT_LE(sup_gap(copula_product(pi, fn(c)), pi), 1e-9);
        EXPECT_LE(sup_gap(copula_product(fn(c), pi), pi), 1e-9);
    }
}

TEST(CopulaProduct, MinCopulaIsTwoSidedIdentity) {
    const auto m = fn(ParametricCopula::min(2));
    for (const auto& c : {ParametricCopula::gaussian(0.6), ParametricCopula::product(2),
                          ParametricCopula::max_bound(2), ParametricCopula::gaussian(-0.8)}) {
        EXPECT_LE(sup_gap(copula_product(m, fn(c)), fn(c)), 1e-9) << to_string(c.family());
        EXPECT_LE(sup_gap(copula_product(fn(c), m), fn(c)), 1e-9) << to_string(c.family());
    }
}

TEST(CopulaProduct, BrownianCompositionMatchesGaussianOracle) {
    // Copula of (B(s), B(t)) is Gaussian with correlation sqrt(s/t).
    const double s = 0.25, u = 0.5, t = 1.0;
    ProductOptions opt;
    opt.resolution = 21;
    const auto g = copula_product(fn(ParametricCopula::gaussian(std::sqrt(s / u)), s, u),
                                  fn(ParametricCopula::gaussian(std::sqrt(u / t)), u, t), opt);
    double worst = 0.0;
    for (int i = 0; i < 21; ++i)
        for (int j = 0; j < 21; ++j) {
            const std::array<int, 2> k{i, j};
            const double ref = oracle::gaussian_copula(i / 20.0, j / 20.0, std::sqrt(s / t));
            worst = std::max(worst, std::abs(g.at(k) - ref));
        }
    EXPECT_LE(worst, 1e-3);
}

TEST(CopulaProduct, BrownianCompositionWithGridInputs) {
    const auto a = sample_copula(ParametricCopula::gaussian(std::sqrt(0.5)), 101);
    const auto b = sample_copula(ParametricCopula::gaussian(std::sqrt(0.5)), 101);
    const auto g = copula_product(BivariateCopulaFn(a, 0.25, 0.5), BivariateCopulaFn(b, 0.5, 1.0));
    EXPECT_LE(sup_gap(g, fn(ParametricCopula::gaussian(0.5))), 1e-3);
}

TEST(CopulaProduct, OutputSatisfiesCopulaAxioms) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> R(-0.95, 0.95);
    for (int rep = 0; rep < 4; ++rep) {
        ProductOptions opt;
        opt.resolution = 41;
        const auto g = copula_product(fn(ParametricCopula::gaussian(R(rng))), fn(ParametricCopula::gaussian(R(rng))), opt);
        const auto r = check_copula_axioms(g);
        EXPECT_TRUE(r.all_pass()) << r.n_increasing.worst << " " << r.margins.worst;
    }
}

TEST(CopulaProduct, IsAssociativeForGaussianInputs) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> R(-0.9, 0.9);
    for (int rep = 0; rep < 3; ++rep) {
        const auto a = fn(ParametricCopula::gaussian(R(rng))), b = fn(ParametricCopula::gaussian(R(rng))),
                   c = fn(ParametricCopula::gaussian(R(rng)));
        ProductOptions opt;
        opt.resolution = 51;
        const auto ab = copula_product(a, b, opt);
        const auto bc = copula_product(b, c, opt);
        const auto left = copula_product(BivariateCopulaFn(ab, 0, 1), c, opt);
        const auto right = copula_product(a, BivariateCopulaFn(bc, 0, 1), opt);
        double worst = 0.0;
        for (std::size_t i = 0; i < left.values().size(); ++i)
            worst = std::max(worst, std::abs(left[i] - right[i]));
        EXPECT_LE(worst, 2e-3);
    }
}

TEST(CopulaProduct, RejectsInputsFailingAxioms) {
    const auto g = sample_copula(ParametricCopula::product(2), 21);
    std::vector<double> v(g.values().begin(), g.values().end());
    const std::array<int, 2> k{10, 10};
    v[g.lattice().index(k)] += 0.2;
    const BivariateCopulaFn bad(CopulaGrid(g.lattice(), v), 0, 1);
    expect_error(ErrorKind::precondition, [&] { copula_product(bad, fn(ParametricCopula::product(2))); });
    expect_error(ErrorKind::precondition, [&] { copula_product(fn(ParametricCopula::product(2)), bad); });
    ProductOptions opt;
    opt.quad_points = 8;
    expect_error(ErrorKind::precondition,
                 [&] { copula_product(fn(ParametricCopula::product(2)), fn(ParametricCopula::min(2)), opt); });
}

TEST(CopulaProduct, RejectsNonBivariateOrBackwardTimes) {
    expect_error(ErrorKind::parameter, [] { BivariateCopulaFn(ParametricCopula::product(3), 0, 1); });
    expect_error(ErrorKind::parameter, [] { BivariateCopulaFn(ParametricCopula::product(2), 1, 1); });
}

TEST(ChapmanKolmogorov, TrivialTriplesHaveZeroResidual) {
    const auto pi = ParametricCopula::product(2), m = ParametricCopula::min(2);
    EXPECT_LE(chapman_kolmogorov_residual(fn(pi, 0, 1), fn(pi, 1, 2), fn(pi, 0, 2)), 1e-9);
    EXPECT_LE(chapman_kolmogorov_residual(fn(m, 0, 1), fn(m, 1, 2), fn(m, 0, 2)), 1e-9);
}

TEST(ChapmanKolmogorov, BrownianTripleResidual) {
    const double s = 0.25, u = 0.5, t = 1.0;
    const double r = chapman_kolmogorov_residual(fn(ParametricCopula::gaussian(std::sqrt(s / u)), s, u),
                                                 fn(ParametricCopula::gaussian(std::sqrt(u / t)), u, t),
                                                 fn(ParametricCopula::gaussian(std::sqrt(s / t)), s, t));
    EXPECT_LE(r, 1e-3);
    // A wrong endpoint copula is detected.
    const double wrong = chapman_kolmogorov_residual(fn(ParametricCopula::gaussian(std::sqrt(s / u)), s, u),
                                                     fn(ParametricCopula::gaussian(std::sqrt(u / t)), u, t),
                                                     fn(ParametricCopula::gaussian(0.8), s, t));
    EXPECT_GT(wrong, 1e-2);
}

TEST(ChapmanKolmogorov, RejectsInconsistentTimes) {
    const auto pi = ParametricCopula::product(2);
    expect_error(ErrorKind::precondition,
                 [&] { chapman_kolmogorov_residual(fn(pi, 0, 1), fn(pi, 1.5, 2), fn(pi, 0, 2)); });
}

TEST(Transition, ComonotoneChainIsCertain) {
    const auto mi = normal_margin(1.0, 4001, 8.0, 0.5), mj = normal_margin(1.0, 4001, 8.0, 1.0);
    const BivariateCopulaFn m(ParametricCopula::min(2), 0.5, 1.0);
    EXPECT_NEAR(transition_from_copula(m, mi, mj, 0.4, 0.1), 1.0, 1e-12);
    EXPECT_NEAR(transition_from_copula(m, mi, mj, -0.4, 0.1), 0.0, 1e-12);
}

TEST(Transition, IndependenceIgnoresConditioning) {
    const auto mi = normal_margin(1.0, 4001, 8.0, 0.5), mj = normal_margin(2.0, 4001, 8.0, 1.0);
    const BivariateCopulaFn pi(ParametricCopula::product(2), 0.5, 1.0);
    for (double xj : {-1.0, 0.0, 2.5})
        EXPECT_NEAR(transition_from_copula(pi, mi, mj, 0.7, xj), cdf_at(mi, 0.7), 1e-12);
}

TEST(Transition, BrownianBridgeOracle) {
    const double s = 0.5, t = 1.0, xi = 0.3, xj = -0.2;
    const auto mi = normal_margin(std::sqrt(s), 8001, 8.0, s), mj = normal_margin(std::sqrt(t), 8001, 8.0, t);
    const BivariateCopulaFn c(ParametricCopula::gaussian(std::sqrt(s / t)), s, t);
    const double ref = oracle::Phi((xi - xj * s / t) / std::sqrt(s * (t - s) / t));
    EXPECT_NEAR(transition_from_copula(c, mi, mj, xi, xj), ref, 1e-4);
}

TEST(Transition, GridCopulaMatchesBridgeOracle) {
    const double s = 0.5, t = 1.0, xi = 0.3, xj = -0.2;
    const auto mi = normal_margin(std::sqrt(s), 8001, 8.0, s), mj = normal_margin(std::sqrt(t), 8001, 8.0, t);
    const BivariateCopulaFn c(sample_copula(ParametricCopula::gaussian(std::sqrt(s / t)), 401), s, t);
    const double ref = oracle::Phi((xi - xj * s / t) / std::sqrt(s * (t - s) / t));
    EXPECT_NEAR(transition_from_copula(c, mi, mj, xi, xj), ref, 5e-3);
}

TEST(Transition, BoundedAndMonotoneInTarget) {
    const auto mi = normal_margin(1.0, 2001, 8.0, 0.5), mj = normal_margin(1.0, 2001, 8.0, 1.0);
    for (const auto& c : {ParametricCopula::gaussian(0.7), ParametricCopula::gaussian(-0.5),
                          ParametricCopula::max_bound(2)}) {
        const BivariateCopulaFn fc(c, 0.5, 1.0);
        for (double xj : {-1.5, 0.0, 0.8}) {
            double prev = -1.0;
            for (double xi = -4.0; xi <= 4.0; xi += 0.05) {
                const double p = transition_from_copula(fc, mi, mj, xi, xj);
                EXPECT_GE(p, 0.0);
                EXPECT_LE(p, 1.0);
                EXPECT_GE(p, prev - 1e-12);
                prev = p;
            }
        }
    }
}

TEST(Transition, ZeroDensityConditioningIsDegenerate) {
    const auto mi = normal_margin(1.0, 2001, 8.0, 0.5), mj = normal_margin(1.0, 2001, 8.0, 1.0);
    const BivariateCopulaFn c(ParametricCopula::gaussian(0.5), 0.5, 1.0);
    expect_error(ErrorKind::degenerate, [&] { transition_from_copula(c, mi, mj, 0.0, 20.0); });
    const BivariateCopulaFn late(ParametricCopula::gaussian(0.5), 0.25, 1.0);
    expect_error(ErrorKind::consistency, [&] { transition_from_copula(late, mi, mj, 0.0, 0.0); });
}

TEST(MarkovJoint, IndependentChainFactorizes) {
    std::vector<MarginalState> ms{normal_margin(0.5, 2001, 8.0, 0.25), normal_margin(0.7, 2001, 8.0, 0.5),
                                  normal_margin(1.0, 2001, 8.0, 1.0)};
    std::vector<BivariateCopulaFn> cs{fn(ParametricCopula::product(2), 0.25, 0.5),
                                      fn(ParametricCopula::product(2), 0.5, 1.0)};
    const std::array<double, 3> x{0.1, -0.3, 0.4};
    const double ref = oracle::Phi(0.1 / 0.5) * oracle::Phi(-0.3 / 0.7) * oracle::Phi(0.4);
    EXPECT_NEAR(markov_joint(cs, ms, x), ref, 1e-6);
}

TEST(MarkovJoint, ComonotoneChainReturnsCommonLevel) {
    std::vector<MarginalState> ms{normal_margin(1.0, 4001, 8.0, 0.25), normal_margin(1.0, 4001, 8.0, 0.5),
                                  normal_margin(1.0, 4001, 8.0, 1.0)};
    std::vector<BivariateCopulaFn> cs{fn(ParametricCopula::min(2), 0.25, 0.5), fn(ParametricCopula::min(2), 0.5, 1.0)};
    const double x = oracle::Phi_inv(0.37);
    const std::array<double, 3> xs{x, x, x};
    EXPECT_NEAR(markov_joint(cs, ms, xs), 0.37, 1e-6);
}

TEST(MarkovJoint, BrownianChainMatchesHandFormula) {
    // The displayed product-of-copulas formula evaluated directly from the
    // oracle's bivariate normal.
    const std::array<double, 3> t{0.25, 0.5, 1.0}, x{0.0, 0.1, 0.2};
    std::vector<MarginalState> ms;
    for (double ti : t) ms.push_back(normal_margin(std::sqrt(ti), 8001, 8.0, ti));
    std::vector<BivariateCopulaFn> cs{fn(ParametricCopula::gaussian(std::sqrt(t[0] / t[1])), t[0], t[1]),
                                      fn(ParametricCopula::gaussian(std::sqrt(t[1] / t[2])), t[1], t[2])};
    const double c12 = oracle::bvn(x[0] / std::sqrt(t[0]), x[1] / std::sqrt(t[1]), std::sqrt(t[0] / t[1]));
    const double c23 = oracle::bvn(x[1] / std::sqrt(t[1]), x[2] / std::sqrt(t[2]), std::sqrt(t[1] / t[2]));
    const double ref = c12 * c23 / oracle::Phi(x[1] / std::sqrt(t[1]));
    EXPECT_NEAR(markov_joint(cs, ms, x), ref, 1e-6);
}

TEST(MarkovJoint, ZeroInteriorProbabilityIsDegenerate) {
    std::vector<MarginalState> ms{normal_margin(1.0, 2001, 8.0, 0.25), normal_margin(1.0, 2001, 8.0, 0.5),
                                  normal_margin(1.0, 2001, 8.0, 1.0)};
    std::vector<BivariateCopulaFn> cs{fn(ParametricCopula::product(2), 0.25, 0.5),
                                      fn(ParametricCopula::product(2), 0.5, 1.0)};
    ms[1].F.front() = 0.0;
    const std::array<double, 3> x{0.0, -50.0, 0.0};
    expect_error(ErrorKind::degenerate, [&] { markov_joint(cs, ms, x); });
    const std::array<double, 2> short_x{0.0, 0.0};
    expect_error(ErrorKind::consistency, [&] { markov_joint(cs, ms, short_x); });
}
