#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dyncop/lattice.hpp"

namespace dyncop {

/// Copula values C(t, u) sampled on a uniform lattice over [0,1]^n.
class CopulaGrid {
public:
    CopulaGrid() = default;
    CopulaGrid(Lattice lattice, std::vector<double> values, double time_stamp = 0.0);

    const Lattice& lattice() const noexcept { return lattice_; }
    int dim() const noexcept { return lattice_.dim(); }
    int resolution() const noexcept { return lattice_.resolution(); }
    double time_stamp() const noexcept { return time_stamp_; }
    std::span<const double> values() const noexcept { return values_; }
    double operator[](std::size_t flat) const noexcept { return values_[flat]; }
    double at(std::span<const int> k) const noexcept { return values_[lattice_.index(k)]; }

    /// Multilinear interpolation at an arbitrary point of the unit cube.
    double interpolate(std::span<const double> u) const;

    /// Moves the sample vector out, leaving the grid empty.
    std::vector<double> release() && { return std::move(values_); }

private:
    Lattice lattice_;
    std::vector<double> values_;
    double time_stamp_ = 0.0;
};

/// Closed-form copula families used as initial conditions and oracles.
class ParametricCopula {
public:
    enum class Family { product, gaussian, min, max_bound };

    static ParametricCopula product(int dim);
    static ParametricCopula min(int dim);
    static ParametricCopula max_bound(int dim);
    /// Bivariate Gaussian copula with correlation rho.
    static ParametricCopula gaussian(double rho);
    /// Gaussian copula with the given row-major correlation matrix (n <= 3).
    static ParametricCopula gaussian(int dim, std::vector<double> correlation);

    Family family() const noexcept { return family_; }
    int dim() const noexcept { return dim_; }
    /// Row-major correlation matrix; empty unless family() == gaussian.
    std::span<const double> correlation() const noexcept { return corr_; }
    double rho(int i, int j) const noexcept { return corr_[i * dim_ + j]; }

private:
    ParametricCopula(Family f, int dim, std::vector<double> corr)
        : family_(f), dim_(dim), corr_(std::move(corr)) {}

    Family family_ = Family::product;
    int dim_ = 2;
    std::vector<double> corr_;
};

std::string to_string(ParametricCopula::Family family);

/// C(u). Gaussian values use adaptive quadrature and are exact on the faces of
/// the cube (groundedness and margins hold identically).
double eval_copula(const ParametricCopula& c, std::span<const double> u);

/// Partial derivative dC/du_axis of a bivariate parametric copula.
double copula_partial(const ParametricCopula& c, std::span<const double> u, int axis);

/// Samples a parametric copula on a lattice.
CopulaGrid sample_copula(const ParametricCopula& c, int resolution, double time_stamp = 0.0,
                         int threads = 1);

/// Fréchet-Hoeffding bounds.
double frechet_lower(std::span<const double> u) noexcept;
double frechet_upper(std::span<const double> u) noexcept;

struct AxiomTolerances {
    double grounded = 1e-12;
    double margin = 1e-9;
    double volume = 1e-9;
    double frechet = 1e-9;
};

struct AxiomCheck {
    bool pass = true;
    double worst = 0.0;             ///< largest violation magnitude (0 when clean)
    std::vector<int> where;         ///< lattice coordinates of the worst violation
};

struct AxiomReport {
    AxiomCheck grounded;
    AxiomCheck margins;
    AxiomCheck n_increasing;  ///< `where` is the lower corner of the offending cell
    AxiomCheck frechet;
    bool all_pass() const noexcept {
        return grounded.pass && margins.pass && n_increasing.pass && frechet.pass;
    }
};

AxiomReport check_copula_axioms(const CopulaGrid& g, const AxiomTolerances& tol = {});

/// Sampled transition law of one component, conditional on the initial state.
struct MarginalState {
    int component = 0;
    std::vector<double> x;  ///< strictly increasing abscissae
    std::vector<double> F;  ///< CDF samples
    std::vector<double> f;  ///< density samples
    double time_stamp = 0.0;
    std::vector<double> x0;  ///< conditioning initial state (full vector)
};

struct MarginalTolerances {
    double tail = 1e-6;
    double mass = 1e-6;
    double consistency = 1e-3;
};

struct MarginalReport {
    bool monotone = true;
    bool tails = true;
    bool mass = true;
    bool consistent = true;
    double mass_error = 0.0;
    double consistency_error = 0.0;
    bool all_pass() const noexcept { return monotone && tails && mass && consistent; }
};

/// Throws unless x is strictly increasing and the sample vectors agree in size.
void validate_structure(const MarginalState& m);
MarginalReport check_marginal(const MarginalState& m, const MarginalTolerances& tol = {});

/// Builds a marginal by sampling closed-form CDF and density callables.
template <class Cdf, class Pdf>
MarginalState sample_marginal(int component, std::vector<double> x, Cdf&& cdf, Pdf&& pdf,
                              double time_stamp, std::vector<double> x0 = {}) {
    MarginalState m;
    m.component = component;
    m.F.reserve(x.size());
    m.f.reserve(x.size());
    for (double xi : x) {
        m.F.push_back(cdf(xi));
        m.f.push_back(pdf(xi));
    }
    m.x = std::move(x);
    m.time_stamp = time_stamp;
    m.x0 = std::move(x0);
    return m;
}

/// Piecewise-linear CDF, clamped to the end samples outside the grid.
double cdf_at(const MarginalState& m, double x);
/// Piecewise-linear density, zero outside the grid.
double density_at(const MarginalState& m, double x);

/// inf{x : F(x) >= u} on the linearly interpolated CDF. u = 0 maps to the
/// first abscissa and u = 1 to the last.
double pseudo_inverse(const MarginalState& m, double u);

/// H(x) = C(F_1(x_1), ..., F_n(x_n)).
double sklar_compose(const ParametricCopula& c, std::span<const MarginalState> margins,
                     std::span<const double> x);
double sklar_compose(const CopulaGrid& c, std::span<const MarginalState> margins,
                     std::span<const double> x);

/// Evenly spaced abscissae.
std::vector<double> linspace(double lo, double hi, int n);

// CSV serialization. Copula grids: header u1,...,un,C; marginals: x,F,f.
// Values are written with 17 significant digits.
void write_copula_csv(const CopulaGrid& g, const std::filesystem::path& path);
CopulaGrid read_copula_csv(const std::filesystem::path& path, double time_stamp = 0.0);
void write_marginal_csv(const MarginalState& m, const std::filesystem::path& path);
MarginalState read_marginal_csv(const std::filesystem::path& path, int component = 0,
                                double time_stamp = 0.0);

}  // namespace dyncop
