#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dyncop/coefficients.hpp"

namespace dyncop {

/// dX = mu(X) dt + diag(sigma(X)) dB, with d<B_i, B_j> = rho_ij(X_i, X_j) dt.
struct SdeSystem {
    int dim = 0;
    std::vector<double> x0;
    std::vector<Coefficient> drift;
    std::vector<Coefficient> diffusion;
    CorrelationField rho = CorrelationField::independent();
    /// true when drift_i and diffusion_i depend on x_i alone.
    std::vector<bool> markov_flags;

    bool all_markov() const noexcept;
    std::vector<double> mu(std::span<const double> x) const;
    std::vector<double> sigma(std::span<const double> x) const;
};

/// Assembles a system, derives the markov flags from the coefficients and
/// validates it on probe points around x0.
SdeSystem make_system(std::vector<double> x0, std::vector<Coefficient> drift,
                      std::vector<Coefficient> diffusion, CorrelationField rho);

/// Probes the invariants: symmetric rho with unit diagonal and entries in
/// [-1,1], sigma >= 0, and markov flags consistent with the coefficients.
void validate_system(const SdeSystem& sys, int probe_count = 256, std::uint64_t seed = 7);

struct CorrelationResult {
    std::vector<double> matrix;  ///< row-major, PSD with unit diagonal
    bool projected = false;
    double min_eigenvalue = 1.0;  ///< of the symmetrized input
};

/// rho(x) symmetrized, eigenvalues clipped at 0 and diagonal rescaled to 1.
CorrelationResult correlation_at(const SdeSystem& sys, std::span<const double> x);

struct ProbeBox {
    std::vector<double> lo, hi;
};

struct ConditionReport {
    double lipschitz_drift = 0.0;
    double lipschitz_diffusion = 0.0;
    double growth_constant = 0.0;
    double extended_lipschitz = 0.0;  ///< max of both constants on the doubled box
    double extended_growth = 0.0;
    bool lipschitz_ok = true;
    bool growth_ok = true;
    bool measurable = true;           ///< by construction
    bool initial_independent = true;  ///< deterministic x0
    std::vector<std::string> violations;
    bool all_pass() const noexcept { return lipschitz_ok && growth_ok; }
};

/// Estimates Lipschitz and linear-growth constants from random probes in the
/// box. A constant that grows by more than 1.5x when the box is doubled about
/// its centre is reported as a violation.
ConditionReport check_existence_conditions(const SdeSystem& sys, const ProbeBox& box,
                                           int probe_count = 4000, std::uint64_t seed = 11);

struct PathEnsemble {
    std::size_t n_paths = 0;
    int dim = 0;
    std::vector<double> t_grid;
    std::vector<double> states;  ///< [path][time][component]
    std::uint64_t seed = 0;
    std::string scheme = "euler_maruyama";
    std::uint64_t projections = 0;  ///< steps whose rho(x) needed PSD repair

    std::size_t n_times() const noexcept { return t_grid.size(); }
    double at(std::size_t path, std::size_t time, int component) const noexcept {
        return states[(path * t_grid.size() + time) * static_cast<std::size_t>(dim) + component];
    }
};

struct SimulationOptions {
    double max_dt = 1e-3;     ///< Euler step cap between recorded times
    int noise_refinement = 1;  ///< sums this many normals per step (coupled refinement runs)
    int threads = 0;
    bool override_conditions = false;
    ProbeBox probe_box;  ///< empty: x0 +/- 5 in every component
};

PathEnsemble simulate_paths(const SdeSystem& sys, std::vector<double> t_grid, std::size_t n_paths,
                            std::uint64_t seed, const SimulationOptions& options = {});

/// CSV rows path,time,component,value.
void write_paths_csv(const PathEnsemble& e, const std::filesystem::path& path);
/// "CPDPATH1", u64 n_paths, n_times, dim, seed, f64 t_grid, f64 states; little-endian.
void write_paths_binary(const PathEnsemble& e, const std::filesystem::path& path);
PathEnsemble read_paths_binary(const std::filesystem::path& path);

}  // namespace dyncop
