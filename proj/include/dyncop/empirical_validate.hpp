#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dyncop/copula_core.hpp"
#include "dyncop/sde_engine.hpp"

namespace dyncop {

/// Empirical copula of the ensemble at t_grid[t_index]: average ranks mapped
/// to rank / (n_paths + 1), then the empirical CDF on the lattice. Throws a
/// degenerate error when more than 1% of a component's samples are tied.
CopulaGrid empirical_copula(const PathEnsemble& paths, std::size_t t_index, int resolution);

/// The same estimator on raw samples stored row-major [sample][component].
CopulaGrid empirical_copula(std::span<const double> samples, int dim, int resolution, double time_stamp = 0.0);

enum class DistanceMetric { sup, l2 };

const char* to_string(DistanceMetric m) noexcept;
DistanceMetric parse_metric(const std::string& name);

/// sup: max |a - b| over the lattice; l2: root mean square over the lattice.
double copula_distance(const CopulaGrid& a, const CopulaGrid& b, DistanceMetric metric = DistanceMetric::sup);

struct ValidationReport {
    std::string metric;
    double value = 0.0;
    std::size_t sample_size = 0;  ///< 0 when neither side is sampled
    int resolution = 0;
    double standard_error = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

/// Monte Carlo standard error of an empirical copula value: 0.5 / sqrt(n),
/// the binomial bound. Zero for n = 0.
double empirical_standard_error(std::size_t n);

ValidationReport make_report(DistanceMetric metric, double value, std::size_t sample_size, int resolution,
                             double tolerance);

nlohmann::json to_json(const ValidationReport& r);

struct ConvergenceRow {
    double size = 0.0;  ///< n_paths or lattice resolution
    double distance = 0.0;
    double standard_error = 0.0;
};

struct ConvergenceTable {
    std::string ladder;  ///< "n_paths" or "resolution"
    std::vector<ConvergenceRow> rows;
    double slope = 0.0;  ///< least-squares slope of log distance against log size
};

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

/// Simulates `sys` to time t once per rung with independent seeds derived
/// from `seed` and compares the empirical copula to `reference`.
ConvergenceTable path_convergence(const SdeSystem& sys, double t, const CopulaGrid& reference,
                                  const std::vector<std::size_t>& ladder, std::uint64_t seed,
                                  const SimulationOptions& options = {});

/// Samples `c` on each lattice of the ladder and measures the sup error of
/// multilinear interpolation on a fixed off-lattice probe set.
ConvergenceTable resolution_convergence(const ParametricCopula& c, const std::vector<int>& ladder,
                                        int probes_per_axis = 37);

nlohmann::json to_json(const ConvergenceTable& t);

}  // namespace dyncop
