#include "dyncop/empirical_validate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "dyncop/error.hpp"
#include "dyncop/rng.hpp"

namespace dyncop {

namespace {

// Average ranks (1-based) of one strided column; returns the count of samples
// that share their value with another sample.
std::size_t average_ranks(std::span<const double> samples, int dim, int axis, std::vector<double>& rank) {
    const std::size_t N = samples.size() / static_cast<std::size_t>(dim);
    auto val = [&](std::size_t p) { return samples[p * dim + axis]; };
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return val(a) < val(b); });
    rank.resize(N);
    std::size_t tied = 0;
    for (std::size_t lo = 0; lo < N;) {
        std::size_t hi = lo + 1;
        while (hi < N && val(order[hi]) == val(order[lo])) ++hi;
        const double avg = 0.5 * static_cast<double>(lo + 1 + hi);
        for (std::size_t q = lo; q < hi; ++q) rank[order[q]] = avg;
        if (hi - lo > 1) tied += hi - lo;
        lo = hi;
    }
    return tied;
}

}  // namespace

CopulaGrid empirical_copula(std::span<const double> samples, int dim, int resolution, double time_stamp) {
    require(dim >= 2, ErrorKind::parameter, "empirical copula: dimension must be at least 2");
    require(samples.size() % static_cast<std::size_t>(dim) == 0, ErrorKind::consistency,
            "empirical copula: sample count is not a multiple of the dimension");
    const std::size_t N = samples.size() / static_cast<std::size_t>(dim);
    require(N >= 100, ErrorKind::precondition, "empirical copula: needs at least 100 samples");
    for (double v : samples) require(std::isfinite(v), ErrorKind::domain, "empirical copula: non-finite sample");

    const Lattice lat(dim, resolution);
    const int m = lat.resolution();
    // Lattice cell index per sample and axis: smallest k with U <= u_k.
    std::vector<std::size_t> flat(N, 0);
    std::vector<double> rank;
    for (int a = 0; a < dim; ++a) {
        const std::size_t tied = average_ranks(samples, dim, a, rank);
        if (static_cast<double>(tied) > 0.01 * static_cast<double>(N))
            fail(ErrorKind::degenerate, "empirical copula: component " + std::to_string(a) + " has " +
                                            std::to_string(tied) + " tied samples of " + std::to_string(N));
        for (std::size_t p = 0; p < N; ++p) {
            const double u = rank[p] / static_cast<double>(N + 1);
            int k = std::clamp(static_cast<int>(std::ceil(u * (m - 1))), 0, m - 1);
            while (k > 0 && u <= lat.coordinate(k - 1)) --k;
            while (k < m - 1 && u > lat.coordinate(k)) ++k;
            flat[p] += lat.stride(a) * static_cast<std::size_t>(k);
        }
    }

    std::vector<double> count(lat.size(), 0.0);
    for (std::size_t p = 0; p < N; ++p) count[flat[p]] += 1.0;
    // Cumulative sums along every axis turn cell counts into the CDF.
    for (int a = 0; a < dim; ++a) {
        const std::size_t st = lat.stride(a);
        for (std::size_t idx = 0; idx < lat.size(); ++idx)
            if ((idx / st) % static_cast<std::size_t>(m) != 0) count[idx] += count[idx - st];
    }
    for (double& c : count) c /= static_cast<double>(N);
    return CopulaGrid(lat, std::move(count), time_stamp);
}

CopulaGrid empirical_copula(const PathEnsemble& paths, std::size_t t_index, int resolution) {
    require(t_index < paths.n_times(), ErrorKind::domain, "empirical copula: time index out of range");
    std::vector<double> samples(paths.n_paths * static_cast<std::size_t>(paths.dim));
    for (std::size_t p = 0; p < paths.n_paths; ++p)
        for (int c = 0; c < paths.dim; ++c) samples[p * paths.dim + c] = paths.at(p, t_index, c);
    return empirical_copula(samples, paths.dim, resolution, paths.t_grid[t_index]);
}

const char* to_string(DistanceMetric m) noexcept { return m == DistanceMetric::sup ? "sup" : "l2"; }

DistanceMetric parse_metric(const std::string& name) {
    if (name == "sup") return DistanceMetric::sup;
    if (name == "l2") return DistanceMetric::l2;
    fail(ErrorKind::configuration, "unknown distance metric '" + name + "' (sup, l2)");
}

double copula_distance(const CopulaGrid& a, const CopulaGrid& b, DistanceMetric metric) {
    require(a.lattice() == b.lattice(), ErrorKind::consistency,
            "copula distance: grids differ in dimension or resolution");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.values().size(); ++i) {
        const double d = std::abs(a[i] - b[i]);
        if (metric == DistanceMetric::sup)
            acc = std::max(acc, d);
        else
            acc += d * d;
    }
    return metric == DistanceMetric::sup ? acc : std::sqrt(acc / static_cast<double>(a.values().size()));
}

double empirical_standard_error(std::size_t n) {
    return n == 0 ? 0.0 : 0.5 / std::sqrt(static_cast<double>(n));
}

ValidationReport make_report(DistanceMetric metric, double value, std::size_t sample_size, int resolution,
                             double tolerance) {
    ValidationReport r;
    r.metric = to_string(metric);
    r.value = value;
    r.sample_size = sample_size;
    r.resolution = resolution;
    r.standard_error = empirical_standard_error(sample_size);
    r.tolerance = tolerance;
    r.pass = std::isfinite(value) && value <= tolerance;
    return r;
}

nlohmann::json to_json(const ValidationReport& r) {
    return {{"metric", r.metric},
            {"value", r.value},
            {"sample_size", r.sample_size},
            {"resolution", r.resolution},
            {"standard_error", r.standard_error},
            {"tolerance", r.tolerance},
            {"pass", r.pass}};
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    require(x.size() == y.size() && x.size() >= 2, ErrorKind::parameter, "slope fit: need two or more points");
    double mx = 0.0, my = 0.0;
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        require(x[i] > 0.0 && y[i] > 0.0, ErrorKind::domain, "slope fit: values must be positive");
        mx += std::log(x[i]) / n;
        my += std::log(y[i]) / n;
    }
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = std::log(x[i]) - mx;
        sxy += dx * (std::log(y[i]) - my);
        sxx += dx * dx;
    }
    require(sxx > 0.0, ErrorKind::degenerate, "slope fit: sizes must not all coincide");
    return sxy / sxx;
}

namespace {

void fit(ConvergenceTable& t) {
    std::vector<double> x, y;
    for (const auto& r : t.rows) {
        x.push_back(r.size);
        y.push_back(r.distance);
    }
    t.slope = loglog_slope(x, y);
}

}  // namespace

ConvergenceTable path_convergence(const SdeSystem& sys, double t, const CopulaGrid& reference,
                                  const std::vector<std::size_t>& ladder, std::uint64_t seed,
                                  const SimulationOptions& options) {
    require(t > 0.0, ErrorKind::domain, "path convergence: t must be positive");
    ConvergenceTable table;
    table.ladder = "n_paths";
    table.rows.resize(ladder.size());
    for (std::size_t r = 0; r < ladder.size(); ++r) {
        std::uint64_t state = seed + r;
        const std::uint64_t rung_seed = rng::splitmix64(state);
        const PathEnsemble paths = simulate_paths(sys, {0.0, t}, ladder[r], rung_seed, options);
        const CopulaGrid emp = empirical_copula(paths, 1, reference.resolution());
        table.rows[r] = {static_cast<double>(ladder[r]), copula_distance(emp, reference),
                         empirical_standard_error(ladder[r])};
    }
    fit(table);
    return table;
}

ConvergenceTable resolution_convergence(const ParametricCopula& c, const std::vector<int>& ladder,
                                        int probes_per_axis) {
    const int n = c.dim();
    require(probes_per_axis >= 2, ErrorKind::parameter, "resolution convergence: need two or more probes per axis");
    // Probes sit at an irrational offset so none coincides with a lattice node.
    const double offset = 0.5 * (3.0 - std::sqrt(5.0));
    const Lattice probes(n, probes_per_axis);
    std::vector<double> exact(probes.size());
    std::vector<std::vector<double>> points(probes.size(), std::vector<double>(n));
    std::vector<int> k(n);
    for (std::size_t idx = 0; idx < probes.size(); ++idx) {
        probes.coords(idx, k);
        for (int a = 0; a < n; ++a) points[idx][a] = (k[a] + offset) / probes_per_axis;
        exact[idx] = eval_copula(c, points[idx]);
    }
    ConvergenceTable table;
    table.ladder = "resolution";
    for (int res : ladder) {
        const CopulaGrid g = sample_copula(c, res);
        double err = 0.0;
        for (std::size_t idx = 0; idx < probes.size(); ++idx)
            err = std::max(err, std::abs(g.interpolate(points[idx]) - exact[idx]));
        table.rows.push_back({static_cast<double>(res), err, 0.0});
    }
    fit(table);
    return table;
}

nlohmann::json to_json(const ConvergenceTable& t) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : t.rows)
        rows.push_back({{"size", r.size}, {"distance", r.distance}, {"standard_error", r.standard_error}});
    return {{"ladder", t.ladder}, {"rows", rows}, {"slope", t.slope}};
}

}  // namespace dyncop
