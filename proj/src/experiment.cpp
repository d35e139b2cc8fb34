#include "dyncop/experiment.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dyncop/empirical_validate.hpp"
#include "dyncop/marginal_solver.hpp"
#include "dyncop/markov_product.hpp"

namespace dyncop {

namespace fs = std::filesystem;

ParametricCopula make_family(int dim, const FamilySpec& spec) {
    if (spec.name == "product") return ParametricCopula::product(dim);
    if (spec.name == "min") return ParametricCopula::min(dim);
    if (spec.name == "max_bound") return ParametricCopula::max_bound(dim);
    if (spec.name == "gaussian") {
        const std::size_t pairs = static_cast<std::size_t>(dim * (dim - 1) / 2);
        require(spec.params.size() == pairs, ErrorKind::configuration,
                "gaussian family needs " + std::to_string(pairs) + " correlation value(s)");
        if (dim == 2) return ParametricCopula::gaussian(spec.params[0]);
        std::vector<double> r(static_cast<std::size_t>(dim * dim), 1.0);
        std::size_t p = 0;
        for (int i = 0; i < dim; ++i)
            for (int j = i + 1; j < dim; ++j) r[i * dim + j] = r[j * dim + i] = spec.params[p++];
        return ParametricCopula::gaussian(dim, std::move(r));
    }
    fail(ErrorKind::configuration, "unknown copula family '" + spec.name + "' (product, min, max_bound, gaussian)");
}

namespace {

// ---------------------------------------------------------------------------
// Text format

[[noreturn]] void config_error(int line, const std::string& field, const std::string& what) {
    std::string msg = "config";
    if (line > 0) msg += " line " + std::to_string(line);
    if (!field.empty()) msg += ": " + field;
    fail(ErrorKind::configuration, msg + ": " + what);
}

std::vector<std::string> split_ws(const std::string& s) {
    std::istringstream is(s);
    std::vector<std::string> out;
    for (std::string t; is >> t;) out.push_back(t);
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

struct Entry {
    std::string value;
    int line = 0;
};

using Table = std::map<std::string, Entry>;  // "block.key" -> value

Table tokenize(const std::string& text) {
    static const char* blocks[] = {"system", "grid", "run", "marginal", "product", "validate"};
    Table t;
    std::istringstream is(text);
    std::string raw, block;
    int line = 0;
    while (std::getline(is, raw)) {
        ++line;
        const auto hash = raw.find('#');
        const std::string s = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (s.empty()) continue;
        if (s == "}") {
            if (block.empty()) config_error(line, "", "unmatched '}'");
            block.clear();
            continue;
        }
        if (s.back() == '{') {
            const std::string name = trim(s.substr(0, s.size() - 1));
            if (!block.empty()) config_error(line, name, "blocks do not nest");
            bool known = false;
            for (const char* b : blocks) known = known || name == b;
            if (!known) config_error(line, name, "unknown block");
            block = name;
            continue;
        }
        const auto eq = s.find('=');
        if (eq == std::string::npos) config_error(line, "", "expected 'key = value'");
        const std::string key = trim(s.substr(0, eq));
        if (block.empty()) config_error(line, key, "keys must sit inside a block");
        const std::string full = block + "." + key;
        if (t.count(full)) config_error(line, full, "duplicate key");
        t[full] = {trim(s.substr(eq + 1)), line};
    }
    if (!block.empty()) config_error(line, block, "block is not closed");
    return t;
}

double to_double(const std::string& tok, int line, const std::string& field) {
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (tok.empty() || *end != '\0' || errno == ERANGE || !std::isfinite(v))
        config_error(line, field, "'" + tok + "' is not a finite number");
    return v;
}

long long to_int(const std::string& tok, int line, const std::string& field) {
    errno = 0;
    char* end = nullptr;
    const long long v = std::strtoll(tok.c_str(), &end, 10);
    if (tok.empty() || *end != '\0' || errno == ERANGE) config_error(line, field, "'" + tok + "' is not an integer");
    return v;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string join(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + fmt(v[i]);
    return s;
}

CoefficientSpec parse_spec(const Entry& e, const std::string& field) {
    const auto tok = split_ws(e.value);
    if (tok.empty()) config_error(e.line, field, "missing built-in name");
    CoefficientSpec s{tok[0], {}, -1};
    for (std::size_t i = 1; i < tok.size(); ++i) {
        if (tok[i][0] == '@')
            s.other = static_cast<int>(to_int(tok[i].substr(1), e.line, field));
        else
            s.params.push_back(to_double(tok[i], e.line, field));
    }
    return s;
}

std::string emit_spec(const CoefficientSpec& s) {
    std::string out = s.name;
    if (!s.params.empty()) out += " " + join(s.params);
    if (s.other >= 0) out += " @" + std::to_string(s.other);
    return out;
}

FamilySpec parse_family(const Entry& e, const std::string& field) {
    const auto tok = split_ws(e.value);
    if (tok.empty()) config_error(e.line, field, "missing family name");
    FamilySpec f{tok[0], {}};
    for (std::size_t i = 1; i < tok.size(); ++i) f.params.push_back(to_double(tok[i], e.line, field));
    return f;
}

std::string emit_family(const FamilySpec& f) { return f.params.empty() ? f.name : f.name + " " + join(f.params); }

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
    Table t = tokenize(text);
    ExperimentConfig c;
    std::map<std::string, bool> used;
    auto get = [&](const std::string& key) -> const Entry* {
        auto it = t.find(key);
        if (it == t.end()) return nullptr;
        used[key] = true;
        return &it->second;
    };
    auto num = [&](const std::string& key, double& dst) {
        if (const Entry* e = get(key)) dst = to_double(e->value, e->line, key);
    };
    auto integer = [&](const std::string& key, auto& dst, long long lo) {
        if (const Entry* e = get(key)) {
            const long long v = to_int(e->value, e->line, key);
            if (v < lo) config_error(e->line, key, "must be at least " + std::to_string(lo));
            dst = static_cast<std::remove_reference_t<decltype(dst)>>(v);
        }
    };
    auto str = [&](const std::string& key, std::string& dst) {
        if (const Entry* e = get(key)) {
            if (e->value.empty()) config_error(e->line, key, "empty value");
            dst = e->value;
        }
    };

    integer("system.dim", c.dim, 1);
    const Entry* x0 = get("system.x0");
    c.x0.assign(c.dim, 0.0);
    if (x0) {
        const auto tok = split_ws(x0->value);
        if (static_cast<int>(tok.size()) != c.dim)
            config_error(x0->line, "system.x0",
                         std::to_string(tok.size()) + " value(s) given for dim " + std::to_string(c.dim));
        for (int i = 0; i < c.dim; ++i) c.x0[i] = to_double(tok[i], x0->line, "system.x0");
    }
    auto per_component = [&](const std::string& role, CoefficientSpec fallback) {
        std::vector<CoefficientSpec> out(c.dim, fallback);
        if (const Entry* e = get("system." + role)) out.assign(c.dim, parse_spec(*e, "system." + role));
        for (auto& [key, e] : t) {
            const std::string prefix = "system." + role + ".";
            if (key.rfind(prefix, 0) != 0) continue;
            used[key] = true;
            const long long i = to_int(key.substr(prefix.size()), e.line, key);
            if (i < 0 || i >= c.dim)
                config_error(e.line, key, "component index outside [0, " + std::to_string(c.dim) + ")");
            out[static_cast<std::size_t>(i)] = parse_spec(e, key);
        }
        return out;
    };
    c.drift = per_component("drift", {"zero", {}, -1});
    c.diffusion = per_component("diffusion", {"constant", {1.0}, -1});
    if (const Entry* e = get("system.rho")) c.rho = parse_spec(*e, "system.rho");

    integer("grid.resolution", c.resolution, 5);
    num("grid.x_span", c.x_span);
    integer("grid.margin_points", c.margin_points, 3);
    num("grid.t0", c.t0);
    num("grid.t1", c.t1);
    integer("grid.steps", c.steps, 0);

    if (const Entry* e = get("run.seed")) {
        const auto v = to_int(e->value, e->line, "run.seed");
        if (v < 0) config_error(e->line, "run.seed", "must be non-negative");
        c.seed = static_cast<std::uint64_t>(v);
    }
    integer("run.n_paths", c.n_paths, 1);
    if (const Entry* e = get("run.form")) {
        try {
            c.form = parse_rhs_form(e->value);
        } catch (const Error& err) {
            config_error(e->line, "run.form", err.what());
        }
    }
    if (const Entry* e = get("run.first_term")) {
        if (e->value == "at_x")
            c.first_term = FirstTermVariant::at_x;
        else if (e->value == "at_z")
            c.first_term = FirstTermVariant::at_z;
        else
            config_error(e->line, "run.first_term", "expected at_x or at_z");
    }
    if (const Entry* e = get("run.initial")) c.initial = parse_family(*e, "run.initial");
    if (const Entry* e = get("run.reference")) {
        c.has_reference = true;
        c.reference = parse_family(*e, "run.reference");
    }
    str("run.metric", c.metric);
    num("run.tolerance", c.tolerance);
    num("run.margin_tolerance", c.margin_tolerance);
    num("run.volume_tolerance", c.volume_tolerance);
    integer("run.threads", c.threads, 0);
    integer("run.record", c.record, 1);
    str("run.path_format", c.path_format);
    str("run.output", c.output);

    if (const Entry* e = get("marginal.component")) {
        if (e->value == "all")
            c.component = -1;
        else
            c.component = static_cast<int>(to_int(e->value, e->line, "marginal.component"));
    }
    integer("marginal.steps", c.kfe_steps, 0);

    str("product.family", c.product_family);
    if (const Entry* e = get("product.times")) {
        c.times.clear();
        for (const auto& tok : split_ws(e->value)) c.times.push_back(to_double(tok, e->line, "product.times"));
    }
    integer("product.quad_points", c.quad_points, 2);
    num("product.tolerance", c.product_tolerance);

    str("validate.pde_grid", c.pde_grid);
    str("validate.paths", c.paths);
    str("validate.reference_grid", c.reference_grid);

    for (const auto& [key, e] : t)
        if (!used.count(key)) config_error(e.line, key, "unknown key");
    validate_config(c);
    return c;
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream is(path);
    require(static_cast<bool>(is), ErrorKind::io, "cannot open config " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

std::string emit_config(const ExperimentConfig& c) {
    std::ostringstream os;
    os << "system {\n  dim = " << c.dim << "\n  x0 = " << join(c.x0) << "\n";
    for (int i = 0; i < c.dim; ++i) os << "  drift." << i << " = " << emit_spec(c.drift[i]) << "\n";
    for (int i = 0; i < c.dim; ++i) os << "  diffusion." << i << " = " << emit_spec(c.diffusion[i]) << "\n";
    os << "  rho = " << emit_spec(c.rho) << "\n}\n";
    os << "grid {\n  resolution = " << c.resolution << "\n  x_span = " << fmt(c.x_span)
       << "\n  margin_points = " << c.margin_points << "\n  t0 = " << fmt(c.t0) << "\n  t1 = " << fmt(c.t1)
       << "\n  steps = " << c.steps << "\n}\n";
    os << "run {\n  seed = " << c.seed << "\n  n_paths = " << c.n_paths << "\n  form = " << to_string(c.form)
       << "\n  first_term = " << (c.first_term == FirstTermVariant::at_x ? "at_x" : "at_z")
       << "\n  initial = " << emit_family(c.initial) << "\n";
    if (c.has_reference) os << "  reference = " << emit_family(c.reference) << "\n";
    os << "  metric = " << c.metric << "\n  tolerance = " << fmt(c.tolerance)
       << "\n  margin_tolerance = " << fmt(c.margin_tolerance) << "\n  volume_tolerance = " << fmt(c.volume_tolerance)
       << "\n  threads = " << c.threads << "\n  record = " << c.record << "\n  path_format = " << c.path_format
       << "\n  output = " << c.output << "\n}\n";
    os << "marginal {\n  component = " << (c.component < 0 ? std::string("all") : std::to_string(c.component))
       << "\n  steps = " << c.kfe_steps << "\n}\n";
    os << "product {\n  family = " << c.product_family << "\n  times = " << join(c.times)
       << "\n  quad_points = " << c.quad_points << "\n  tolerance = " << fmt(c.product_tolerance) << "\n}\n";
    if (!c.pde_grid.empty() || !c.paths.empty() || !c.reference_grid.empty()) {
        os << "validate {\n";
        if (!c.pde_grid.empty()) os << "  pde_grid = " << c.pde_grid << "\n";
        if (!c.paths.empty()) os << "  paths = " << c.paths << "\n";
        if (!c.reference_grid.empty()) os << "  reference_grid = " << c.reference_grid << "\n";
        os << "}\n";
    }
    return os.str();
}

void validate_config(const ExperimentConfig& c) {
    auto check = [](bool ok, const std::string& field, const std::string& what) {
        if (!ok) config_error(0, field, what);
    };
    check(c.dim >= 1, "system.dim", "must be at least 1");
    check(static_cast<int>(c.x0.size()) == c.dim, "system.x0", "length differs from system.dim");
    check(static_cast<int>(c.drift.size()) == c.dim, "system.drift", "one spec per component required");
    check(static_cast<int>(c.diffusion.size()) == c.dim, "system.diffusion", "one spec per component required");
    auto wrap = [](const std::string& field, const std::function<void()>& f) {
        try {
            f();
        } catch (const Error& e) {
            config_error(0, field, e.what());
        }
    };
    for (int i = 0; i < c.dim; ++i) {
        const std::string idx = std::to_string(i);
        check(c.drift[i].other < c.dim, "system.drift." + idx, "coupled component outside the system");
        check(c.diffusion[i].other < c.dim, "system.diffusion." + idx, "coupled component outside the system");
        wrap("system.drift." + idx, [&] { (void)Coefficient::from_spec(CoefficientRole::drift, i, c.drift[i]); });
        wrap("system.diffusion." + idx,
             [&] { (void)Coefficient::from_spec(CoefficientRole::diffusion, i, c.diffusion[i]); });
    }
    wrap("system.rho", [&] { (void)correlation_from_spec(c.dim, c.rho); });
    check(c.resolution >= 5, "grid.resolution", "must be at least 5");
    check(c.x_span > 0.0, "grid.x_span", "must be positive");
    check(c.margin_points >= 3, "grid.margin_points", "must be at least 3");
    check(c.t0 > 0.0, "grid.t0", "must be positive");
    check(c.t1 > c.t0, "grid.t1", "must exceed grid.t0");
    check(c.steps >= 0, "grid.steps", "must be non-negative");
    check(c.n_paths >= 1, "run.n_paths", "must be positive");
    wrap("run.initial", [&] { (void)make_family(std::max(c.dim, 2), c.initial); });
    if (c.has_reference) wrap("run.reference", [&] { (void)make_family(std::max(c.dim, 2), c.reference); });
    wrap("run.metric", [&] { (void)parse_metric(c.metric); });
    check(c.tolerance >= 0.0, "run.tolerance", "must be non-negative");
    check(c.margin_tolerance > 0.0, "run.margin_tolerance", "must be positive");
    check(c.volume_tolerance > 0.0, "run.volume_tolerance", "must be positive");
    check(c.threads >= 0, "run.threads", "must be non-negative");
    check(c.record >= 1, "run.record", "must be at least 1");
    check(c.path_format == "csv" || c.path_format == "binary", "run.path_format", "expected csv or binary");
    check(c.component >= -1 && c.component < c.dim, "marginal.component", "outside the system");
    check(c.kfe_steps >= 0, "marginal.steps", "must be non-negative");
    check(c.product_family == "brownian" || c.product_family == "product" || c.product_family == "min",
          "product.family", "expected brownian, product or min");
    check(c.times.size() == 3, "product.times", "expected three times s u t");
    check(c.quad_points >= 2, "product.quad_points", "must be at least 2");
    check(c.product_tolerance >= 0.0, "product.tolerance", "must be non-negative");
}

SdeSystem build_system(const ExperimentConfig& c) {
    validate_config(c);
    std::vector<Coefficient> mu, sigma;
    for (int i = 0; i < c.dim; ++i) {
        mu.push_back(Coefficient::from_spec(CoefficientRole::drift, i, c.drift[i]));
        sigma.push_back(Coefficient::from_spec(CoefficientRole::diffusion, i, c.diffusion[i]));
    }
    return make_system(c.x0, std::move(mu), std::move(sigma), correlation_from_spec(c.dim, c.rho));
}

namespace {

// ---------------------------------------------------------------------------
// Runners

void write_json(const nlohmann::json& j, const fs::path& path) {
    std::ofstream os(path);
    require(static_cast<bool>(os), ErrorKind::io, "cannot open " + path.string() + " for writing");
    os << j.dump(2) << "\n";
    require(static_cast<bool>(os), ErrorKind::io, "write failed for " + path.string());
}

void prepare(const fs::path& out) {
    std::error_code ec;
    fs::create_directories(out, ec);
    require(!ec && fs::is_directory(out), ErrorKind::io, "cannot create output directory " + out.string());
}

// Numerical errors inside a run become RunFailure; I/O errors keep their kind.
template <class F>
auto numerics(F&& f) {
    try {
        return f();
    } catch (const RunFailure&) {
        throw;
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::io) throw;
        throw RunFailure(e.kind(), e.what());
    }
}

nlohmann::json condition_json(const ConditionReport& r) {
    return {{"lipschitz_drift", r.lipschitz_drift},
            {"lipschitz_diffusion", r.lipschitz_diffusion},
            {"growth_constant", r.growth_constant},
            {"extended_lipschitz", r.extended_lipschitz},
            {"extended_growth", r.extended_growth},
            {"lipschitz_ok", r.lipschitz_ok},
            {"growth_ok", r.growth_ok},
            {"measurable", r.measurable},
            {"initial_independent", r.initial_independent},
            {"violations", r.violations}};
}

nlohmann::json axioms_json(const AxiomReport& r) {
    auto one = [](const AxiomCheck& a) { return nlohmann::json{{"pass", a.pass}, {"worst", a.worst}}; };
    return {{"grounded", one(r.grounded)},
            {"margins", one(r.margins)},
            {"n_increasing", one(r.n_increasing)},
            {"frechet", one(r.frechet)},
            {"pass", r.all_pass()}};
}

PdeOptions pde_options(const ExperimentConfig& c) {
    PdeOptions o;
    o.first_term = c.first_term;
    o.margin_points = c.margin_points;
    o.x_span = c.x_span;
    o.horizon = c.t1;
    o.threads = c.threads;
    return o;
}

CopulaGrid simulate_empirical(const ExperimentConfig& c, const SdeSystem& sys, int resolution) {
    SimulationOptions so;
    so.threads = c.threads;
    const PathEnsemble paths = simulate_paths(sys, {0.0, c.t1}, c.n_paths, c.seed, so);
    return empirical_copula(paths, 1, resolution);
}

}  // namespace

fs::path run_simulate(const ExperimentConfig& c, const fs::path& out) {
    const SdeSystem sys = build_system(c);
    prepare(out);
    SimulationOptions so;
    so.threads = c.threads;
    const PathEnsemble paths = numerics([&] { return simulate_paths(sys, linspace(0.0, c.t1, c.record + 1), c.n_paths, c.seed, so); });
    const fs::path path_file = out / (c.path_format == "csv" ? "paths.csv" : "paths.bin");
    if (c.path_format == "csv")
        write_paths_csv(paths, path_file);
    else
        write_paths_binary(paths, path_file);

    const int n = sys.dim;
    const std::size_t last = paths.n_times() - 1;
    const double N = static_cast<double>(paths.n_paths);
    std::vector<double> mean(n, 0.0), var(n, 0.0);
    for (std::size_t p = 0; p < paths.n_paths; ++p)
        for (int i = 0; i < n; ++i) mean[i] += paths.at(p, last, i) / N;
    std::vector<std::vector<double>> cov(n, std::vector<double>(n, 0.0));
    for (std::size_t p = 0; p < paths.n_paths; ++p)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                cov[i][j] += (paths.at(p, last, i) - mean[i]) * (paths.at(p, last, j) - mean[j]) / std::max(N - 1.0, 1.0);
    std::vector<std::vector<double>> corr(n, std::vector<double>(n, 0.0));
    for (int i = 0; i < n; ++i) {
        var[i] = cov[i][i];
        for (int j = 0; j < n; ++j) {
            const double d = std::sqrt(cov[i][i] * cov[j][j]);
            corr[i][j] = d > 0.0 ? cov[i][j] / d : (i == j ? 1.0 : 0.0);
        }
    }
    nlohmann::json s;
    s["command"] = "simulate";
    s["seed"] = c.seed;
    s["n_paths"] = c.n_paths;
    s["scheme"] = paths.scheme;
    s["t_grid"] = paths.t_grid;
    s["paths"] = path_file.filename().string();
    s["terminal_mean"] = mean;
    s["terminal_variance"] = var;
    s["terminal_correlation"] = corr;
    s["correlation_projections"] = paths.projections;
    ProbeBox box;
    for (int i = 0; i < n; ++i) {
        box.lo.push_back(c.x0[i] - 5.0);
        box.hi.push_back(c.x0[i] + 5.0);
    }
    s["existence_conditions"] = condition_json(check_existence_conditions(sys, box));
    const fs::path summary = out / "simulate_summary.json";
    write_json(s, summary);
    return summary;
}

fs::path run_marginal(const ExperimentConfig& c, const fs::path& out) {
    const SdeSystem sys = build_system(c);
    prepare(out);
    nlohmann::json comps = nlohmann::json::array();
    for (int i = 0; i < c.dim; ++i) {
        if (c.component >= 0 && i != c.component) continue;
        const MarginalModel m = make_marginal_model(sys, i);
        const auto grid = default_x_grid(m, c.t1, c.margin_points, c.x_span);
        KfeOptions ko;
        ko.use_analytic = false;
        KfeDiagnostics diag;
        const MarginalState sol =
            numerics([&] { return solve_marginal_kfe(m, c.t0, c.t1, grid, c.kfe_steps, ko, &diag); });
        const std::string file = "marginal_" + std::to_string(i) + ".csv";
        write_marginal_csv(sol, out / file);
        nlohmann::json j{{"component", i},
                         {"file", file},
                         {"analytic_tag", to_string(m.tag)},
                         {"steps", diag.steps},
                         {"dt", diag.dt},
                         {"max_mass_drift", diag.max_mass_drift},
                         {"max_clip", diag.max_clip}};
        const MarginalReport rep = check_marginal(sol);
        j["mass_error"] = rep.mass_error;
        if (m.tag != AnalyticTag::none) {
            const MarginalState exact = analytic_marginal(m, c.t1, sol.x);
            double cdf_err = 0.0, pdf_err = 0.0;
            for (std::size_t k = 0; k < sol.x.size(); ++k) {
                cdf_err = std::max(cdf_err, std::abs(sol.F[k] - exact.F[k]));
                pdf_err = std::max(pdf_err, std::abs(sol.f[k] - exact.f[k]));
            }
            j["sup_cdf_error"] = cdf_err;
            j["sup_density_error"] = pdf_err;
        }
        comps.push_back(j);
    }
    const fs::path summary = out / "marginal_summary.json";
    write_json({{"command", "marginal"}, {"t0", c.t0}, {"t1", c.t1}, {"components", comps}}, summary);
    return summary;
}

fs::path run_evolve(const ExperimentConfig& c, const fs::path& out) {
    const SdeSystem sys = build_system(c);
    require(c.dim >= 2, ErrorKind::configuration, "config: system.dim: evolve needs at least two components");
    prepare(out);
    const CopulaGrid init = sample_copula(make_family(c.dim, c.initial), c.resolution, c.t0, std::max(c.threads, 1));
    std::vector<StepDiagnostics> trace;
    EvolveOptions eo;
    eo.margin_tolerance = c.margin_tolerance;
    eo.volume_tolerance = c.volume_tolerance;
    eo.trace = &trace;
    const fs::path diag_file = out / "diagnostics.json";
    const fs::path summary = out / "evolve_summary.json";
    EvolveResult res;
    try {
        res = numerics([&] {
            PdeWorkspace w(sys, init, pde_options(c));
            return evolve(w, c.t1, c.steps, c.form, eo);
        });
    } catch (const RunFailure& e) {
        EvolveResult partial;
        partial.steps = trace;
        write_json(diagnostics_json(partial), diag_file);
        write_json({{"command", "evolve"}, {"error", e.what()}, {"completed_steps", trace.size()}}, summary);
        throw RunFailure(e.kind(), e.what(), summary);
    }
    write_copula_csv(res.grid, out / "copula.csv");
    write_json(diagnostics_json(res), diag_file);

    nlohmann::json s;
    s["command"] = "evolve";
    s["form"] = to_string(c.form);
    s["t0"] = c.t0;
    s["t1"] = c.t1;
    s["resolution"] = c.resolution;
    s["steps"] = res.steps.size();
    s["grid"] = "copula.csv";
    s["diagnostics"] = "diagnostics.json";
    s["drift_from_initial"] = copula_distance(res.grid, init);
    s["max_clip_fraction"] = res.max_clip_fraction;
    s["accuracy_warnings"] = res.accuracy_warnings;
    AxiomTolerances tol;
    tol.margin = c.margin_tolerance;
    tol.volume = c.volume_tolerance;
    s["axioms"] = axioms_json(check_copula_axioms(res.grid, tol));
    bool pass = true;
    if (c.has_reference) {
        const CopulaGrid ref = sample_copula(make_family(c.dim, c.reference), c.resolution, c.t1, std::max(c.threads, 1));
        const ValidationReport r =
            make_report(parse_metric(c.metric), copula_distance(res.grid, ref, parse_metric(c.metric)), 0, c.resolution,
                        c.tolerance);
        s["reference"] = to_json(r);
        pass = r.pass;
    }
    s["pass"] = pass;
    write_json(s, summary);
    if (!pass) throw RunFailure(ErrorKind::accuracy, "evolve: distance to the reference exceeds the tolerance", summary, true);
    return summary;
}

fs::path run_validate(const ExperimentConfig& c, const fs::path& out) {
    const SdeSystem sys = build_system(c);
    prepare(out);
    CopulaGrid pde;
    std::string pde_source;
    if (!c.pde_grid.empty()) {
        pde = read_copula_csv(c.pde_grid, c.t1);
        pde_source = c.pde_grid;
    } else {
        run_evolve(c, out);
        pde = read_copula_csv(out / "copula.csv", c.t1);
        pde_source = "copula.csv";
    }
    CopulaGrid other;
    std::string other_source;
    std::size_t samples = 0;
    if (!c.reference_grid.empty()) {
        other = read_copula_csv(c.reference_grid, c.t1);
        other_source = c.reference_grid;
    } else if (!c.paths.empty()) {
        const PathEnsemble paths = read_paths_binary(c.paths);
        other = numerics([&] { return empirical_copula(paths, paths.n_times() - 1, pde.resolution()); });
        samples = paths.n_paths;
        other_source = c.paths;
    } else {
        other = numerics([&] { return simulate_empirical(c, sys, pde.resolution()); });
        write_copula_csv(other, out / "empirical.csv");
        samples = c.n_paths;
        other_source = "empirical.csv";
    }
    const DistanceMetric metric = parse_metric(c.metric);
    const double d = numerics([&] { return copula_distance(pde, other, metric); });
    const ValidationReport r = make_report(metric, d, samples, pde.resolution(), c.tolerance);
    nlohmann::json s = to_json(r);
    s["command"] = "validate";
    s["pde_grid"] = pde_source;
    s["compared_with"] = other_source;
    const fs::path summary = out / "validation.json";
    write_json(s, summary);
    if (!r.pass) throw RunFailure(ErrorKind::accuracy, "validate: distance exceeds the tolerance", summary, true);
    return summary;
}

fs::path run_product(const ExperimentConfig& c, const fs::path& out) {
    validate_config(c);
    const double s = c.times[0], u = c.times[1], t = c.times[2];
    require(s > 0.0 && s < u && u < t, ErrorKind::configuration,
            "config: product.times: expected 0 < s < u < t");
    prepare(out);
    auto family = [&](double a, double b) {
        if (c.product_family == "product") return ParametricCopula::product(2);
        if (c.product_family == "min") return ParametricCopula::min(2);
        return ParametricCopula::gaussian(std::sqrt(a / b));
    };
    const BivariateCopulaFn su(family(s, u), s, u), ut(family(u, t), u, t), st(family(s, t), s, t);
    ProductOptions po;
    po.quad_points = c.quad_points;
    po.resolution = c.resolution;
    po.threads = std::max(c.threads, 1);
    const CopulaGrid prod = numerics([&] { return copula_product(su, ut, po); });
    write_copula_csv(prod, out / "product_grid.csv");
    const double residual = numerics([&] { return chapman_kolmogorov_residual(su, ut, st, po); });
    const bool pass = residual <= c.product_tolerance;
    const fs::path summary = out / "product.json";
    write_json({{"command", "product"},
                {"family", c.product_family},
                {"times", c.times},
                {"quad_points", c.quad_points},
                {"resolution", c.resolution},
                {"grid", "product_grid.csv"},
                {"residual", residual},
                {"tolerance", c.product_tolerance},
                {"pass", pass}},
               summary);
    if (!pass) throw RunFailure(ErrorKind::accuracy, "product: residual exceeds the tolerance", summary, true);
    return summary;
}

fs::path run_command(const std::string& command, const ExperimentConfig& c, const fs::path& out) {
    if (command == "simulate") return run_simulate(c, out);
    if (command == "marginal") return run_marginal(c, out);
    if (command == "evolve") return run_evolve(c, out);
    if (command == "validate") return run_validate(c, out);
    if (command == "product") return run_product(c, out);
    fail(ErrorKind::configuration, "unknown command '" + command + "' (simulate, marginal, evolve, validate, product)");
}

}  // namespace dyncop
