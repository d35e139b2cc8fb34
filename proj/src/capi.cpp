#include "dyncop.h"

#include <cstring>
#include <new>
#include <string>

#include "dyncop/empirical_validate.hpp"
#include "dyncop/experiment.hpp"

struct dc_config {
    dyncop::ExperimentConfig cfg;
};

struct dc_grid {
    dyncop::CopulaGrid grid;
};

namespace {

thread_local std::string last_error;

dc_status classify(dyncop::ErrorKind k) {
    using dyncop::ErrorKind;
    switch (k) {
        case ErrorKind::io: return DC_ERR_INPUT;
        case ErrorKind::accuracy:
        case ErrorKind::blow_up:
        case ErrorKind::divergence: return DC_ERR_NUMERICAL;
        default: return DC_ERR_CONFIG;
    }
}

template <class F>
dc_status guarded(F&& f) {
    last_error.clear();
    try {
        f();
        return DC_OK;
    } catch (const dyncop::RunFailure& e) {
        last_error = e.what();
        if (e.kind() == dyncop::ErrorKind::io) return DC_ERR_INPUT;
        return e.validation() ? DC_ERR_VALIDATION : DC_ERR_NUMERICAL;
    } catch (const dyncop::Error& e) {
        last_error = e.what();
        return classify(e.kind());
    } catch (const std::bad_alloc&) {
        last_error = "out of memory";
        return DC_ERR_INTERNAL;
    } catch (const std::exception& e) {
        last_error = e.what();
        return DC_ERR_INTERNAL;
    } catch (...) {
        last_error = "unknown failure";
        return DC_ERR_INTERNAL;
    }
}

dc_status bad_argument(const char* what) {
    last_error = what;
    return DC_ERR_ARGUMENT;
}

void copy_out(const std::string& s, char* buf, size_t cap, size_t* needed) {
    if (needed) *needed = s.size() + 1;
    if (buf && cap > 0) {
        const size_t n = std::min(cap - 1, s.size());
        std::memcpy(buf, s.data(), n);
        buf[n] = '\0';
    }
}

}  // namespace

extern "C" {

const char* dc_version(void) { return "1.0.0"; }

const char* dc_last_error(void) { return last_error.c_str(); }

const char* dc_status_name(dc_status s) {
    switch (s) {
        case DC_OK: return "ok";
        case DC_ERR_CONFIG: return "configuration error";
        case DC_ERR_INPUT: return "input error";
        case DC_ERR_NUMERICAL: return "numerical failure";
        case DC_ERR_VALIDATION: return "validation failure";
        case DC_ERR_ARGUMENT: return "invalid argument";
        case DC_ERR_INTERNAL: return "internal error";
    }
    return "unknown status";
}

dc_status dc_config_load(const char* path, dc_config** out) {
    if (!path || !out) return bad_argument("dc_config_load: null argument");
    *out = nullptr;
    return guarded([&] { *out = new dc_config{dyncop::load_config(path)}; });
}

dc_status dc_config_parse(const char* text, dc_config** out) {
    if (!text || !out) return bad_argument("dc_config_parse: null argument");
    *out = nullptr;
    return guarded([&] { *out = new dc_config{dyncop::parse_config(text)}; });
}

dc_status dc_config_emit(const dc_config* cfg, char* buf, size_t cap, size_t* needed) {
    if (!cfg) return bad_argument("dc_config_emit: null config");
    return guarded([&] { copy_out(dyncop::emit_config(cfg->cfg), buf, cap, needed); });
}

dc_status dc_config_set_seed(dc_config* cfg, uint64_t seed) {
    if (!cfg) return bad_argument("dc_config_set_seed: null config");
    cfg->cfg.seed = seed;
    return DC_OK;
}

dc_status dc_config_set_threads(dc_config* cfg, int threads) {
    if (!cfg) return bad_argument("dc_config_set_threads: null config");
    if (threads < 0) return bad_argument("dc_config_set_threads: threads must be non-negative");
    cfg->cfg.threads = threads;
    return DC_OK;
}

dc_status dc_config_set_resolution(dc_config* cfg, int resolution) {
    if (!cfg) return bad_argument("dc_config_set_resolution: null config");
    if (resolution < 5) return bad_argument("dc_config_set_resolution: resolution must be at least 5");
    cfg->cfg.resolution = resolution;
    return DC_OK;
}

dc_status dc_config_output(const dc_config* cfg, char* buf, size_t cap, size_t* needed) {
    if (!cfg) return bad_argument("dc_config_output: null config");
    copy_out(cfg->cfg.output, buf, cap, needed);
    return DC_OK;
}

void dc_config_free(dc_config* cfg) { delete cfg; }

dc_status dc_run(const dc_config* cfg, const char* command, const char* out_dir, char* summary, size_t cap,
                 size_t* needed) {
    if (!cfg || !command || !out_dir) return bad_argument("dc_run: null argument");
    std::string produced;
    const dc_status st = guarded([&] {
        try {
            produced = dyncop::run_command(command, cfg->cfg, out_dir).string();
        } catch (const dyncop::RunFailure& e) {
            produced = e.summary().string();
            throw;
        }
    });
    if (!produced.empty()) copy_out(produced, summary, cap, needed);
    else if (needed) *needed = 0;
    return st;
}

dc_status dc_grid_load_csv(const char* path, double time_stamp, dc_grid** out) {
    if (!path || !out) return bad_argument("dc_grid_load_csv: null argument");
    *out = nullptr;
    return guarded([&] { *out = new dc_grid{dyncop::read_copula_csv(path, time_stamp)}; });
}

dc_status dc_grid_save_csv(const dc_grid* g, const char* path) {
    if (!g || !path) return bad_argument("dc_grid_save_csv: null argument");
    return guarded([&] { dyncop::write_copula_csv(g->grid, path); });
}

dc_status dc_grid_sample(const char* family, const double* params, size_t n_params, int dim, int resolution,
                         double time_stamp, dc_grid** out) {
    if (!family || !out || (n_params > 0 && !params)) return bad_argument("dc_grid_sample: null argument");
    *out = nullptr;
    return guarded([&] {
        const dyncop::FamilySpec spec{family, std::vector<double>(params, params + n_params)};
        *out = new dc_grid{dyncop::sample_copula(dyncop::make_family(dim, spec), resolution, time_stamp)};
    });
}

dc_status dc_grid_shape(const dc_grid* g, int* dim, int* resolution, size_t* size) {
    if (!g) return bad_argument("dc_grid_shape: null grid");
    if (dim) *dim = g->grid.dim();
    if (resolution) *resolution = g->grid.resolution();
    if (size) *size = g->grid.values().size();
    return DC_OK;
}

dc_status dc_grid_values(const dc_grid* g, double* out, size_t cap) {
    if (!g || !out) return bad_argument("dc_grid_values: null argument");
    const auto v = g->grid.values();
    if (cap < v.size()) return bad_argument("dc_grid_values: buffer smaller than the grid");
    std::memcpy(out, v.data(), v.size() * sizeof(double));
    return DC_OK;
}

dc_status dc_grid_distance(const dc_grid* a, const dc_grid* b, dc_metric metric, double* out) {
    if (!a || !b || !out) return bad_argument("dc_grid_distance: null argument");
    if (metric != DC_METRIC_SUP && metric != DC_METRIC_L2) return bad_argument("dc_grid_distance: unknown metric");
    return guarded([&] {
        *out = dyncop::copula_distance(a->grid, b->grid,
                                       metric == DC_METRIC_SUP ? dyncop::DistanceMetric::sup : dyncop::DistanceMetric::l2);
    });
}

dc_status dc_grid_check_axioms(const dc_grid* g, double margin_tol, double volume_tol, int* pass) {
    if (!g || !pass) return bad_argument("dc_grid_check_axioms: null argument");
    return guarded([&] {
        dyncop::AxiomTolerances tol;
        tol.margin = margin_tol;
        tol.volume = volume_tol;
        *pass = dyncop::check_copula_axioms(g->grid, tol).all_pass() ? 1 : 0;
    });
}

void dc_grid_free(dc_grid* g) { delete g; }

}  // extern "C"
