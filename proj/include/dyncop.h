#ifndef DYNCOP_H
#define DYNCOP_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define DC_API __declspec(dllexport)
#else
#define DC_API __attribute__((visibility("default")))
#endif

/* Status codes returned by every fallible call. */
typedef enum {
    DC_OK = 0,
    DC_ERR_CONFIG = 1,     /* invalid configuration or parameters */
    DC_ERR_INPUT = 2,      /* missing or unreadable input, failed write */
    DC_ERR_NUMERICAL = 3,  /* stability, divergence or accuracy failure */
    DC_ERR_VALIDATION = 4, /* run completed but missed its tolerance */
    DC_ERR_ARGUMENT = 5,   /* null handle or out-of-range argument */
    DC_ERR_INTERNAL = 6
} dc_status;

typedef enum { DC_METRIC_SUP = 0, DC_METRIC_L2 = 1 } dc_metric;

typedef struct dc_config dc_config;
typedef struct dc_grid dc_grid;

DC_API const char* dc_version(void);
/* Message of the last failure on the calling thread ("" if none). */
DC_API const char* dc_last_error(void);
DC_API const char* dc_status_name(dc_status s);

DC_API dc_status dc_config_load(const char* path, dc_config** out);
DC_API dc_status dc_config_parse(const char* text, dc_config** out);
/* Writes the canonical text into buf (NUL-terminated when it fits);
   *needed receives the length including the terminator. */
DC_API dc_status dc_config_emit(const dc_config* cfg, char* buf, size_t cap, size_t* needed);
DC_API dc_status dc_config_set_seed(dc_config* cfg, uint64_t seed);
DC_API dc_status dc_config_set_threads(dc_config* cfg, int threads);
DC_API dc_status dc_config_set_resolution(dc_config* cfg, int resolution);
DC_API dc_status dc_config_output(const dc_config* cfg, char* buf, size_t cap, size_t* needed);
DC_API void dc_config_free(dc_config* cfg);

/* Runs "simulate", "marginal", "evolve", "validate" or "product" with outputs
   under out_dir. The summary path is written to summary (when non-null) on
   success and on DC_ERR_NUMERICAL / DC_ERR_VALIDATION if one was produced. */
DC_API dc_status dc_run(const dc_config* cfg, const char* command, const char* out_dir, char* summary,
                        size_t cap, size_t* needed);

DC_API dc_status dc_grid_load_csv(const char* path, double time_stamp, dc_grid** out);
DC_API dc_status dc_grid_save_csv(const dc_grid* g, const char* path);
/* family: "product", "min", "max_bound" or "gaussian" (params: upper-triangle correlations). */
DC_API dc_status dc_grid_sample(const char* family, const double* params, size_t n_params, int dim, int resolution,
                                double time_stamp, dc_grid** out);
DC_API dc_status dc_grid_shape(const dc_grid* g, int* dim, int* resolution, size_t* size);
DC_API dc_status dc_grid_values(const dc_grid* g, double* out, size_t cap);
DC_API dc_status dc_grid_distance(const dc_grid* a, const dc_grid* b, dc_metric metric, double* out);
/* *pass = 1 when every axiom holds at the given margin and volume tolerances. */
DC_API dc_status dc_grid_check_axioms(const dc_grid* g, double margin_tol, double volume_tol, int* pass);
DC_API void dc_grid_free(dc_grid* g);

#ifdef __cplusplus
}
#endif

#endif
