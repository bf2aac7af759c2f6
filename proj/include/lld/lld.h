#ifndef LLD_LLD_H
#define LLD_LLD_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define LLD_API __declspec(dllexport)
#else
#define LLD_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes. Every function returns one of these; details of the most
 * recent failure on the calling thread are available from lld_last_error(). */
typedef enum lld_status {
  LLD_OK = 0,
  LLD_ERR_VALIDATION = 1,
  LLD_ERR_SHAPE = 2,
  LLD_ERR_SINGULARITY = 3,
  LLD_ERR_UNSUPPORTED_METHOD = 4,
  LLD_ERR_DEGENERATE_MODE = 5,
  LLD_ERR_DIVERGENCE = 6,
  LLD_ERR_QUADRATURE = 7,
  LLD_ERR_NONFINITE = 8,
  LLD_ERR_CONFIG = 9,
  LLD_ERR_IO = 10,
  LLD_ERR_INVARIANT = 11,
  LLD_ERR_INTERNAL = 12,
  LLD_ERR_ARGUMENT = 13
} lld_status;

typedef struct lld_config lld_config;

/* Library version string, e.g. "0.1.0". */
LLD_API const char* lld_version(void);

LLD_API const char* lld_status_name(lld_status s);
/* Process exit status for a status code: 0 ok, 2 config, 3 invariant gate, 4 I/O, 1 other. */
LLD_API int lld_exit_code(lld_status s);
/* Message of the last failure on this thread ("" when none). */
LLD_API const char* lld_last_error(void);

/* Configuration. `preset_or_path` is "default", "paper", or a key = value file. */
LLD_API lld_status lld_config_create(const char* preset_or_path, lld_config** out);
LLD_API void lld_config_destroy(lld_config* cfg);
LLD_API lld_status lld_config_set(lld_config* cfg, const char* key, const char* value);
/* Parses "key=value". */
LLD_API lld_status lld_config_set_assignment(lld_config* cfg, const char* assignment);
/* Copies the value into buf (NUL-terminated). *needed receives the full length
 * including the terminator; LLD_ERR_ARGUMENT when buf is too small. */
LLD_API lld_status lld_config_get(const lld_config* cfg, const char* key, char* buf, size_t buf_len, size_t* needed);
LLD_API lld_status lld_config_hash(const lld_config* cfg, uint64_t* out);

/* Subcommand names, index in [0, lld_subcommand_count()). */
LLD_API size_t lld_subcommand_count(void);
LLD_API const char* lld_subcommand_name(size_t i);

/* Runs a subcommand with artifacts under out_dir. Progress text goes to
 * stdout when `verbose` is nonzero. On success, the JSON summary (run
 * directory and results) can be read with lld_last_summary(). */
LLD_API lld_status lld_run(const char* subcommand, const lld_config* cfg, const char* out_dir, int verbose);
LLD_API const char* lld_last_summary(void);

/* Numeric helpers. */
/* Empirical CRPS of m samples against a scalar target. */
LLD_API lld_status lld_crps(const double* samples, size_t m, double y, double* out);
/* Closed-form renewal multiplier E[exp(s D)] for pole s = -rho + i omega and
 * gaps D: kind 0 deterministic (p1 = delta), 1 exponential (p1 = rate),
 * 2 gamma (p1 = shape, p2 = rate). */
LLD_API lld_status lld_renewal_multiplier(double rho, double omega, int kind, double p1, double p2, double* re,
                                          double* im);
/* Cumulative signal level of the cosine schedule with T steps at step tau. */
LLD_API lld_status lld_alpha_bar(int T, int tau, double* out);

#ifdef __cplusplus
}
#endif

#endif
