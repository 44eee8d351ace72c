#ifndef FEDFG_H
#define FEDFG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every entry point.
 */
typedef enum FedfgStatus {
  FEDFG_STATUS_OK = 0,
  FEDFG_STATUS_NULL_POINTER = 1,
  FEDFG_STATUS_INVALID_UTF8 = 2,
  FEDFG_STATUS_INVALID_ARGUMENT = 3,
  FEDFG_STATUS_INVALID_CONFIG = 4,
  FEDFG_STATUS_UNKNOWN_PRESET = 5,
  FEDFG_STATUS_IO = 6,
  FEDFG_STATUS_DATA_FORMAT = 7,
  FEDFG_STATUS_NON_FINITE = 8,
  FEDFG_STATUS_PRIVACY_VIOLATION = 9,
  FEDFG_STATUS_OUT_OF_RANGE = 10,
  FEDFG_STATUS_BUFFER_TOO_SMALL = 11,
  FEDFG_STATUS_PANIC = 12,
} FedfgStatus;

/**
 * Opaque run configuration.
 */
typedef struct FedfgConfig FedfgConfig;

/**
 * Opaque result of a completed run.
 */
typedef struct FedfgRun FedfgRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL after a
 * success. The pointer stays valid until the next call on this thread.
 */
const char *fedfg_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fedfg_version(void);

/**
 * Creates a configuration from a preset name such as `"sf30-iid"`.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
enum FedfgStatus fedfg_config_from_preset(const char *name, struct FedfgConfig **out);

/**
 * Parses a configuration from TOML text.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum FedfgStatus fedfg_config_from_toml(const char *text, struct FedfgConfig **out);

/**
 * # Safety
 * `cfg` must be a live handle from this library.
 */
enum FedfgStatus fedfg_config_set_seed(struct FedfgConfig *cfg, uint64_t seed);

/**
 * Worker threads for client updates; 0 picks the available parallelism.
 *
 * # Safety
 * `cfg` must be a live handle from this library.
 */
enum FedfgStatus fedfg_config_set_threads(struct FedfgConfig *cfg, size_t threads);

/**
 * # Safety
 * `cfg` must be a live handle from this library.
 */
enum FedfgStatus fedfg_config_set_rounds(struct FedfgConfig *cfg, size_t rounds);

/**
 * Selects the aggregation rule by name: `fedfg`, `fedavg`, `coord_median`,
 * `trimmed_mean` or `geometric_median`.
 *
 * # Safety
 * `cfg` must be a live handle; `name` a NUL-terminated string.
 */
enum FedfgStatus fedfg_config_set_aggregator(struct FedfgConfig *cfg, const char *name);

/**
 * Serialises the configuration as TOML. Free the result with
 * [`fedfg_string_free`].
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
enum FedfgStatus fedfg_config_to_toml(const struct FedfgConfig *cfg, char **out);

/**
 * # Safety
 * `s` must come from this library or be NULL; it must not be used afterwards.
 */
void fedfg_string_free(char *s);

/**
 * # Safety
 * `cfg` must come from this library or be NULL; it must not be used afterwards.
 */
void fedfg_config_free(struct FedfgConfig *cfg);

/**
 * Executes the full simulation described by `cfg`.
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
enum FedfgStatus fedfg_run(const struct FedfgConfig *cfg, struct FedfgRun **out);

/**
 * # Safety
 * `run` must be a live handle; `out` must be writable.
 */
enum FedfgStatus fedfg_run_rounds(const struct FedfgRun *run, size_t *out);

/**
 * # Safety
 * `run` must be a live handle; `out` must be writable.
 */
enum FedfgStatus fedfg_run_clients(const struct FedfgRun *run, size_t *out);

/**
 * Test accuracy after `round` (0-based).
 *
 * # Safety
 * `run` must be a live handle; `out` must be writable.
 */
enum FedfgStatus fedfg_run_accuracy(const struct FedfgRun *run, size_t round, double *out);

/**
 * Outlier threshold of `round`; NaN for baseline aggregators.
 *
 * # Safety
 * `run` must be a live handle; `out` must be writable.
 */
enum FedfgStatus fedfg_run_tau(const struct FedfgRun *run, size_t round, double *out);

/**
 * Copies the per-client outlier scores of `round` into `out`, which must
 * hold at least as many values as there are clients.
 *
 * # Safety
 * `run` must be a live handle; `out` must be valid for `capacity` writes.
 */
enum FedfgStatus fedfg_run_outlier_scores(const struct FedfgRun *run,
                                          size_t round,
                                          double *out,
                                          size_t capacity);

/**
 * Copies the per-client accuracy scores of `round` into `out`.
 *
 * # Safety
 * `run` must be a live handle; `out` must be valid for `capacity` writes.
 */
enum FedfgStatus fedfg_run_accuracy_scores(const struct FedfgRun *run,
                                           size_t round,
                                           double *out,
                                           size_t capacity);

/**
 * Writes 1 for each client excluded in `round` and 0 otherwise.
 *
 * # Safety
 * `run` must be a live handle; `out` must be valid for `capacity` writes.
 */
enum FedfgStatus fedfg_run_flagged(const struct FedfgRun *run,
                                   size_t round,
                                   uint8_t *out,
                                   size_t capacity);

/**
 * Ids of the malicious clients. `count` always receives the number of ids;
 * at most `capacity` of them are copied.
 *
 * # Safety
 * `run` must be a live handle; `out` valid for `capacity` writes; `count` writable.
 */
enum FedfgStatus fedfg_run_malicious(const struct FedfgRun *run,
                                     size_t *out,
                                     size_t capacity,
                                     size_t *count);

/**
 * Number of extractor parameter segments the privacy audit saw; always 0
 * for a successful run.
 *
 * # Safety
 * `run` must be a live handle; `out` must be writable.
 */
enum FedfgStatus fedfg_run_extractor_segments_seen(const struct FedfgRun *run, size_t *out);

/**
 * Writes the per-round metrics CSV to `path`.
 *
 * # Safety
 * `run` must be a live handle; `path` a NUL-terminated string.
 */
enum FedfgStatus fedfg_run_write_csv(const struct FedfgRun *run, const char *path);

/**
 * # Safety
 * `run` must come from this library or be NULL; it must not be used afterwards.
 */
void fedfg_run_free(struct FedfgRun *run);

/**
 * Hellinger distance between two probability vectors of length `len`.
 *
 * # Safety
 * `p` and `q` must be valid for `len` reads; `out` must be writable.
 */
enum FedfgStatus fedfg_hellinger(const double *p, const double *q, size_t len, double *out);

/**
 * Hampel cutoff over `len` outlier scores. Any of the outputs may be NULL.
 *
 * # Safety
 * `scores` must be valid for `len` reads; non-NULL outputs must be writable.
 */
enum FedfgStatus fedfg_hampel_threshold(const double *scores,
                                        size_t len,
                                        double gamma,
                                        double eps_stab,
                                        double *median,
                                        double *mad,
                                        double *tau);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDFG_H */
