/* Generated by cbindgen. Do not edit. */

#ifndef VOI_H
#define VOI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VoiStatus {
  VOI_STATUS_OK = 0,
  VOI_STATUS_NULL_POINTER = 1,
  VOI_STATUS_INVALID_ARGUMENT = 2,
  VOI_STATUS_UNKNOWN_COLUMN = 3,
  VOI_STATUS_IO = 4,
  VOI_STATUS_NUMERICAL = 5,
  VOI_STATUS_PANIC = 6,
} VoiStatus;

typedef enum VoiDesign {
  VOI_DESIGN_GUM_ANON = 0,
  VOI_DESIGN_GMSHS = 1,
} VoiDesign;

typedef enum VoiScenario {
  VOI_SCENARIO_BASE = 0,
  VOI_SCENARIO_GUM_ANON_ONLY = 1,
  VOI_SCENARIO_GUMCAD_DIAGNOSED = 2,
} VoiScenario;

/**
 * Opaque table of Monte Carlo draws.
 */
typedef struct VoiTable VoiTable;

/**
 * Result of a value-of-information estimate. `proportion` and `se` are NaN
 * when undefined.
 */
typedef struct VoiEstimate {
  double value;
  double baseline;
  double proportion;
  double se;
  uint64_t k_used;
} VoiEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library from the same thread.
 */
const char *voi_last_error(void);

/**
 * Read a CSV of draws (header row of names, one row per draw).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum VoiStatus voi_table_read_csv(const char *path, struct VoiTable **out);

/**
 * Build a table from `ncols` columns of `nrows` values each.
 *
 * # Safety
 * `names` must point to `ncols` NUL-terminated strings and `columns` to
 * `ncols` arrays of `nrows` doubles.
 */
enum VoiStatus voi_table_from_columns(const char *const *names,
                                      const double *const *columns,
                                      size_t ncols,
                                      size_t nrows,
                                      struct VoiTable **out);

/**
 * Release a table. Null is ignored.
 *
 * # Safety
 * `table` must come from this library and not be used afterwards.
 */
void voi_table_free(struct VoiTable *table);

/**
 * # Safety
 * `table` must be a live handle; `nrows` and `ncols` writable.
 */
enum VoiStatus voi_table_shape(const struct VoiTable *table, size_t *nrows, size_t *ncols);

/**
 * Copy column `name` into `buf`, which must hold `len >= nrows` doubles.
 *
 * # Safety
 * `table` must be a live handle and `buf` writable for `len` doubles.
 */
enum VoiStatus voi_table_column(const struct VoiTable *table,
                                const char *name,
                                double *buf,
                                size_t len);

/**
 * # Safety
 * `table` must be a live handle and `path` a NUL-terminated string.
 */
enum VoiStatus voi_table_write_csv(const struct VoiTable *table, const char *path);

/**
 * EVPPI of the inputs for the posterior variance of `output`.
 *
 * # Safety
 * `inputs` must point to `ninputs` NUL-terminated strings; `out` writable.
 */
enum VoiStatus voi_evppi_scalar(const struct VoiTable *table,
                                const char *const *inputs,
                                size_t ninputs,
                                const char *output,
                                uint64_t seed,
                                struct VoiEstimate *out);

/**
 * Simulate the design's summary statistic for every draw. `design` is a
 * `VoiDesign` value.
 *
 * # Safety
 * `table` must be a live handle; `out` writable.
 */
enum VoiStatus voi_simulate_statistics(const struct VoiTable *table,
                                       uint32_t design,
                                       uint64_t n,
                                       uint64_t seed,
                                       struct VoiTable **out);

/**
 * EVSI of a study of size `n` for the posterior variance of `output`.
 *
 * # Safety
 * `table` must be a live handle, `output` a NUL-terminated string and `out`
 * writable.
 */
enum VoiStatus voi_evsi_scalar(const struct VoiTable *table,
                               uint32_t design,
                               uint64_t n,
                               const char *output,
                               uint64_t seed,
                               struct VoiEstimate *out);

/**
 * Sample the HIV prevalence model. `data_path` may be null for the built-in
 * synthetic data; `scenario` is a `VoiScenario` value and `draws` counts
 * pooled post-burn-in draws.
 *
 * # Safety
 * `data_path` must be null or NUL-terminated; `out` writable.
 */
enum VoiStatus voi_run_sampler(const char *data_path,
                               uint32_t scenario,
                               size_t draws,
                               size_t chains,
                               size_t burnin,
                               uint64_t seed,
                               struct VoiTable **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VOI_H */
