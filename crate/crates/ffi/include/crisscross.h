#ifndef CRISSCROSS_H
#define CRISSCROSS_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CcStatus {
  CC_STATUS_OK = 0,
  CC_STATUS_NULL_POINTER = 1,
  CC_STATUS_INVALID_ARGUMENT = 2,
  CC_STATUS_CONFIG = 3,
  CC_STATUS_SOLVER = 4,
  CC_STATUS_SIMULATION = 5,
  CC_STATUS_IO = 6,
  CC_STATUS_PANIC = 7,
} CcStatus;

/**
 * Tabulated free boundary.
 */
typedef struct CcBoundary CcBoundary;

/**
 * Network parameters.
 */
typedef struct CcParams CcParams;

typedef struct CcEstimate {
  double mean;
  double std_error;
} CcEstimate;

typedef struct CcConstants {
  double theta4;
  double c;
  double gamma4;
  double lbar;
  double d;
  double k;
  double theta;
  double eps1;
} CcConstants;

typedef struct CcThresholds {
  double c;
  double l0;
  double g0;
  double d;
} CcThresholds;

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *cc_last_error(void);

/**
 * Parses a `key = value` parameter document.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum CcStatus cc_params_parse(const char *text, struct CcParams **out);

/**
 * The reference Case IIB instance.
 *
 * # Safety
 * `out` must be writable.
 */
enum CcStatus cc_params_reference(struct CcParams **out);

/**
 * # Safety
 * `p` must come from this library and not be used afterwards.
 */
void cc_params_free(struct CcParams *p);

/**
 * Regime code: 0 Case I, 1..4 Cases IIA..IID.
 *
 * # Safety
 * `p` must be a live handle and `out` writable.
 */
enum CcStatus cc_params_regime(const struct CcParams *p, int32_t *out);

/**
 * # Safety
 * `p` must be a live handle and `out` writable.
 */
enum CcStatus cc_lp_value(const struct CcParams *p, double w1, double w2, double *out);

/**
 * Writes the three queue lengths to `out[0..3]`.
 *
 * # Safety
 * `p` must be a live handle and `out` must point to 3 writable doubles.
 */
enum CcStatus cc_lp_optimizer(const struct CcParams *p, double w1, double w2, double *out);

/**
 * Solves the workload problem on an `grid_n` x `grid_n` grid and extracts the
 * boundary. `j_origin` may be NULL.
 *
 * # Safety
 * `p` must be a live handle; `out` writable; `j_origin` NULL or writable.
 */
enum CcStatus cc_solve_boundary(const struct CcParams *p,
                                size_t grid_n,
                                double *j_origin,
                                struct CcBoundary **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` writable.
 */
enum CcStatus cc_boundary_load(const char *path, struct CcBoundary **out);

/**
 * # Safety
 * `fb` must be a live handle; `path` a NUL-terminated string.
 */
enum CcStatus cc_boundary_save(const struct CcBoundary *fb, const char *path);

/**
 * `psi(w2)`, extrapolated beyond the table.
 *
 * # Safety
 * `fb` must be a live handle and `out` writable.
 */
enum CcStatus cc_boundary_eval(const struct CcBoundary *fb, double w2, double *out);

/**
 * # Safety
 * `fb` must come from this library and not be used afterwards.
 */
void cc_boundary_free(struct CcBoundary *fb);

/**
 * Monte-Carlo limiting cost under `fb`.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum CcStatus cc_estimate_jstar(const struct CcParams *p,
                                const struct CcBoundary *fb,
                                double dt,
                                size_t paths,
                                uint64_t seed,
                                struct CcEstimate *out);

/**
 * Threshold constants, with the infimum over `n` taken over
 * `n_schedule[0..len]`.
 *
 * # Safety
 * `p` must be a live handle, `n_schedule` must point to `len` values, `out`
 * writable.
 */
enum CcStatus cc_select_thresholds(const struct CcParams *p,
                                   const uint64_t *n_schedule,
                                   size_t len,
                                   struct CcConstants *out);

/**
 * Mean scaled cost of `reps` replications of the `n`-th network under the
 * threshold policy.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum CcStatus cc_simulate_network(const struct CcParams *p,
                                  const struct CcBoundary *fb,
                                  struct CcThresholds th,
                                  uint64_t n,
                                  uint64_t reps,
                                  double horizon,
                                  uint64_t seed,
                                  struct CcEstimate *out);

#endif  /* CRISSCROSS_H */
