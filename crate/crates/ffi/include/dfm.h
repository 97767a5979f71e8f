#ifndef DFM_H
#define DFM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DfmSchedule {
  DFM_SCHEDULE_LINEAR = 0,
  DFM_SCHEDULE_COSINE = 1,
} DfmSchedule;

/**
 * Result of every fallible call.
 */
typedef enum DfmStatus {
  DFM_STATUS_OK = 0,
  DFM_STATUS_NULL_POINTER = 1,
  /**
   * Bad argument or usage, such as an unknown strategy name.
   */
  DFM_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Checkpoints or settings that do not fit together.
   */
  DFM_STATUS_CONFIG = 3,
  /**
   * Numerical failure: non-finite values, degenerate inputs.
   */
  DFM_STATUS_NUMERICAL = 4,
  DFM_STATUS_WORKER = 5,
  DFM_STATUS_IO = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  DFM_STATUS_PANIC = 7,
} DfmStatus;

/**
 * Experts plus router, analytical or loaded from checkpoints.
 */
typedef struct DfmEnsemble DfmEnsemble;

/**
 * Exact flows of a labelled point set.
 */
typedef struct DfmFlow DfmFlow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *dfm_last_error(void);

/**
 * Library version as a static string.
 */
const char *dfm_version(void);

/**
 * Build the exact flow of `n` points of dimension `dim` (row-major).
 * `labels` may be null for an unpartitioned set; otherwise it holds `n`
 * cluster indices below `k`.
 *
 * # Safety
 * `points` must hold `n * dim` doubles, `labels` (if non-null) `n` values,
 * and `out` must be writable.
 */
enum DfmStatus dfm_flow_new(const double *points,
                            size_t n,
                            size_t dim,
                            const size_t *labels,
                            size_t k,
                            enum DfmSchedule schedule,
                            struct DfmFlow **out);

/**
 * # Safety
 * `flow` must come from [`dfm_flow_new`] and not be used afterwards.
 */
void dfm_flow_free(struct DfmFlow *flow);

/**
 * Exact marginal velocity at `(x, t)`; `x` and `out` hold `dim` doubles.
 *
 * # Safety
 * `flow` must be live and the buffers sized as described.
 */
enum DfmStatus dfm_flow_marginal(const struct DfmFlow *flow,
                                 const double *x,
                                 double t,
                                 double *out);

/**
 * Exact score of the noised marginal at `(x, t)`.
 *
 * # Safety
 * As for [`dfm_flow_marginal`].
 */
enum DfmStatus dfm_flow_score(const struct DfmFlow *flow, const double *x, double t, double *out);

/**
 * Exact flow of cluster `k`.
 *
 * # Safety
 * As for [`dfm_flow_marginal`].
 */
enum DfmStatus dfm_flow_expert(const struct DfmFlow *flow,
                               size_t k,
                               const double *x,
                               double t,
                               double *out);

/**
 * Cluster posterior at `(x, t)`; `out` holds `k` doubles.
 *
 * # Safety
 * As for [`dfm_flow_marginal`], with `out` sized to the cluster count.
 */
enum DfmStatus dfm_flow_posterior(const struct DfmFlow *flow,
                                  const double *x,
                                  double t,
                                  double *out);

/**
 * Ensemble of the exact experts and router of a labelled flow. The flow
 * handle stays owned by the caller.
 *
 * # Safety
 * `flow` must be live and `out` writable.
 */
enum DfmStatus dfm_ensemble_from_flow(const struct DfmFlow *flow, struct DfmEnsemble **out);

/**
 * Load `checkpoints/expert_<i>.json` for `i < k` and `checkpoints/router.json`
 * from a run directory; `checkpoints/monolith.json` is added when present.
 *
 * # Safety
 * `run_dir` must be a NUL-terminated path and `out` writable.
 */
enum DfmStatus dfm_ensemble_load(const char *run_dir,
                                 size_t k,
                                 enum DfmSchedule schedule,
                                 struct DfmEnsemble **out);

/**
 * # Safety
 * `ensemble` must come from this library and not be used afterwards.
 */
void dfm_ensemble_free(struct DfmEnsemble *ensemble);

/**
 * Number of experts, or 0 for a null handle.
 *
 * # Safety
 * `ensemble` must be null or live.
 */
size_t dfm_ensemble_num_experts(const struct DfmEnsemble *ensemble);

/**
 * Draw `n` samples with `steps` Euler steps under the named strategy
 * (`full`, `top-2`, `threshold`, ...). `param` is `tau` for threshold and
 * `p` for nucleus; pass NaN for the defaults, and likewise for
 * `temperature`. `labels` (length `n_labels`) is required for `oracle` and
 * may be null otherwise. `out` receives `n * dim` doubles.
 *
 * # Safety
 * All pointers must be valid for the sizes described.
 */
enum DfmStatus dfm_ensemble_sample(const struct DfmEnsemble *ensemble,
                                   const char *strategy,
                                   double param,
                                   double temperature,
                                   const size_t *labels,
                                   size_t n_labels,
                                   size_t n,
                                   size_t steps,
                                   uint64_t seed,
                                   double *out);

/**
 * Per-step cost of a strategy with `k` experts, given per-forward costs.
 * Threshold selection has no fixed cost and yields `InvalidArgument`.
 *
 * # Safety
 * `strategy` must be NUL-terminated and `out` writable.
 */
enum DfmStatus dfm_strategy_cost(uint64_t expert_cost,
                                 uint64_t router_cost,
                                 size_t k,
                                 const char *strategy,
                                 uint64_t *out);

/**
 * Sliced Wasserstein distance between two row-major point sets.
 *
 * # Safety
 * `a` holds `n_a * dim` doubles, `b` holds `n_b * dim`, `out` is writable.
 */
enum DfmStatus dfm_sliced_wasserstein(const double *a,
                                      size_t n_a,
                                      const double *b,
                                      size_t n_b,
                                      size_t dim,
                                      size_t n_projections,
                                      uint64_t seed,
                                      double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DFM_H */
