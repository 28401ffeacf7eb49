#ifndef EMCO_H
#define EMCO_H

/* Generated by cbindgen from crates/ffi/src; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EmcoDirection {
  EMCO_DIRECTION_NON_NEGATIVE = 0,
  EMCO_DIRECTION_NON_POSITIVE = 1,
  EMCO_DIRECTION_POSITIVE = 2,
} EmcoDirection;

typedef enum EmcoMethod {
  EMCO_METHOD_RSW = 0,
  EMCO_METHOD_CCK = 1,
} EmcoMethod;

typedef enum EmcoStatus {
  EMCO_STATUS_OK = 0,
  EMCO_STATUS_NULL_POINTER = 1,
  EMCO_STATUS_INVALID_ARGUMENT = 2,
  EMCO_STATUS_INVALID_DATA = 3,
  EMCO_STATUS_DEGENERATE = 4,
  EMCO_STATUS_INFEASIBLE = 5,
  EMCO_STATUS_IO = 6,
  EMCO_STATUS_BUFFER_TOO_SMALL = 7,
  EMCO_STATUS_PANIC = 8,
} EmcoStatus;

/**
 * Opaque dataset handle.
 */
typedef struct EmcoDataset EmcoDataset;

typedef struct EmcoDecomposition {
  double beta_recoded;
  double untreated_mean;
  double complier_share;
} EmcoDecomposition;

typedef struct EmcoTestSummary {
  double statistic;
  double critical_value;
  bool reject;
  size_t num_moments;
  size_t num_active;
} EmcoTestSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *emco_version(void);

/**
 * Message for the most recent failure on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *emco_last_error_message(void);

/**
 * Builds a dataset from `n` rows. Treatment values are relabeled to
 * ordered levels; `z` must hold 0/1.
 *
 * # Safety
 * `y`, `d` and `z` must point to `n` readable elements and `out` to a
 * writable handle slot.
 */
enum EmcoStatus emco_dataset_from_arrays(const double *y,
                                         const double *d,
                                         const uint8_t *z,
                                         size_t n,
                                         struct EmcoDataset **out);

/**
 * Loads a CSV file using the named outcome, treatment and instrument columns.
 *
 * # Safety
 * All string arguments must be NUL-terminated; `out` must be writable.
 */
enum EmcoStatus emco_dataset_from_csv(const char *path,
                                      const char *y,
                                      const char *d,
                                      const char *z,
                                      struct EmcoDataset **out);

/**
 * Attaches cluster ids used by every bootstrap on this dataset.
 *
 * # Safety
 * `ds` must be a live handle and `ids` must point to `n` elements.
 */
enum EmcoStatus emco_dataset_set_clusters(struct EmcoDataset *ds, const uint32_t *ids, size_t n);

/**
 * Releases a dataset. NULL is ignored.
 *
 * # Safety
 * `ds` must come from one of the constructors and not be used afterwards.
 */
void emco_dataset_free(struct EmcoDataset *ds);

/**
 * Number of rows, or 0 for NULL.
 *
 * # Safety
 * `ds` must be NULL or a live handle.
 */
size_t emco_dataset_n(const struct EmcoDataset *ds);

/**
 * Number of treatment levels (`dbar + 1`), or 0 for NULL.
 *
 * # Safety
 * `ds` must be NULL or a live handle.
 */
size_t emco_dataset_num_levels(const struct EmcoDataset *ds);

/**
 * Writes `Pr(D=d|Z=1) - Pr(D=d|Z=0)` for every level into `delta_pr`
 * (capacity `len`), plus the first stages of `D` and `1(D>0)`.
 *
 * # Safety
 * `delta_pr` must hold `len` doubles; the scalar outputs may be NULL.
 */
enum EmcoStatus emco_first_stage(const struct EmcoDataset *ds,
                                 double *delta_pr,
                                 size_t len,
                                 double *delta_mean,
                                 double *delta_any);

/**
 * Complier decomposition. `shares` and `treated_means` receive levels
 * `1..=dbar` (capacity `len`); undefined treated means are NaN.
 *
 * # Safety
 * `out` must be writable; the arrays must hold `len` doubles.
 */
enum EmcoStatus emco_decompose(const struct EmcoDataset *ds,
                               struct EmcoDecomposition *out,
                               double *shares,
                               double *treated_means,
                               size_t len);

/**
 * Moment-inequality test on the level and joint-mass moments, with the
 * outcome split at `outcome_bins` quantile bins. `beta <= 0` selects the
 * default `alpha / 10`.
 *
 * # Safety
 * `ds` must be a live handle and `out` writable.
 */
enum EmcoStatus emco_test(const struct EmcoDataset *ds,
                          enum EmcoMethod method,
                          double alpha,
                          double beta,
                          size_t replications,
                          size_t outcome_bins,
                          uint64_t seed,
                          struct EmcoTestSummary *out);

/**
 * Bounds on `Y_d^d - Y_d^0` for `k` levels. Zero-share levels get NaN.
 *
 * # Safety
 * Input arrays must hold `k` doubles, `lo` and `hi` must be writable for `k`.
 */
enum EmcoStatus emco_effect_bounds(const double *shares,
                                   const double *treated_means,
                                   size_t k,
                                   double untreated_mean,
                                   double y_min,
                                   double y_max,
                                   bool decreasing_effects,
                                   double *lo,
                                   double *hi);

/**
 * Whether some `Y^0` makes every effect satisfy `direction` (with margin
 * `eps` for `Positive`). On success `witness` (capacity `k`, may be NULL)
 * receives `Y_d^0` for positive-share levels in order, NaN elsewhere.
 *
 * # Safety
 * Input arrays must hold `k` doubles; `feasible` must be writable.
 */
enum EmcoStatus emco_joint_sign_feasible(const double *shares,
                                         const double *treated_means,
                                         size_t k,
                                         double untreated_mean,
                                         double y_min,
                                         double y_max,
                                         enum EmcoDirection direction,
                                         double eps,
                                         bool *feasible,
                                         double *witness);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EMCO_H */
