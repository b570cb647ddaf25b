#ifndef CONTRASTIVE_LAB_H
#define CONTRASTIVE_LAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum ClabStatus {
  CLAB_STATUS_OK = 0,
  CLAB_STATUS_NULL_POINTER = 1,
  CLAB_STATUS_INVALID_ARGUMENT = 2,
  CLAB_STATUS_DIMENSION_MISMATCH = 3,
  CLAB_STATUS_NOT_POSITIVE_DEFINITE = 4,
  CLAB_STATUS_DIVERGENT_NORMALIZER = 5,
  CLAB_STATUS_NO_CONVERGENCE = 6,
  CLAB_STATUS_BUFFER_TOO_SMALL = 7,
  CLAB_STATUS_INTERNAL = 8,
} ClabStatus;

/**
 * Which closed-form minimizer to compute.
 */
typedef enum ClabObjective {
  CLAB_OBJECTIVE_COND = 0,
  CLAB_OBJECTIVE_JOINT = 1,
} ClabObjective;

/**
 * Joint Gaussian over `(u, v)` split into blocks.
 */
typedef struct ClabGaussian ClabGaussian;

/**
 * Embedding index for top-k retrieval.
 */
typedef struct ClabIndex ClabIndex;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread. Valid until the next
 * failing call on the same thread; never null.
 */
const char *clab_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *clab_version(void);

/**
 * Builds a block Gaussian from a row-major `dim × dim` joint covariance
 * whose first `n_x` coordinates are `u`.
 *
 * # Safety
 * `cov` must point to `dim * dim` doubles; `out` must be writable.
 */
enum ClabStatus clab_gaussian_new(const double *cov,
                                  size_t dim,
                                  size_t n_x,
                                  struct ClabGaussian **out_handle);

/**
 * # Safety
 * `g` must come from [`clab_gaussian_new`] and not be freed twice. Null is ignored.
 */
void clab_gaussian_free(struct ClabGaussian *g);

/**
 * Sizes of the `u` and `v` blocks.
 *
 * # Safety
 * `g` must be a live handle; the outputs must be writable.
 */
enum ClabStatus clab_gaussian_dims(const struct ClabGaussian *g, size_t *n_x, size_t *n_y);

/**
 * Writes the `n_x × n_y` minimizer `A` row-major into `a`. `rank` 0 means
 * unconstrained.
 *
 * # Safety
 * `g` must be a live handle and `a` must hold `cap` doubles.
 */
enum ClabStatus clab_minimizer(const struct ClabGaussian *g,
                               enum ClabObjective objective,
                               size_t rank,
                               double *a,
                               size_t cap);

/**
 * Population loss of the bilinear tilting `A` (row-major `n_x × n_y`).
 *
 * # Safety
 * `g` must be a live handle; `a` must hold `n_x * n_y` doubles.
 */
enum ClabStatus clab_closed_loss(const struct ClabGaussian *g,
                                 enum ClabObjective objective,
                                 const double *a,
                                 double *value);

/**
 * Shrinkage `h(σ)` applied to singular values by the joint minimizer.
 *
 * # Safety
 * `value` must be writable.
 */
enum ClabStatus clab_shrinkage_h(double sigma, double *value);

/**
 * Weighted conditional loss of a row-major `n × n` score matrix, rows
 * indexing `u`. With `clip` set the weights are ignored and symmetric
 * InfoNCE is returned instead.
 *
 * # Safety
 * `scores` must hold `n * n` doubles; `value` must be writable.
 */
enum ClabStatus clab_loss_cond(const double *scores,
                               size_t n,
                               double lambda_u,
                               double lambda_v,
                               bool clip,
                               double *value);

/**
 * Joint loss: positives on the diagonal of `scores`, all `n²` entries as
 * negatives.
 *
 * # Safety
 * `scores` must hold `n * n` doubles; `value` must be writable.
 */
enum ClabStatus clab_loss_joint(const double *scores, size_t n, double *value);

/**
 * Indexes `n` row-major embeddings of width `dim`. Rows are scaled to unit
 * norm when `normalized` is set, which makes scores cosine similarities.
 *
 * # Safety
 * `embeddings` must hold `n * dim` doubles; `out_handle` must be writable.
 */
enum ClabStatus clab_index_new(const double *embeddings,
                               size_t n,
                               size_t dim,
                               bool normalized,
                               struct ClabIndex **out_handle);

/**
 * # Safety
 * `index` must come from [`clab_index_new`] and not be freed twice. Null is ignored.
 */
void clab_index_free(struct ClabIndex *index);

/**
 * Top-`k` rows for `query`, best first; ties go to the lower row.
 * `scores` may be null.
 *
 * # Safety
 * `index` must be live, `query` must hold `dim` doubles, `rows` (and
 * `scores` when given) must hold `k` entries.
 */
enum ClabStatus clab_index_retrieve(const struct ClabIndex *index,
                                    const double *query,
                                    size_t dim,
                                    size_t k,
                                    size_t *rows,
                                    double *scores);

/**
 * Runs the analytic self-check suite. `passed` and `total` receive the
 * counts; the status is `Ok` even when checks fail.
 *
 * # Safety
 * Both outputs must be writable.
 */
enum ClabStatus clab_verify(size_t *passed, size_t *total);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONTRASTIVE_LAB_H */
