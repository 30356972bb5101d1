#ifndef DLSJM_H
#define DLSJM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DlsjmStatus {
  DLSJM_STATUS_OK = 0,
  DLSJM_STATUS_INVALID_INPUT = 2,
  DLSJM_STATUS_NUMERICAL = 3,
  DLSJM_STATUS_CONVERGENCE = 4,
  DLSJM_STATUS_NULL_POINTER = 5,
  DLSJM_STATUS_BUFFER_TOO_SMALL = 6,
  DLSJM_STATUS_PANIC = 7,
} DlsjmStatus;

/**
 * Chain plus its post-processed summary.
 */
typedef struct DlsjmFit DlsjmFit;

/**
 * Binary response matrix.
 */
typedef struct DlsjmMatrix DlsjmMatrix;

/**
 * Sampler settings exposed across the ABI.
 */
typedef struct DlsjmSamplerOptions {
  size_t n_iterations;
  size_t burn_in;
  size_t thin;
  size_t dim;
  size_t adapt_window;
  uint64_t seed;
  /**
   * Nonzero to evaluate the respondent-position likelihood exactly.
   */
  uint8_t exact_likelihood;
} DlsjmSamplerOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *dlsjm_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dlsjm_version(void);

/**
 * Builds a matrix from `n * p` row-major 0/1 bytes.
 *
 * # Safety
 * `data` must point to `n * p` readable bytes and `out` must be writable.
 */
enum DlsjmStatus dlsjm_matrix_new(size_t n,
                                  size_t p,
                                  const uint8_t *data,
                                  struct DlsjmMatrix **out);

/**
 * Loads a CSV (header detected automatically) or binary cache file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum DlsjmStatus dlsjm_matrix_load(const char *path, struct DlsjmMatrix **out);

/**
 * # Safety
 * `m` must come from this library; the out pointers may be null.
 */
enum DlsjmStatus dlsjm_matrix_dims(const struct DlsjmMatrix *m, size_t *n, size_t *p);

/**
 * # Safety
 * `m` must come from this library (or be null) and not be used afterwards.
 */
void dlsjm_matrix_free(struct DlsjmMatrix *m);

struct DlsjmSamplerOptions dlsjm_sampler_options_default(void);

/**
 * Runs the sampler with default priors and post-processes the chain.
 *
 * # Safety
 * `m` and `opts` must be valid, `out` writable.
 */
enum DlsjmStatus dlsjm_fit(const struct DlsjmMatrix *m,
                           const struct DlsjmSamplerOptions *opts,
                           struct DlsjmFit **out);

/**
 * # Safety
 * `f` must come from this library.
 */
size_t dlsjm_fit_sample_count(const struct DlsjmFit *f);

/**
 * Number of proposal blocks reported by [`dlsjm_fit_acceptance_rates`].
 *
 * # Safety
 * `f` must come from this library.
 */
size_t dlsjm_fit_block_count(const struct DlsjmFit *f);

/**
 * Post-burn-in acceptance rate per block (NaN when a block made no
 * proposals).
 *
 * # Safety
 * `buf` must hold `len` doubles.
 */
enum DlsjmStatus dlsjm_fit_acceptance_rates(const struct DlsjmFit *f, double *buf, size_t len);

/**
 * Posterior mean respondent distances, row-major `n x n`.
 *
 * # Safety
 * `buf` must hold `len` doubles.
 */
enum DlsjmStatus dlsjm_fit_person_distances(const struct DlsjmFit *f, double *buf, size_t len);

/**
 * Posterior mean item distances, row-major `p x p`.
 *
 * # Safety
 * `buf` must hold `len` doubles.
 */
enum DlsjmStatus dlsjm_fit_item_distances(const struct DlsjmFit *f, double *buf, size_t len);

/**
 * Posterior mean respondent positions, row-major `n x dim`.
 *
 * # Safety
 * `buf` must hold `len` doubles.
 */
enum DlsjmStatus dlsjm_fit_person_positions(const struct DlsjmFit *f, double *buf, size_t len);

/**
 * # Safety
 * `f` must come from this library (or be null) and not be used afterwards.
 */
void dlsjm_fit_free(struct DlsjmFit *f);

/**
 * Spectral clustering of an `m x m` distance matrix into `g` groups using a
 * `k`-nearest-neighbour graph. Writes 0-based labels.
 *
 * # Safety
 * `dist` must hold `m * m` doubles and `labels` `m` entries.
 */
enum DlsjmStatus dlsjm_spectral_cluster(const double *dist,
                                        size_t m,
                                        size_t g,
                                        size_t k,
                                        uint64_t seed,
                                        size_t *labels);

/**
 * Full pipeline into a run directory, as the command-line `fit` does.
 * `config` may be null for defaults; `seed` overrides the file.
 *
 * # Safety
 * Path arguments must be NUL-terminated strings.
 */
enum DlsjmStatus dlsjm_run_fit(const char *config,
                               const char *input,
                               const char *out_dir,
                               uint64_t seed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DLSJM_H */
