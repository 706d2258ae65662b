#ifndef LATNKM_H
#define LATNKM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum LatnkmFeatures {
  LATNKM_FEATURES_UNIT_NORM_POLYNOMIAL = 0,
  LATNKM_FEATURES_POLYNOMIAL = 1,
} LatnkmFeatures;

typedef enum LatnkmHessian {
  LATNKM_HESSIAN_FULL = 0,
  LATNKM_HESSIAN_GGN = 1,
  LATNKM_HESSIAN_BLOCK = 2,
  LATNKM_HESSIAN_DIAG = 3,
  LATNKM_HESSIAN_LAST_CORE = 4,
} LatnkmHessian;

typedef enum LatnkmStatus {
  LATNKM_STATUS_OK = 0,
  LATNKM_STATUS_NULL_POINTER = 1,
  LATNKM_STATUS_INVALID_ARGUMENT = 2,
  LATNKM_STATUS_CONFIG = 3,
  LATNKM_STATUS_DATA = 4,
  LATNKM_STATUS_NUMERICAL = 5,
  LATNKM_STATUS_IO = 6,
  LATNKM_STATUS_ARTIFACT = 7,
  LATNKM_STATUS_PANIC = 8,
} LatnkmStatus;

/**
 * Opaque fitted model.
 */
typedef struct LatnkmPosterior LatnkmPosterior;

/**
 * Training options. A non-positive `beta` or `gamma` means "learn it".
 */
typedef struct LatnkmFitOptions {
  size_t rank;
  size_t local_dim;
  enum LatnkmFeatures features;
  enum LatnkmHessian hessian;
  double threshold;
  bool threshold_relative;
  size_t epochs;
  size_t vi_rounds;
  double beta;
  double gamma;
  uint64_t seed;
} LatnkmFitOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Defaults: `R = 2`, `I = 4`, unit-norm features, last-core Hessian,
 * relative threshold `1e-5`, 25 epochs, 5 variational rounds.
 */
struct LatnkmFitOptions latnkm_fit_options_default(void);

/**
 * Fits a posterior to `x` (`n × d`, row-major) and `y` (`n`). The inputs
 * are used as given, without standardization.
 *
 * # Safety
 * `x` must point to `n * d` doubles, `y` to `n` doubles, and `out` to
 * writable storage for one handle pointer. `options` may be null.
 */
enum LatnkmStatus latnkm_fit(const double *x,
                             size_t n,
                             size_t d,
                             const double *y,
                             const struct LatnkmFitOptions *options,
                             struct LatnkmPosterior **out);

/**
 * Loads a model artifact written by [`latnkm_save`] or the CLI.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum LatnkmStatus latnkm_load(const char *path, struct LatnkmPosterior **out);

/**
 * # Safety
 * `h` must be a live handle and `path` a NUL-terminated string.
 */
enum LatnkmStatus latnkm_save(const struct LatnkmPosterior *h, const char *path);

/**
 * Input dimensionality `D` the model expects.
 *
 * # Safety
 * `h` must be a live handle and `out` writable.
 */
enum LatnkmStatus latnkm_n_dims(const struct LatnkmPosterior *h, size_t *out);

/**
 * Number of retained eigenpairs of the posterior covariance.
 *
 * # Safety
 * `h` must be a live handle and `out` writable.
 */
enum LatnkmStatus latnkm_retained_rank(const struct LatnkmPosterior *h, size_t *out);

/**
 * Linearized predictive mean and variance for each of `n` points.
 *
 * # Safety
 * `x` must hold `n * d` doubles; `mean` and `variance` `n` each.
 */
enum LatnkmStatus latnkm_predict_lla(const struct LatnkmPosterior *h,
                                     const double *x,
                                     size_t n,
                                     size_t d,
                                     double *mean,
                                     double *variance);

/**
 * Mean and total variance of the Monte-Carlo mixture over `samples`
 * posterior draws.
 *
 * # Safety
 * As for [`latnkm_predict_lla`].
 */
enum LatnkmStatus latnkm_predict_la(const struct LatnkmPosterior *h,
                                    const double *x,
                                    size_t n,
                                    size_t d,
                                    size_t samples,
                                    uint64_t seed,
                                    double *mean,
                                    double *variance);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `h` must come from this library and not be used afterwards.
 */
void latnkm_free(struct LatnkmPosterior *h);

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next call into the library on this thread.
 */
const char *latnkm_last_error(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LATNKM_H */
