/* C interface to the warpreg curve-registration library. */

#ifndef WARPREG_H
#define WARPREG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes of the C API.
 */
typedef enum WarpregStatus {
  WARPREG_STATUS_OK = 0,
  WARPREG_STATUS_NULL_POINTER = 1,
  WARPREG_STATUS_INVALID_ARGUMENT = 2,
  WARPREG_STATUS_INVALID_DATA = 3,
  WARPREG_STATUS_NUMERICAL_ERROR = 4,
  WARPREG_STATUS_IO_ERROR = 5,
  WARPREG_STATUS_NOT_FOUND = 6,
  WARPREG_STATUS_BUFFER_TOO_SMALL = 7,
  WARPREG_STATUS_PANIC = 8,
} WarpregStatus;

/*
 Opaque dataset handle.
 */
typedef struct WarpregDataset WarpregDataset;

/*
 Opaque fitted-model handle.
 */
typedef struct WarpregFit WarpregFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the most recent failure on this thread. The pointer stays
 valid until the next failing call on the same thread.
 */
const char *warpreg_last_error_message(void);

/*
 Static version string of the library.
 */
const char *warpreg_version(void);

/*
 Free a string returned by this library. Null is ignored.

 # Safety
 `s` must be a pointer previously returned by a `warpreg_*` function that
 documents this free routine, and must not have been freed already.
 */
void warpreg_string_free(char *s);

/*
 Load a dataset from a long-format CSV file (header `curve_id,t,y`).

 # Safety
 `path` must be a valid NUL-terminated string; `out` must be a valid
 pointer to receive the handle.
 */
enum WarpregStatus warpreg_dataset_from_csv(const char *path, struct WarpregDataset **out);

/*
 Build a dataset from flattened arrays: curve `i` owns
 `points_per_curve[i]` consecutive (t, y) pairs. Times must be strictly
 increasing within each curve and lie in [0, 1]. Curves are named
 "c001", "c002", ...

 # Safety
 `points_per_curve` must hold `n_curves` readable entries and `ts`/`ys`
 must hold their sum; `out` must be valid.
 */
enum WarpregStatus warpreg_dataset_from_arrays(size_t n_curves,
                                               const size_t *points_per_curve,
                                               const double *ts,
                                               const double *ys,
                                               struct WarpregDataset **out);

/*
 Simulate a benchmark scenario (1 or 2) into a new dataset handle.

 # Safety
 `out` must be a valid pointer to receive the handle.
 */
enum WarpregStatus warpreg_dataset_simulate(int scenario,
                                            size_t n_curves,
                                            size_t n_points,
                                            uint64_t seed,
                                            struct WarpregDataset **out);

/*
 Number of curves in a dataset; zero for a null handle.

 # Safety
 `dataset` must be a live handle from this library or null.
 */
size_t warpreg_dataset_num_curves(const struct WarpregDataset *dataset);

/*
 Destroy a dataset handle. Null is ignored.

 # Safety
 `dataset` must be a handle from this library, not yet freed.
 */
void warpreg_dataset_free(struct WarpregDataset *dataset);

/*
 Fit the registration model. `iters` counts post-burn-in iterations;
 pass zeros to use the defaults (2000 burn-in, 10000 iterations,
 exponent 0.75, 5 inner sweeps).

 # Safety
 `dataset` must be a live dataset handle; `out` must be valid.
 */
enum WarpregStatus warpreg_fit_run(const struct WarpregDataset *dataset,
                                   size_t shape_basis_size,
                                   size_t warp_basis_size,
                                   size_t burn_in,
                                   size_t iters,
                                   double step_exponent,
                                   size_t n_inner,
                                   uint64_t seed,
                                   struct WarpregFit **out);

/*
 Number of fitted curves; zero for a null handle.

 # Safety
 `fit` must be a live fit handle or null.
 */
size_t warpreg_fit_num_curves(const struct WarpregFit *fit);

/*
 Number of shape coefficients in a fit; zero for a null handle.

 # Safety
 `fit` must be a live fit handle or null.
 */
size_t warpreg_fit_num_shape_coeffs(const struct WarpregFit *fit);

/*
 Number of warp increments per curve; zero for a null handle.

 # Safety
 `fit` must be a live fit handle or null.
 */
size_t warpreg_fit_num_warp_increments(const struct WarpregFit *fit);

/*
 Copy the estimated shape coefficients into `buf`.

 # Safety
 `fit` must be a live fit handle; `buf` must hold `len` writable values.
 */
enum WarpregStatus warpreg_fit_shape_coeffs(const struct WarpregFit *fit, double *buf, size_t len);

/*
 Estimated noise variance.

 # Safety
 `fit` and `out` must be valid pointers.
 */
enum WarpregStatus warpreg_fit_noise_var(const struct WarpregFit *fit, double *out);

/*
 Estimated Dirichlet concentration.

 # Safety
 `fit` and `out` must be valid pointers.
 */
enum WarpregStatus warpreg_fit_concentration(const struct WarpregFit *fit, double *out);

/*
 Estimated amplitude covariance, row-major 2x2 (4 values).

 # Safety
 `fit` must be a live fit handle; `buf` must hold `len` writable values.
 */
enum WarpregStatus warpreg_fit_amp_cov(const struct WarpregFit *fit, double *buf, size_t len);

/*
 Copy one curve's conditional-mean warp increments into `buf`.

 # Safety
 `fit` must be a live fit handle; `buf` must hold `len` writable values.
 */
enum WarpregStatus warpreg_fit_warp_increments(const struct WarpregFit *fit,
                                               size_t curve_index,
                                               double *buf,
                                               size_t len);

/*
 Post-burn-in acceptance rate of one curve's warp sampler.

 # Safety
 `fit` and `out` must be valid pointers.
 */
enum WarpregStatus warpreg_fit_accept_rate(const struct WarpregFit *fit,
                                           size_t curve_index,
                                           double *out);

/*
 Curve id at an index as a newly allocated string; free with
 [`warpreg_string_free`]. Null on a bad index or handle.

 # Safety
 `fit` must be a live fit handle or null.
 */
char *warpreg_fit_curve_id(const struct WarpregFit *fit, size_t curve_index);

/*
 Evaluate the fitted curve and predicted warp of one curve on `ts`
 (values in [0, 1]); `y_out` and `h_out` each receive `len` values.

 # Safety
 `fit` must be a live fit handle; `ts`, `y_out`, `h_out` must hold `len`
 readable/writable values respectively.
 */
enum WarpregStatus warpreg_fit_predict(const struct WarpregFit *fit,
                                       size_t curve_index,
                                       const double *ts,
                                       size_t len,
                                       double *y_out,
                                       double *h_out);

/*
 K-means on the fit's conditional-mean warp increments; writes one label
 per curve into `labels`.

 # Safety
 `fit` must be a live fit handle; `labels` must hold `len` writable
 entries with `len` at least the number of curves.
 */
enum WarpregStatus warpreg_cluster_warps(const struct WarpregFit *fit,
                                         size_t num_clusters,
                                         uint64_t seed,
                                         size_t restarts,
                                         size_t *labels,
                                         size_t len);

/*
 Destroy a fit handle. Null is ignored.

 # Safety
 `fit` must be a handle from this library, not yet freed.
 */
void warpreg_fit_free(struct WarpregFit *fit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WARPREG_H */
