/* Generated by cbindgen from crates/ffi; do not edit. */

#ifndef MDPDE_H
#define MDPDE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every call.
 */
typedef enum MdpdeStatus {
  MDPDE_STATUS_OK = 0,
  MDPDE_STATUS_INVALID_ARGUMENT = 1,
  MDPDE_STATUS_NUMERICAL = 2,
  MDPDE_STATUS_PARSE = 3,
  MDPDE_STATUS_IO = 4,
  MDPDE_STATUS_NULL_POINTER = 5,
  MDPDE_STATUS_PANIC = 6,
} MdpdeStatus;

/*
 Estimation result together with the tuning parameter used.
 */
typedef struct MdpdeFit MdpdeFit;

/*
 Observed or simulated sample path.
 */
typedef struct MdpdePath MdpdePath;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null after a success.
 The pointer stays valid until the next call on the same thread.
 */
const char *mdpde_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *mdpde_version(void);

/*
 Euler path of `dX = (B X + b) dt + Sigma^{1/2} dW` with `n` steps of size `h`.

 # Safety
 `drift_matrix` and `sigma` point to `d*d` doubles, `intercept` and `x0` to `d`.
 */
enum MdpdeStatus mdpde_path_simulate(const double *drift_matrix,
                                     const double *intercept,
                                     const double *sigma,
                                     const double *x0,
                                     size_t d,
                                     size_t n,
                                     double h,
                                     uint64_t seed,
                                     struct MdpdePath **out);

/*
 Path from `rows` observations of dimension `d`, row-major, spaced `h` apart.

 # Safety
 `points` points to `rows*d` doubles.
 */
enum MdpdeStatus mdpde_path_from_data(const double *points,
                                      size_t rows,
                                      size_t d,
                                      double h,
                                      struct MdpdePath **out);

/*
 Reads a CSV with header `t,x1,..,xd`.

 # Safety
 `file` is a NUL-terminated path.
 */
enum MdpdeStatus mdpde_path_read_csv(const char *file, struct MdpdePath **out);

/*
 New path with `round(eps*(n+1))` observations shifted by `kappa` times a standard normal vector.

 # Safety
 `path` is a live handle.
 */
enum MdpdeStatus mdpde_path_contaminate(const struct MdpdePath *path,
                                        double eps,
                                        double kappa,
                                        uint64_t seed,
                                        struct MdpdePath **out);

/*
 Number of increments `n` (the path holds `n + 1` rows); 0 for null.

 # Safety
 `path` is null or a live handle.
 */
size_t mdpde_path_len(const struct MdpdePath *path);

/*
 State dimension; 0 for null.

 # Safety
 `path` is null or a live handle.
 */
size_t mdpde_path_dim(const struct MdpdePath *path);

/*
 Copies the `(n+1) x d` observations, row-major.

 # Safety
 `out` has room for `(n+1)*d` doubles.
 */
enum MdpdeStatus mdpde_path_points(const struct MdpdePath *path, double *out);

/*
 # Safety
 `path` is null or a handle not yet freed.
 */
void mdpde_path_free(struct MdpdePath *path);

/*
 Minimizes the density power divergence contrast at `alpha` from the
 least-squares start. `max_iters == 0` and `grad_tol <= 0` select defaults.

 # Safety
 `path` is a live handle.
 */
enum MdpdeStatus mdpde_fit(const struct MdpdePath *path,
                           double alpha,
                           size_t max_iters,
                           double grad_tol,
                           bool multistart,
                           struct MdpdeFit **out);

/*
 Dimension of the fitted model; 0 for null.

 # Safety
 `fit` is null or a live handle.
 */
size_t mdpde_fit_dim(const struct MdpdeFit *fit);

/*
 Whether the gradient tolerance was reached; false for null.

 # Safety
 `fit` is null or a live handle.
 */
bool mdpde_fit_converged(const struct MdpdeFit *fit);

/*
 Copies `B` (row-major, `d*d`), `b` (`d`) and `Sigma` (row-major, `d*d`).
 Any output pointer may be null to skip it.

 # Safety
 Non-null outputs have the stated room.
 */
enum MdpdeStatus mdpde_fit_params(const struct MdpdeFit *fit,
                                  double *drift_matrix,
                                  double *intercept,
                                  double *sigma);

/*
 Objective value, iteration count and final gradient max-norm; null outputs are skipped.

 # Safety
 `fit` is a live handle.
 */
enum MdpdeStatus mdpde_fit_summary(const struct MdpdeFit *fit,
                                   double *objective,
                                   size_t *iterations,
                                   double *grad_norm);

/*
 Fit result as JSON; release with [`mdpde_string_free`].

 # Safety
 `fit` is a live handle.
 */
enum MdpdeStatus mdpde_fit_to_json(const struct MdpdeFit *fit, char **out);

/*
 Wald test of `beta = beta_null`, with `beta = (vec(B) column-major, b)` of
 length `d*d + d`, using the plug-in drift covariance on `path`.

 # Safety
 Handles are live, `beta_null` has `len` doubles, outputs are valid.
 */
enum MdpdeStatus mdpde_wald(const struct MdpdeFit *fit,
                            const struct MdpdePath *path,
                            const double *beta_null,
                            size_t len,
                            double *stat,
                            double *pvalue);

/*
 Full plug-in inference report as JSON; release with [`mdpde_string_free`].

 # Safety
 Handles are live and `beta_null` has `len` doubles.
 */
enum MdpdeStatus mdpde_inference_json(const struct MdpdeFit *fit,
                                      const struct MdpdePath *path,
                                      const double *beta_null,
                                      size_t len,
                                      char **out);

/*
 # Safety
 `fit` is null or a handle not yet freed.
 */
void mdpde_fit_free(struct MdpdeFit *fit);

/*
 Releases a string returned by this library.

 # Safety
 `s` is null or came from this library and was not yet freed.
 */
void mdpde_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MDPDE_H */
