#ifndef GRADPHI_H
#define GRADPHI_H

/* Generated by cbindgen from the gradphi-ffi sources; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GpStatus {
  GP_STATUS_OK = 0,
  GP_STATUS_INVALID_ARGUMENT = 1,
  GP_STATUS_NULL_POINTER = 2,
  GP_STATUS_NUMERICAL = 3,
  GP_STATUS_SIZE_CAP = 4,
  GP_STATUS_PANIC = 5,
} GpStatus;

// Exact Gaussian oracle on one cube.
typedef struct GpGaussian GpGaussian;

// Parsed interaction potential.
typedef struct GpPotential GpPotential;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer is
// valid until the next call into the library from the same thread.
const char *gradphi_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *gradphi_version(void);

// Parses `quadratic:<beta>` or `logcosh:<a>` and checks ellipticity.
//
// # Safety
// `spec` must be a NUL-terminated string and `out_handle` a valid pointer.
enum GpStatus gradphi_potential_parse(const char *spec, struct GpPotential **out_handle);

// # Safety
// `v` must come from [`gradphi_potential_parse`] and not be used afterwards.
void gradphi_potential_free(struct GpPotential *v);

// V(x).
//
// # Safety
// `v` must be a live potential handle and `value` a valid pointer.
enum GpStatus gradphi_potential_eval(const struct GpPotential *v, double x, double *value);

// V'(x).
//
// # Safety
// `v` must be a live potential handle and `value` a valid pointer.
enum GpStatus gradphi_potential_deriv(const struct GpPotential *v, double x, double *value);

// V''(x).
//
// # Safety
// `v` must be a live potential handle and `value` a valid pointer.
enum GpStatus gradphi_potential_second_deriv(const struct GpPotential *v, double x, double *value);

// Ellipticity constant λ with λ ≤ V'' ≤ 1/λ.
//
// # Safety
// `v` must be a live potential handle and `value` a valid pointer.
enum GpStatus gradphi_potential_lambda(const struct GpPotential *v, double *value);

// Exact Gaussian oracle for V(x) = βx² on the cube of side 3^n in Z^d.
//
// # Safety
// `out_handle` must be a valid pointer.
enum GpStatus gradphi_gff_new(uintptr_t d, uint32_t n, double beta, struct GpGaussian **out_handle);

// # Safety
// `g` must come from [`gradphi_gff_new`] and not be used afterwards.
void gradphi_gff_free(struct GpGaussian *g);

// ν at tilt `p[0..len]`.
//
// # Safety
// `g` must be live, `p` must hold `len` doubles and `value` be valid.
enum GpStatus gradphi_gff_nu(const struct GpGaussian *g,
                             const double *p,
                             uintptr_t len,
                             double *value);

// ν* at tilt `q[0..len]`.
//
// # Safety
// `g` must be live, `q` must hold `len` doubles and `value` be valid.
enum GpStatus gradphi_gff_nustar(const struct GpGaussian *g,
                                 const double *q,
                                 uintptr_t len,
                                 double *value);

// Gradient of ν* at `q`, written to `grad[0..len]`.
//
// # Safety
// `g` must be live and `q`, `grad` must each hold `len` doubles.
enum GpStatus gradphi_gff_grad_nustar(const struct GpGaussian *g,
                                      const double *q,
                                      uintptr_t len,
                                      double *grad);

// Trace of the Dirichlet covariance.
//
// # Safety
// `g` must be live and `value` valid.
enum GpStatus gradphi_gff_l2_trace(const struct GpGaussian *g, double *value);

// Limit and rate of value_n ≈ limit + A·3^{−rate·n} from `len` levels.
//
// # Safety
// `levels` and `values` must hold `len` entries; `limit` and `rate` valid.
enum GpStatus gradphi_extrapolate_limit(const uint32_t *levels,
                                        const double *values,
                                        uintptr_t len,
                                        double *limit,
                                        double *rate);

// Monte Carlo ν(Q_n, p) (`dual == 0`) or ν*(Q_n, q) (`dual != 0`) with its
// standard error.
//
// # Safety
// `v` must be live, `tilt` must hold `d` doubles, `value` and `stderr` valid.
enum GpStatus gradphi_surface_tension_estimate(const struct GpPotential *v,
                                               uintptr_t d,
                                               uint32_t n,
                                               const double *tilt,
                                               int32_t dual,
                                               uintptr_t steps,
                                               uintptr_t burn_in,
                                               uint64_t seed,
                                               double *value,
                                               double *stderr);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRADPHI_H */
