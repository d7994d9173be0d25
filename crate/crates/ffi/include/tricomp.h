#ifndef TRICOMP_H
#define TRICOMP_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum TricompStatus {
  TRICOMP_STATUS_OK = 0,
  TRICOMP_STATUS_NULL_POINTER = 1,
  TRICOMP_STATUS_INVALID_ARGUMENT = 2,
  // No monotone wave exists below the minimal speed.
  TRICOMP_STATUS_NO_MONOTONE_WAVE = 3,
  // Regime or precondition error other than the minimal speed.
  TRICOMP_STATUS_PRECONDITION = 4,
  // The nonlinear solve failed.
  TRICOMP_STATUS_NUMERICAL = 5,
  TRICOMP_STATUS_BUFFER_TOO_SMALL = 6,
  // A Rust panic was caught at the boundary.
  TRICOMP_STATUS_PANIC = 7,
} TricompStatus;

// Parameter regime as classified by the inequalities on `(a1, a2, r)`.
typedef enum TricompRegime {
  TRICOMP_REGIME_H2A = 0,
  TRICOMP_REGIME_H2B = 1,
  TRICOMP_REGIME_UNCOVERED = 2,
  TRICOMP_REGIME_H1_VIOLATED = 3,
} TricompRegime;

// Model parameters `(a1, a2, r, tau)`.
typedef struct TricompParams TricompParams;

// A converged three-species wave in monotone coordinates.
typedef struct TricompWave TricompWave;

// Linearization rates at the two ends of the wave.
typedef struct TricompRates {
  double c;
  double c_min;
  // NaN when the roots are complex.
  double lambda_minus;
  bool complex_roots;
  bool critical;
  double mu1;
  double mu2;
  double mu3;
} TricompRates;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *tricomp_version(void);

// Message of the last failed call on this thread, empty after a success.
// The pointer stays valid until the next call into the library on the
// same thread.
const char *tricomp_last_error_message(void);

// Validates the parameters and stores a new handle in `*out`.
//
// # Safety
// `out` must be null or point to writable storage for one pointer.
enum TricompStatus tricomp_params_new(double a1,
                                      double a2,
                                      double r,
                                      double tau,
                                      struct TricompParams **out);

// Releases a parameter handle; null is ignored.
//
// # Safety
// `params` must be null or a handle from [`tricomp_params_new`] not yet freed.
void tricomp_params_free(struct TricompParams *params);

// Classifies the parameter regime.
//
// # Safety
// `params` must be a live handle and `out` writable, or either may be null.
enum TricompStatus tricomp_classify(const struct TricompParams *params, enum TricompRegime *out);

// Decay rates at both ends for speed `c`.
//
// # Safety
// `params` must be a live handle and `out` writable, or either may be null.
enum TricompStatus tricomp_rates(const struct TricompParams *params,
                                 double c,
                                 struct TricompRates *out);

// Computes the three-species wave with default iteration settings.
// `half_width <= 0` picks a domain wide enough for the tail fits;
// `h_max` bounds the grid spacing.
//
// # Safety
// `params` must be a live handle and `out` writable storage for one
// pointer, or either may be null.
enum TricompStatus tricomp_wave_solve(const struct TricompParams *params,
                                      double c,
                                      double half_width,
                                      double h_max,
                                      struct TricompWave **out);

// Number of grid nodes of the wave, ends included; 0 for null.
//
// # Safety
// `wave` must be null or a live handle.
size_t tricomp_wave_len(const struct TricompWave *wave);

// Number of monotone-iteration sweeps; 0 for null.
//
// # Safety
// `wave` must be null or a live handle.
size_t tricomp_wave_iterations(const struct TricompWave *wave);

// Copies component `component` (0 = u, 1 = 1 - v, 2 = 1 - w) into
// `values` and, when `xi` is not null, the grid nodes into `xi`. Both
// buffers must hold `len >= tricomp_wave_len(wave)` doubles.
//
// # Safety
// `wave` must be a live handle; `values` and a non-null `xi` must be
// writable for `len` doubles.
enum TricompStatus tricomp_wave_copy_profile(const struct TricompWave *wave,
                                             size_t component,
                                             double *xi,
                                             double *values,
                                             size_t len);

// Writes the three per-component residuals into `out[0..3]`.
//
// # Safety
// `wave` must be a live handle and `out` writable for three doubles.
enum TricompStatus tricomp_wave_residuals(const struct TricompWave *wave, double *out);

// Releases a wave handle; null is ignored.
//
// # Safety
// `wave` must be null or a handle from [`tricomp_wave_solve`] not yet freed.
void tricomp_wave_free(struct TricompWave *wave);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRICOMP_H */
