#ifndef SGFM_H
#define SGFM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum SgfmStatus {
  SGFM_STATUS_OK = 0,
  SGFM_STATUS_INVALID_ARGUMENT = 1,
  SGFM_STATUS_CONFIG = 2,
  SGFM_STATUS_INSTABILITY = 3,
  SGFM_STATUS_IO = 4,
  SGFM_STATUS_FORMAT = 5,
  SGFM_STATUS_NULL_POINTER = 6,
  SGFM_STATUS_PANIC = 7,
} SgfmStatus;

typedef enum SgfmWavelet {
  SGFM_WAVELET_HAAR = 0,
  SGFM_WAVELET_DAUBECHIES4 = 1,
} SgfmWavelet;

/**
 * Wavelet coefficients of a field.
 */
typedef struct SgfmCoeffs SgfmCoeffs;

/**
 * A field on a periodic grid.
 */
typedef struct SgfmField SgfmField;

/**
 * Snapshots of a simulated flow.
 */
typedef struct SgfmTrajectory SgfmTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length including the NUL,
 * or 0 when there is no error.
 *
 * # Safety
 * `buf` must be valid for `len` bytes or null.
 */
uintptr_t sgfm_last_error_message(char *buf, uintptr_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sgfm_version(void);

/**
 * # Safety
 * `out` must be a valid pointer to a field pointer.
 */
enum SgfmStatus sgfm_field_zeros(uintptr_t ndim,
                                 uintptr_t n,
                                 uintptr_t channels,
                                 struct SgfmField **out);

/**
 * Builds a field from `len` channel-major values.
 *
 * # Safety
 * `data` must be valid for `len` reads; `out` must be valid.
 */
enum SgfmStatus sgfm_field_from_data(uintptr_t ndim,
                                     uintptr_t n,
                                     uintptr_t channels,
                                     const double *data,
                                     uintptr_t len,
                                     struct SgfmField **out);

/**
 * Unit white noise.
 *
 * # Safety
 * `out` must be valid.
 */
enum SgfmStatus sgfm_field_gaussian(uintptr_t ndim,
                                    uintptr_t n,
                                    uintptr_t channels,
                                    uint64_t seed,
                                    struct SgfmField **out);

/**
 * 2D Taylor–Green vortex at time `t`.
 *
 * # Safety
 * `out` must be valid.
 */
enum SgfmStatus sgfm_field_taylor_green(uintptr_t n,
                                        double viscosity,
                                        double t,
                                        struct SgfmField **out);

/**
 * Number of stored values (`channels · n^ndim`); 0 for null.
 *
 * # Safety
 * `f` must be a live field or null.
 */
uintptr_t sgfm_field_len(const struct SgfmField *f);

/**
 * # Safety
 * `f` must be a live field or null.
 */
uintptr_t sgfm_field_channels(const struct SgfmField *f);

/**
 * Copies the values into `buf`, which must hold exactly `sgfm_field_len`.
 *
 * # Safety
 * `buf` must be valid for `len` writes.
 */
enum SgfmStatus sgfm_field_copy(const struct SgfmField *f, double *buf, uintptr_t len);

/**
 * Cell-volume weighted L² norm.
 *
 * # Safety
 * `f` and `out` must be valid.
 */
enum SgfmStatus sgfm_field_l2_norm(const struct SgfmField *f, double *out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid.
 */
enum SgfmStatus sgfm_field_read(const char *path, struct SgfmField **out);

/**
 * # Safety
 * `f` must be live; `path` must be a NUL-terminated string.
 */
enum SgfmStatus sgfm_field_write(const struct SgfmField *f, const char *path);

/**
 * # Safety
 * `f` must come from this library and not be used afterwards.
 */
void sgfm_field_free(struct SgfmField *f);

/**
 * # Safety
 * `f` and `out` must be valid.
 */
enum SgfmStatus sgfm_dwt_forward(const struct SgfmField *f,
                                 enum SgfmWavelet family,
                                 uintptr_t levels,
                                 struct SgfmCoeffs **out);

/**
 * # Safety
 * `c` and `out` must be valid.
 */
enum SgfmStatus sgfm_dwt_inverse(const struct SgfmCoeffs *c, struct SgfmField **out);

/**
 * Euclidean norm of all coefficients; -1 for null.
 *
 * # Safety
 * `c` must be live or null.
 */
double sgfm_coeffs_norm(const struct SgfmCoeffs *c);

/**
 * # Safety
 * `c` must be live or null.
 */
uintptr_t sgfm_coeffs_len(const struct SgfmCoeffs *c);

/**
 * Copies the coefficients in canonical order into `buf`.
 *
 * # Safety
 * `buf` must be valid for `len` writes.
 */
enum SgfmStatus sgfm_coeffs_copy(const struct SgfmCoeffs *c, double *buf, uintptr_t len);

/**
 * # Safety
 * `c` must come from this library and not be used afterwards.
 */
void sgfm_coeffs_free(struct SgfmCoeffs *c);

/**
 * Divergence-free projection of a vector field.
 *
 * # Safety
 * `f` and `out` must be valid.
 */
enum SgfmStatus sgfm_project(const struct SgfmField *f, struct SgfmField **out);

/**
 * Largest absolute divergence of a vector field.
 *
 * # Safety
 * `f` and `out` must be valid.
 */
enum SgfmStatus sgfm_divergence_max(const struct SgfmField *f, double *out);

/**
 * Unforced projected flow from `u0`; `steps + 1` snapshots.
 *
 * # Safety
 * `u0` and `out` must be valid.
 */
enum SgfmStatus sgfm_simulate(const struct SgfmField *u0,
                              double viscosity,
                              double noise_amplitude,
                              double dt,
                              uintptr_t steps,
                              uint64_t seed,
                              struct SgfmTrajectory **out);

/**
 * # Safety
 * `t` must be live or null.
 */
uintptr_t sgfm_trajectory_len(const struct SgfmTrajectory *t);

/**
 * Copies snapshot `index` into a new field.
 *
 * # Safety
 * `t` and `out` must be valid.
 */
enum SgfmStatus sgfm_trajectory_snapshot(const struct SgfmTrajectory *t,
                                         uintptr_t index,
                                         struct SgfmField **out);

/**
 * Time of snapshot `index`; NaN when out of range.
 *
 * # Safety
 * `t` must be live or null.
 */
double sgfm_trajectory_time(const struct SgfmTrajectory *t, uintptr_t index);

/**
 * # Safety
 * `t` must come from this library and not be used afterwards.
 */
void sgfm_trajectory_free(struct SgfmTrajectory *t);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SGFM_H */
