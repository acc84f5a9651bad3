#ifndef DUALBOOK_H
#define DUALBOOK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DualbookStatus {
  DUALBOOK_STATUS_OK = 0,
  DUALBOOK_STATUS_NULL_POINTER = 1,
  DUALBOOK_STATUS_INVALID_UTF8 = 2,
  DUALBOOK_STATUS_IO = 3,
  DUALBOOK_STATUS_INVALID_INPUT = 4,
  DUALBOOK_STATUS_SHAPE = 5,
  DUALBOOK_STATUS_NUMERIC = 6,
  DUALBOOK_STATUS_BUFFER_TOO_SMALL = 7,
  DUALBOOK_STATUS_PANIC = 8,
} DualbookStatus;

typedef enum DualbookVolumeMode {
  DUALBOOK_VOLUME_MODE_BUY = 0,
  DUALBOOK_VOLUME_MODE_SELL = 1,
  DUALBOOK_VOLUME_MODE_IMBALANCE = 2,
} DualbookVolumeMode;

/**
 * Dual-space regression output.
 */
typedef struct DualbookFit DualbookFit;

/**
 * Interday correlation state matrix.
 */
typedef struct DualbookStates DualbookStates;

/**
 * Parsed trade tape.
 */
typedef struct DualbookTape DualbookTape;

/**
 * Fit statistics returned by value.
 */
typedef struct DualbookFitSummary {
  size_t rows;
  size_t cols;
  size_t rank;
  double max_imag;
  double reconstruction_error;
  double max_abs_residual;
  double orthogonality_defect;
} DualbookFitSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dualbook_version(void);

/**
 * Message of the last failed call on this thread, empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *dualbook_last_error(void);

/**
 * Parses a tape file with the default column names.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum DualbookStatus dualbook_tape_open(const char *path, struct DualbookTape **out);

/**
 * Parses tape text held in memory.
 *
 * # Safety
 * `text` must point to `len` readable bytes and `out` be writable.
 */
enum DualbookStatus dualbook_tape_parse(const char *text, size_t len, struct DualbookTape **out);

/**
 * Accepted and rejected row counts.
 *
 * # Safety
 * `tape` must be a live handle; the out pointers may be null to skip.
 */
enum DualbookStatus dualbook_tape_counts(const struct DualbookTape *tape,
                                         size_t *records,
                                         size_t *rejected);

/**
 * # Safety
 * `tape` must be null or a handle not yet freed.
 */
void dualbook_tape_free(struct DualbookTape *tape);

/**
 * Buckets the tape with the default layout and builds the state matrix.
 *
 * # Safety
 * `tape` must be a live handle and `out` writable.
 */
enum DualbookStatus dualbook_states_from_tape(const struct DualbookTape *tape,
                                              enum DualbookVolumeMode mode,
                                              struct DualbookStates **out);

/**
 * Wraps a row-major `rows x cols` matrix dated on consecutive business
 * days from 2009-01-05.
 *
 * # Safety
 * `values` must point to `rows * cols` readable doubles and `out` be writable.
 */
enum DualbookStatus dualbook_states_from_values(const double *values,
                                                size_t rows,
                                                size_t cols,
                                                struct DualbookStates **out);

/**
 * # Safety
 * `states` must be a live handle; out pointers must be writable.
 */
enum DualbookStatus dualbook_states_shape(const struct DualbookStates *states,
                                          size_t *rows,
                                          size_t *cols);

/**
 * Copies the matrix row-major into `buf`.
 *
 * # Safety
 * `states` must be a live handle and `buf` hold `len` writable doubles.
 */
enum DualbookStatus dualbook_states_values(const struct DualbookStates *states,
                                           double *buf,
                                           size_t len);

/**
 * # Safety
 * `states` must be null or a handle not yet freed.
 */
void dualbook_states_free(struct DualbookStates *states);

/**
 * Least-squares fit of the dual-space operator on the state increments.
 *
 * # Safety
 * `states` must be a live handle and `out` writable.
 */
enum DualbookStatus dualbook_fit(const struct DualbookStates *states, struct DualbookFit **out);

/**
 * # Safety
 * `fit` must be a live handle and `out` writable.
 */
enum DualbookStatus dualbook_fit_summary(const struct DualbookFit *fit,
                                         struct DualbookFitSummary *out);

/**
 * Copies the stacked `2n x 2n` operator row-major; `dim` receives `2n`.
 *
 * # Safety
 * `fit` must be a live handle, `buf` hold `len` writable doubles and
 * `dim` be null or writable.
 */
enum DualbookStatus dualbook_fit_beta(const struct DualbookFit *fit,
                                      double *buf,
                                      size_t len,
                                      size_t *dim);

/**
 * Copies the real-space residuals row-major (`rows x cols` of the summary).
 *
 * # Safety
 * `fit` must be a live handle and `buf` hold `len` writable doubles.
 */
enum DualbookStatus dualbook_fit_residuals(const struct DualbookFit *fit, double *buf, size_t len);

/**
 * # Safety
 * `fit` must be null or a handle not yet freed.
 */
void dualbook_fit_free(struct DualbookFit *fit);

/**
 * Correlation seen through independent noise: second-order and exact forms.
 *
 * # Safety
 * `approx` and `exact` must be writable.
 */
enum DualbookStatus dualbook_attenuation(double rho,
                                         double nsr1,
                                         double nsr2,
                                         double *approx,
                                         double *exact);

/**
 * Evolves `n` uniform samples with spacing `h` under drift `a` and
 * diffusion `s2` for time `t`, writing the real part to `out`.
 *
 * # Safety
 * `values` must hold `n` readable and `out` `n` writable doubles.
 */
enum DualbookStatus dualbook_pdo_evolve_1d(const double *values,
                                           size_t n,
                                           double h,
                                           double a,
                                           double s2,
                                           double t,
                                           double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DUALBOOK_H */
