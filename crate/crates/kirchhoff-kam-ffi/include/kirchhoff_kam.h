#ifndef KIRCHHOFF_KAM_FFI_H
#define KIRCHHOFF_KAM_FFI_H

/* Generated by cbindgen from the kirchhoff-kam-ffi crate; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Success.
 */
#define KK_OK 0

/**
 * A required pointer was null.
 */
#define KK_ERR_NULL -1

/**
 * Configuration or input error.
 */
#define KK_ERR_CONFIG -2

/**
 * The frequency was excluded by a non-resonance condition.
 */
#define KK_ERR_EXCLUDED -3

/**
 * The iteration diverged.
 */
#define KK_ERR_DIVERGED -4

/**
 * Internal panic (a bug; the message carries the payload).
 */
#define KK_ERR_PANIC -9

/**
 * Opaque handle to a finished solver run.
 */
typedef struct KkRun KkRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Version string of the library (static storage; do not free).
 */
const char *kk_version(void);

/**
 * Returns the last error message on this thread as an owned string (caller
 * frees with `kk_string_free`), or null when no error has occurred.
 */
char *kk_last_error_message(void);

/**
 * Releases a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `s` must be a pointer previously returned by this library and not yet freed.
 */
void kk_string_free(char *s);

/**
 * Runs the solver for a JSON configuration (same schema as the CLI config
 * files). Returns an opaque handle, or null on failure (see
 * `kk_last_error_message`).
 *
 * # Safety
 * `config_json` must be null or a valid NUL-terminated UTF-8 string.
 */
KkRun *kk_run_new(const char *config_json);

/**
 * Releases a run handle. Null is a no-op.
 *
 * # Safety
 * `run` must be a handle from `kk_run_new` not yet freed.
 */
void kk_run_free(KkRun *run);

/**
 * Newton step count of a finished run; `KK_ERR_NULL` when the handle is null.
 *
 * # Safety
 * `run` must be null or a valid handle.
 */
int kk_run_steps(const KkRun *run);

/**
 * 1 when the run converged below its residual tolerance, 0 otherwise.
 *
 * # Safety
 * `run` must be null or a valid handle.
 */
int kk_run_converged(const KkRun *run);

/**
 * Final residual of the zero-mean system (NaN when the handle is null).
 *
 * # Safety
 * `run` must be null or a valid handle.
 */
double kk_run_final_residual(const KkRun *run);

/**
 * Residual of the assembled full solution (NaN when the handle is null).
 *
 * # Safety
 * `run` must be null or a valid handle.
 */
double kk_run_full_residual(const KkRun *run);

/**
 * Run summary as a JSON string (owned by the caller).
 *
 * # Safety
 * `run` must be null or a valid handle.
 */
char *kk_run_summary_json(const KkRun *run);

/**
 * Solution component as a field JSON string: `component` 0 for `v`, 1 for `p`.
 *
 * # Safety
 * `run` must be null or a valid handle.
 */
char *kk_run_solution_json(const KkRun *run, int component);

/**
 * Monte Carlo measure estimation over the configured frequency box with
 * unperturbed blocks: returns a JSON array with one
 * `{gamma, excluded_fraction, ci_low, ci_high, ...}` record per gamma
 * (owned by the caller). `gammas` points to `n_gammas` doubles.
 *
 * # Safety
 * `config_json` and `gammas` must be null or valid; `gammas` must reference
 * `n_gammas` readable doubles.
 */
char *kk_measure_json(const char *config_json, const double *gammas, int n_gammas);

/**
 * Runs the invariant self-test suite; returns `KK_OK` when every check
 * passes, `KK_ERR_CONFIG` otherwise.
 */
int kk_verify(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KIRCHHOFF_KAM_FFI_H */
