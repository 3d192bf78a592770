#ifndef STATPHASE_H
#define STATPHASE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes of every fallible call.
 */
typedef enum SpStatus {
  SP_STATUS_OK = 0,
  SP_STATUS_NULL_POINTER = 1,
  SP_STATUS_INVALID_ARGUMENT = 2,
  SP_STATUS_OUTSIDE_DOMAIN = 3,
  SP_STATUS_DEGENERATE = 4,
  SP_STATUS_ACCURACY = 5,
  SP_STATUS_RESOURCE = 6,
  SP_STATUS_PANIC = 7,
} SpStatus;

/**
 * Integration route for [`sp_integrate`].
 */
typedef enum SpMethod {
  SP_METHOD_ORACLE = 0,
  SP_METHOD_DECOMPOSITION = 1,
} SpMethod;

/**
 * Phase function on its domain.
 */
typedef struct SpPhase SpPhase;

/**
 * Compactly supported amplitude, bound to the phase it was built for.
 */
typedef struct SpSymbol SpSymbol;

/**
 * Value of one oscillatory integral.
 */
typedef struct SpIntegral {
  double re;
  double im;
  double error_estimate;
  /**
   * Pieces of the partition (1 for the oracle).
   */
  uint64_t pieces;
} SpIntegral;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread; empty if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *sp_last_error(void);

/**
 * Library version as a static string.
 */
const char *sp_version(void);

/**
 * Builds a phase from `{"family", "params", "domain"}` JSON.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a writable pointer.
 */
enum SpStatus sp_phase_from_json(const char *json, struct SpPhase **out);

/**
 * # Safety
 * `phase` must be null or a handle from [`sp_phase_from_json`] not yet freed.
 */
void sp_phase_free(struct SpPhase *phase);

/**
 * Dimension of the phase, or 0 for a null handle.
 *
 * # Safety
 * `phase` must be null or a live handle.
 */
size_t sp_phase_dim(const struct SpPhase *phase);

/**
 * Evaluates `Φ(x)` for `x` of length `dim`.
 *
 * # Safety
 * `phase` must be a live handle, `x` must point to `dim` doubles and `out`
 * must be writable.
 */
enum SpStatus sp_phase_value(const struct SpPhase *phase, const double *x, size_t dim, double *out);

/**
 * Builds a symbol from `{"family", "params"}` JSON; its support must lie
 * strictly inside the domain of `phase`.
 *
 * # Safety
 * `json` must be a NUL-terminated string, `phase` a live handle and `out`
 * writable.
 */
enum SpStatus sp_symbol_from_json(const char *json,
                                  const struct SpPhase *phase,
                                  struct SpSymbol **out);

/**
 * # Safety
 * `symbol` must be null or a handle from [`sp_symbol_from_json`] not yet
 * freed.
 */
void sp_symbol_free(struct SpSymbol *symbol);

/**
 * Runs the hypothesis audit and returns the report as a JSON object in
 * `*out_json`, to be released with [`sp_string_free`]. A degenerate phase
 * still yields a report (with `"degenerate": true`) and returns
 * `Degenerate`.
 *
 * # Safety
 * `phase` and `symbol` must be live handles and `out_json` writable.
 */
enum SpStatus sp_audit_json(const struct SpPhase *phase,
                            const struct SpSymbol *symbol,
                            char **out_json);

/**
 * Computes `I(λ) = ∫ e^{iλΦ} b` with the given method. The decomposition
 * audits the pair first and fails with `Degenerate` when the audit fails.
 *
 * # Safety
 * `phase` and `symbol` must be live handles and `out` writable.
 */
enum SpStatus sp_integrate(const struct SpPhase *phase,
                           const struct SpSymbol *symbol,
                           double lambda,
                           enum SpMethod method,
                           struct SpIntegral *out);

/**
 * Releases a string returned by the library.
 *
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void sp_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STATPHASE_H */
