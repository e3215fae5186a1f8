#ifndef DPMON_H
#define DPMON_H

/* Generated by cbindgen from dpmon-ffi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DpmStatus {
  DPM_STATUS_OK = 0,
  DPM_STATUS_NULL_POINTER = 1,
  DPM_STATUS_INVALID_UTF8 = 2,
  /**
   * Syntax or name-resolution error in a specification.
   */
  DPM_STATUS_PARSE_ERROR = 3,
  /**
   * Cycles, pacing mismatches and similar.
   */
  DPM_STATUS_SEMANTIC_ERROR = 4,
  /**
   * No valid barrier placement, bad budget or weights.
   */
  DPM_STATUS_PRIVACY_ERROR = 5,
  DPM_STATUS_TRACE_ERROR = 6,
  DPM_STATUS_EVAL_ERROR = 7,
  DPM_STATUS_INVALID_ARGUMENT = 8,
  /**
   * A panic was caught at the boundary.
   */
  DPM_STATUS_INTERNAL = 9,
} DpmStatus;

/**
 * A specification with barriers and noise in place.
 */
typedef struct DpmCompiled DpmCompiled;

/**
 * A parsed and checked specification.
 */
typedef struct DpmSpec DpmSpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the next failing call.
 */
const char *dpm_last_error(void);

/**
 * Library version as a static string.
 */
const char *dpm_version(void);

/**
 * Parses and checks a specification.
 *
 * # Safety
 * `source` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DpmStatus dpm_spec_parse(const char *source, struct DpmSpec **out);

/**
 * # Safety
 * `spec` must come from [`dpm_spec_parse`] and not be used afterwards. Null is ignored.
 */
void dpm_spec_free(struct DpmSpec *spec);

/**
 * Static sensitivity bound of `stream`; infinity when unbounded.
 *
 * # Safety
 * `spec` must be a live handle, `stream` a NUL-terminated string and `out` a valid pointer.
 */
enum DpmStatus dpm_spec_bound(const struct DpmSpec *spec, const char *stream, double *out);

/**
 * Places barriers with `heuristic` (`input-only`, `deep`, `post-aggregation`, `minimal`)
 * and a total budget `epsilon` given as a decimal or fraction string.
 *
 * # Safety
 * `spec` must be a live handle, the strings NUL-terminated and `out` a valid pointer.
 */
enum DpmStatus dpm_compile(const struct DpmSpec *spec,
                           const char *heuristic,
                           const char *epsilon,
                           bool tree_aggregation,
                           struct DpmCompiled **out);

/**
 * # Safety
 * `compiled` must come from [`dpm_compile`] and not be used afterwards. Null is ignored.
 */
void dpm_compiled_free(struct DpmCompiled *compiled);

/**
 * The compiled specification text; free with [`dpm_string_free`]. Null on a null handle.
 *
 * # Safety
 * `compiled` must be a live handle or null.
 */
char *dpm_compiled_text(const struct DpmCompiled *compiled);

/**
 * The barrier sidecar as JSON; free with [`dpm_string_free`]. Null on a null handle.
 *
 * # Safety
 * `compiled` must be a live handle or null.
 */
char *dpm_compiled_sidecar(const struct DpmCompiled *compiled);

/**
 * Evaluates compiled specification text over a CSV trace up to `horizon`
 * (seconds, as a decimal or fraction string) and writes the releases as JSONL.
 *
 * # Safety
 * The strings must be NUL-terminated and `out` a valid pointer. The result
 * must be freed with [`dpm_string_free`].
 */
enum DpmStatus dpm_run(const char *compiled_text,
                       const char *trace_csv,
                       const char *horizon,
                       uint64_t seed,
                       bool public_only,
                       char **out);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards. Null is ignored.
 */
void dpm_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DPMON_H */
