#ifndef BOOTROUTE_H
#define BOOTROUTE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum BrStatus {
  BR_STATUS_OK = 0,
  BR_STATUS_NULL_ARGUMENT = 1,
  BR_STATUS_INVALID_UTF8 = 2,
  BR_STATUS_INVALID_ARGUMENT = 3,
  BR_STATUS_CONFIG = 4,
  BR_STATUS_NO_ELIGIBLE_MODELS = 5,
  // Every candidate failed; a partial trace is still returned.
  BR_STATUS_ALL_CANDIDATES_FAILED = 6,
  BR_STATUS_RUNTIME = 7,
  BR_STATUS_PANIC = 8,
} BrStatus;

// A router with its own async runtime.
typedef struct BrRouter BrRouter;

// A routing trace with cached string views.
typedef struct BrTrace BrTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. Valid until the
// next call into this library on the same thread.
const char *br_last_error_message(void);

// Creates a router from a TOML or JSON config file.
//
// # Safety
// `path` must be a valid C string; `out_router` must be writable.
enum BrStatus br_router_new_from_file(const char *path, struct BrRouter **out_router);

// Creates a router from config text; `is_toml` selects TOML over JSON. A
// relative `mock_scripts` path resolves against the working directory.
//
// # Safety
// `source` must be a valid C string; `out_router` must be writable.
enum BrStatus br_router_new_from_str(const char *source,
                                     bool is_toml,
                                     struct BrRouter **out_router);

// # Safety
// `router` must be NULL or a handle from `br_router_new_*` not yet freed.
void br_router_free(struct BrRouter *router);

// Routes one query. On [`BrStatus::Ok`] and [`BrStatus::AllCandidatesFailed`]
// `*out_trace` receives a trace (partial in the latter case); otherwise it
// is set to NULL.
//
// # Safety
// `router` must be a live handle; `query_id` and `text` valid C strings;
// `out_trace` writable.
enum BrStatus br_route(const struct BrRouter *router,
                       const char *query_id,
                       const char *text,
                       struct BrTrace **out_trace);

// Final answer, borrowed from the trace.
//
// # Safety
// `trace` must be NULL or a live handle.
const char *br_trace_final_text(const struct BrTrace *trace);

// Total cost as a decimal string rounded to 6 places, borrowed from the trace.
//
// # Safety
// `trace` must be NULL or a live handle.
const char *br_trace_cost(const struct BrTrace *trace);

// # Safety
// `trace` must be NULL or a live handle.
size_t br_trace_call_count(const struct BrTrace *trace);

// Prompt plus completion tokens over every call.
//
// # Safety
// `trace` must be NULL or a live handle.
uint64_t br_trace_total_tokens(const struct BrTrace *trace);

// The full trace as JSON; free with [`br_string_free`]. NULL on failure.
//
// # Safety
// `trace` must be NULL or a live handle.
char *br_trace_to_json(const struct BrTrace *trace);

// # Safety
// `trace` must be NULL or a handle from [`br_route`] not yet freed.
void br_trace_free(struct BrTrace *trace);

// # Safety
// `s` must be NULL or a string returned as `char *` by this library.
void br_string_free(char *s);

// Best k for `scores[i]`, `costs[i]` describing k = i + 1. Ties go to the
// smaller k.
//
// # Safety
// `scores` and `costs` must each hold `len` values; `out_k` must be writable.
enum BrStatus br_optimal_k(const double *scores,
                           const double *costs,
                           size_t len,
                           double lambda,
                           size_t *out_k);

// `1 − Π values`, with each value read at its shortest decimal form so that
// `{0.9, 0.9}` gives exactly 0.19.
//
// # Safety
// `values` must hold `len` values; `out` must be writable.
enum BrStatus br_cumulative_error(const double *values, size_t len, double *out);

// Marks each point on the score/cost Pareto frontier: `out_mask[i]` is 1 if
// point i is undominated, else 0.
//
// # Safety
// `scores` and `costs` must hold `len` values; `out_mask` must have room
// for `len` bytes.
enum BrStatus br_pareto_frontier(const double *scores,
                                 const double *costs,
                                 size_t len,
                                 uint8_t *out_mask);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BOOTROUTE_H */
