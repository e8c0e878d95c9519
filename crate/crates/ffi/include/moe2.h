#ifndef MOE2_H
#define MOE2_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum Moe2Status {
  MOE2_STATUS_OK = 0,
  MOE2_STATUS_NULL_POINTER = 1,
  MOE2_STATUS_INVALID_UTF8 = 2,
  MOE2_STATUS_INVALID_INPUT = 3,
  // No nonempty subset satisfies the constraints.
  MOE2_STATUS_INFEASIBLE = 4,
  MOE2_STATUS_INTERNAL = 5,
} Moe2Status;

// Per-class deadlines and an energy budget.
typedef struct Moe2Constraints Moe2Constraints;

// Expert fleet.
typedef struct Moe2Fleet Moe2Fleet;

// Trained gating network.
typedef struct Moe2Gating Moe2Gating;

// Prompt workload with its token model.
typedef struct Moe2Workload Moe2Workload;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next failing call on the same thread.
const char *moe2_last_error(void);

// Library version as a static NUL-terminated string.
const char *moe2_version(void);

// Releases a string returned by this library.
//
// # Safety
// `s` must come from this library and not have been freed.
void moe2_string_free(char *s);

// Parses a fleet document (as written by `moe2 gen-workload`).
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum Moe2Status moe2_fleet_from_json(const char *json, struct Moe2Fleet **out);

// Number of experts, or 0 for a null handle.
//
// # Safety
// `fleet` must be null or a live handle.
size_t moe2_fleet_len(const struct Moe2Fleet *fleet);

// # Safety
// `fleet` must be null or a live handle; it is invalid afterwards.
void moe2_fleet_free(struct Moe2Fleet *fleet);

// Parses and validates a workload document.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum Moe2Status moe2_workload_from_json(const char *json, struct Moe2Workload **out);

// Number of prompts, or 0 for a null handle.
//
// # Safety
// `workload` must be null or a live handle.
size_t moe2_workload_len(const struct Moe2Workload *workload);

// Number of application classes, or 0 for a null handle.
//
// # Safety
// `workload` must be null or a live handle.
size_t moe2_workload_n_classes(const struct Moe2Workload *workload);

// # Safety
// `workload` must be null or a live handle; it is invalid afterwards.
void moe2_workload_free(struct Moe2Workload *workload);

// Parses gating parameters (`theta.json`).
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum Moe2Status moe2_gating_from_json(const char *json, struct Moe2Gating **out);

// Positive gate scores for one embedding. `scores` must hold as many
// entries as the gate has experts.
//
// # Safety
// `x` must point to `x_len` doubles and `scores` to `scores_len` writable doubles.
enum Moe2Status moe2_gating_scores(const struct Moe2Gating *gating,
                                   const double *x,
                                   size_t x_len,
                                   double *scores,
                                   size_t scores_len);

// # Safety
// `gating` must be null or a live handle; it is invalid afterwards.
void moe2_gating_free(struct Moe2Gating *gating);

// Constraint set with one deadline per application class.
//
// # Safety
// `tau_max` must point to `n_classes` doubles; `out` must be writable.
enum Moe2Status moe2_constraints_new(const double *tau_max,
                                     size_t n_classes,
                                     double e_max,
                                     struct Moe2Constraints **out);

// # Safety
// `constraints` must be null or a live handle; it is invalid afterwards.
void moe2_constraints_free(struct Moe2Constraints *constraints);

// Whether the subset in `mask` (bit i = expert i) meets every deadline and
// the energy budget on average over `workload`.
//
// # Safety
// Handles must be live; `feasible` must be writable.
enum Moe2Status moe2_is_feasible(const struct Moe2Workload *workload,
                                 const struct Moe2Fleet *fleet,
                                 const struct Moe2Constraints *constraints,
                                 uint64_t mask_bits,
                                 bool *feasible);

// Selects the best feasible subset by monotonic optimization. With a gate
// the objective is the gate's restricted loss; with `gating` null each
// subset's weights are re-optimised per prompt. Returns
// [`Moe2Status::Infeasible`] when no nonempty subset qualifies.
//
// # Safety
// `workload`, `fleet` and `constraints` must be live; `gating` may be null;
// `mask_out` must be writable.
enum Moe2Status moe2_select_subset(const struct Moe2Workload *workload,
                                   const struct Moe2Fleet *fleet,
                                   const struct Moe2Gating *gating,
                                   const struct Moe2Constraints *constraints,
                                   double epsilon,
                                   uint64_t *mask_out);

// The `k` highest-scoring members of `mask` and their renormalised weights,
// in descending score order. `experts` and `weights` must hold `k` entries.
//
// # Safety
// `scores` must point to `n` doubles; `experts` and `weights` to `k` writable entries.
enum Moe2Status moe2_top_k(const double *scores,
                           size_t n,
                           uint64_t mask_bits,
                           size_t k,
                           size_t *experts,
                           double *weights);

// Greedy top-k decoding of prompt `prompt_index`; the result is a JSON
// object (tokens, queried experts, weights, costs) to be released with
// [`moe2_string_free`].
//
// # Safety
// Handles must be live; `json_out` must be writable.
enum Moe2Status moe2_infer_json(const struct Moe2Gating *gating,
                                const struct Moe2Workload *workload,
                                const struct Moe2Fleet *fleet,
                                size_t prompt_index,
                                uint64_t mask_bits,
                                size_t k,
                                char **json_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOE2_H */
