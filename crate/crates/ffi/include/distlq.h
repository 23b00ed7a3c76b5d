#ifndef DISTLQ_H
#define DISTLQ_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes; the nonzero library codes match the CLI exit codes.
 */
typedef enum DlqStatus {
  DLQ_STATUS_OK = 0,
  /**
   * Bad configuration or argument.
   */
  DLQ_STATUS_INVALID_INPUT = 2,
  /**
   * Subspace not QI, or singular quadratic.
   */
  DLQ_STATUS_PRECONDITION = 3,
  /**
   * Internal consistency check or I/O failure.
   */
  DLQ_STATUS_INTERNAL = 4,
  DLQ_STATUS_NULL_POINTER = 5,
  DLQ_STATUS_PANIC = 6,
} DlqStatus;

/**
 * Opaque problem handle: a plant, its lifted operators and a policy subspace.
 */
typedef struct DlqProblem DlqProblem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates a problem from a named fixture (`appendix-d`, `b2`, `b3`, `quadratic`).
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
enum DlqStatus dlq_problem_from_fixture(const char *name, struct DlqProblem **out);

/**
 * Creates a problem from an experiment config in JSON (only the system,
 * pattern and noise blocks are used).
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum DlqStatus dlq_problem_from_config_json(const char *json, struct DlqProblem **out);

/**
 * Releases a problem. NULL is ignored.
 *
 * # Safety
 * `problem` must come from one of the constructors and not be used afterwards.
 */
void dlq_problem_free(struct DlqProblem *problem);

/**
 * Subspace dimension `d`; 0 for NULL.
 *
 * # Safety
 * `problem` must be NULL or a live handle.
 */
size_t dlq_problem_dim(const struct DlqProblem *problem);

/**
 * Writes whether the subspace is quadratically invariant.
 *
 * # Safety
 * `problem` must be a live handle; `out` must be writable.
 */
enum DlqStatus dlq_is_qi(const struct DlqProblem *problem, bool *out);

/**
 * Exact expected cost at subspace coordinates `z`.
 *
 * # Safety
 * `z` must point to `len` doubles; `out` must be writable.
 */
enum DlqStatus dlq_exact_cost(const struct DlqProblem *problem,
                              const double *z,
                              size_t len,
                              double *out);

/**
 * Optimal coordinates and cost: QI oracle, or damped Newton when `direct`.
 *
 * # Safety
 * `z_out` must point to `len` writable doubles; `j_out` must be writable.
 */
enum DlqStatus dlq_solve(const struct DlqProblem *problem,
                         bool direct,
                         double *z_out,
                         size_t len,
                         double *j_out);

/**
 * Runs `iterations` steps of the one-point zeroth-order learner from `z0`
 * against simulated rollouts and writes the final iterate.
 *
 * # Safety
 * `z0` must point to `len` doubles and `z_out` to `len` writable doubles.
 */
enum DlqStatus dlq_learn(const struct DlqProblem *problem,
                         double eta,
                         double r,
                         uint64_t iterations,
                         uint64_t seed,
                         const double *z0,
                         double *z_out,
                         size_t len);

/**
 * Disturbance constant `D` of the plant's noise model.
 *
 * # Safety
 * `problem` must be a live handle; `out` must be writable.
 */
enum DlqStatus dlq_disturbance_constant(const struct DlqProblem *problem, double *out);

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *dlq_last_error_message(void);

/**
 * Library version, static string.
 */
const char *dlq_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DISTLQ_H */
