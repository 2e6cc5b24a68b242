#ifndef NONHOLO_H
#define NONHOLO_H

/* Generated by cbindgen from the nonholo-ffi crate; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Momentum outcomes of [`nh_jump_probe`].
typedef enum NhDecision {
  NH_DECISION_NO_JUMP_CONTAINED = 0,
  NH_DECISION_NO_JUMP_COMPATIBLE = 1,
  NH_DECISION_JUMP = 2,
} NhDecision;

// Status codes shared by every fallible call.
typedef enum NhStatus {
  NH_STATUS_OK = 0,
  // Invalid argument, scenario, or state.
  NH_STATUS_INVALID_INPUT = 2,
  // A crossing's outgoing subspace is path-dependent or non-convergent.
  NH_STATUS_INDETERMINATE = 3,
  // Integration failed.
  NH_STATUS_INTEGRATION_FAILURE = 4,
  // Null pointer argument.
  NH_STATUS_NULL_POINTER = 5,
  // Degenerate constraint rows where independence is required.
  NH_STATUS_DEGENERATE = 6,
  // Internal panic; the library state is still consistent.
  NH_STATUS_PANIC = 7,
} NhStatus;

// Opaque mechanical system handle.
typedef struct NhSystem NhSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length in bytes.
//
// # Safety
// `buf` must point to `len` writable bytes, or be null (then only the
// length is returned).
size_t nh_last_error(char *buf, size_t len);

// Particle in the plane; free on `x <= 0`, velocity constrained to
// `xdot = ydot` on `x > 0`.
//
// # Safety
// `out` must be a valid pointer to an `NhSystem*` slot.
enum NhStatus nh_system_plane_particle(double mass, struct NhSystem **out);

// Sphere on a half-smooth, half-rough plane; 5 coordinates
// `(x, y, q1, q2, q3)`.
//
// # Safety
// `out` must be a valid pointer to an `NhSystem*` slot.
enum NhStatus nh_system_rolling_sphere(double radius,
                                       double gyration,
                                       double mass,
                                       struct NhSystem **out);

// Particle in 3-space under a central force with one curved constraint
// row that collapses on the line `x = 0, z = y^2`.
//
// # Safety
// `out` must be a valid pointer to an `NhSystem*` slot.
enum NhStatus nh_system_central_force(struct NhSystem **out);

// Release a system handle. Null is a no-op.
//
// # Safety
// `sys` must be a handle returned by one of the constructors, not yet
// freed.
void nh_system_free(struct NhSystem *sys);

// Chart dimension of the system; 0 for a null handle.
//
// # Safety
// `sys` must be a live handle or null.
size_t nh_system_dim(const struct NhSystem *sys);

// Pointwise constraint rank at `q` (length `len = dim`).
//
// # Safety
// `sys` must be a live handle; `q` must point to `len` doubles;
// `rank_out` must be writable.
enum NhStatus nh_rank_at(const struct NhSystem *sys, const double *q, size_t len, size_t *rank_out);

// Classify `q` by sampling ranks on a sphere of `radius`;
// `is_singular_out` receives 0/1, `rank_out` the rank at `q`. Pass
// `samples = 0` for the default `4 * dim`.
//
// # Safety
// Pointer arguments as in [`nh_rank_at`].
enum NhStatus nh_classify_point(const struct NhSystem *sys,
                                const double *q,
                                size_t len,
                                double radius,
                                size_t samples,
                                int32_t *is_singular_out,
                                size_t *rank_out);

// Total energy `T + U` at `(q, p)`.
//
// # Safety
// Pointer arguments as in [`nh_rank_at`].
enum NhStatus nh_total_energy(const struct NhSystem *sys,
                              const double *q,
                              const double *p,
                              size_t len,
                              double *energy_out);

// Resolve a potential crossing at `q` with incoming momentum `p_minus`
// along ballistic one-sided continuations. On `Ok`, `p_plus_out` (length
// `len`) holds the outgoing momentum, `delta_t_out` the kinetic-energy
// drop, and `decision_out` the [`NhDecision`].
//
// # Safety
// `p_plus_out` must point to `len` writable doubles; other arguments as
// in [`nh_rank_at`].
enum NhStatus nh_jump_probe(const struct NhSystem *sys,
                            const double *q,
                            const double *p_minus,
                            size_t len,
                            double *p_plus_out,
                            double *delta_t_out,
                            enum NhDecision *decision_out);

// Run a scenario file end to end, writing its outputs next to the file.
// Status mirrors the CLI exit codes.
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string.
enum NhStatus nh_run_scenario(const char *path);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* NONHOLO_H */
