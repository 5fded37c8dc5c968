#ifndef CRITJUMP_H
#define CRITJUMP_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Which branch of the dichotomy produced a second solution.
 */
typedef enum CjCase {
  CJ_CASE_ZERO_ALTITUDE = 0,
  CJ_CASE_MOUNTAIN_PASS = 1,
} CjCase;

/**
 * Outcome of a call.
 */
typedef enum CjStatus {
  CJ_STATUS_OK = 0,
  CJ_STATUS_INVALID_ARGUMENT = 1,
  CJ_STATUS_NO_SOLUTION = 2,
  CJ_STATUS_STALL_ABOVE_THRESHOLD = 3,
  CJ_STATUS_NOT_CONVERGED = 4,
  CJ_STATUS_NULL_POINTER = 5,
  CJ_STATUS_BUFFER_TOO_SMALL = 6,
  CJ_STATUS_PANIC = 7,
  CJ_STATUS_FAILURE = 8,
} CjStatus;

/**
 * Grid, eigenpair and solver options.
 */
typedef struct CjContext CjContext;

/**
 * A second solution with its level certificate.
 */
typedef struct CjSecond CjSecond;

/**
 * A first solution and its diagnostics.
 */
typedef struct CjSolution CjSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` as a
 * NUL-terminated string and returns its full length in bytes (without the
 * terminator). With a null `buf` or zero `len` only the length is returned.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t cj_last_error_message(char *buf, size_t len);

/**
 * Radial grid with `m` nodes for the unit ball in `R^n`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum CjStatus cj_context_new_radial(size_t n, size_t m, struct CjContext **out);

/**
 * Cube grid with `m` interior nodes per direction.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum CjStatus cj_context_new_box(size_t m, struct CjContext **out);

/**
 * Discrete principal eigenvalue of the context's grid.
 *
 * # Safety
 * `ctx` must be a live handle or null.
 */
double cj_context_lambda1(const struct CjContext *ctx);

/**
 * Number of unknowns of the context's grid.
 *
 * # Safety
 * `ctx` must be a live handle or null.
 */
size_t cj_context_len(const struct CjContext *ctx);

/**
 * # Safety
 * `ctx` must be null or a handle not yet freed.
 */
void cj_context_free(struct CjContext *ctx);

/**
 * First solution for `(n, delta, a, lambda)` on the context's domain.
 *
 * # Safety
 * `ctx` must be a live handle; `out` must be valid for one handle.
 */
enum CjStatus cj_first_solution(const struct CjContext *ctx,
                                size_t n,
                                double delta,
                                double a,
                                double lambda,
                                struct CjSolution **out);

/**
 * Nodal values of a first solution into `buf` (at least
 * [`cj_context_len`] entries).
 *
 * # Safety
 * `sol` must be a live handle; `buf` must point to `len` writable doubles.
 */
enum CjStatus cj_solution_values(const struct CjSolution *sol, double *buf, size_t len);

/**
 * Relative strong-form residual of a first solution.
 *
 * # Safety
 * `sol` must be a live handle or null.
 */
double cj_solution_residual(const struct CjSolution *sol);

/**
 * Energy of a first solution.
 *
 * # Safety
 * `sol` must be a live handle or null.
 */
double cj_solution_energy(const struct CjSolution *sol);

/**
 * # Safety
 * `sol` must be null or a handle not yet freed.
 */
void cj_solution_free(struct CjSolution *sol);

/**
 * Second solution above `first`, with random probes seeded by `seed`.
 *
 * # Safety
 * `ctx` and `first` must be live handles, `first` computed on `ctx`;
 * `out` must be valid for one handle.
 */
enum CjStatus cj_second_solution(const struct CjContext *ctx,
                                 const struct CjSolution *first,
                                 uint64_t seed,
                                 struct CjSecond **out);

/**
 * Values of the composed second solution `u_λ + v_λ`.
 *
 * # Safety
 * `sec` must be a live handle; `buf` must point to `len` writable doubles.
 */
enum CjStatus cj_second_values(const struct CjSecond *sec, double *buf, size_t len);

/**
 * Critical level, or NaN for a zero-altitude result.
 *
 * # Safety
 * `sec` must be a live handle or null.
 */
double cj_second_gamma0(const struct CjSecond *sec);

/**
 * Compactness threshold the level was certified against.
 *
 * # Safety
 * `sec` must be a live handle or null.
 */
double cj_second_threshold(const struct CjSecond *sec);

/**
 * Strong-form residual of the composed second solution.
 *
 * # Safety
 * `sec` must be a live handle or null.
 */
double cj_second_residual(const struct CjSecond *sec);

/**
 * # Safety
 * `sec` must be a live handle; `out` must be valid for one value.
 */
enum CjStatus cj_second_case(const struct CjSecond *sec, enum CjCase *out);

/**
 * # Safety
 * `sec` must be null or a handle not yet freed.
 */
void cj_second_free(struct CjSecond *sec);

/**
 * Whole-space Talenti integrals `A`, `B` and the Sobolev constant `S`.
 *
 * # Safety
 * Each output pointer must be valid for one double.
 */
enum CjStatus cj_sobolev_constants(size_t n, double *a, double *b, double *s);

/**
 * `K(a)` and the nonexistence bound `lambda1 / K(a)`.
 *
 * # Safety
 * Both output pointers must be valid for one double.
 */
enum CjStatus cj_nonexistence_bound(size_t n,
                                    double delta,
                                    double a_level,
                                    double lambda1,
                                    double *k_out,
                                    double *bound_out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* CRITJUMP_H */
