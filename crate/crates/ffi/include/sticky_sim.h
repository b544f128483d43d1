#ifndef STICKY_SIM_H
#define STICKY_SIM_H

/* Generated by cbindgen from crates/ffi/src; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum StickyStatus {
  STICKY_STATUS_OK = 0,
  STICKY_STATUS_NULL_POINTER = 1,
  STICKY_STATUS_INVALID_ARGUMENT = 2,
  STICKY_STATUS_SPEC = 3,
  STICKY_STATUS_PARSE = 4,
  STICKY_STATUS_EVAL = 5,
  STICKY_STATUS_NUMERICAL = 6,
  STICKY_STATUS_RANGE = 7,
  STICKY_STATUS_DOMAIN = 8,
  STICKY_STATUS_QUADRATURE = 9,
  STICKY_STATUS_ENSEMBLE = 10,
  STICKY_STATUS_IO = 11,
  STICKY_STATUS_BUFFER_TOO_SMALL = 12,
  STICKY_STATUS_PANIC = 13,
} StickyStatus;

// One simulated path of the delayed process on the output grid.
typedef struct StickyPath StickyPath;

// Process specification: coefficients plus sticky points.
typedef struct StickySpec StickySpec;

typedef struct StickyPointInfo {
  double x;
  double p_plus;
  double p_minus;
  double alpha;
} StickyPointInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread; empty if none. The pointer
// stays valid until the next failing call on the same thread.
const char *sticky_last_error(void);

void sticky_clear_error(void);

// Library version as a static string.
const char *sticky_version(void);

// Constant drift and volatility, no sticky points.
//
// # Safety
// `out` must be valid for a pointer write.
enum StickyStatus sticky_spec_new_constant(double drift, double vol, struct StickySpec **out);

// Drift and volatility given as expressions in `x`, with piecewise
// segments written `[e0, b1: e1, ...]`.
//
// # Safety
// `drift` and `vol` must be NUL-terminated strings; `out` must be writable.
enum StickyStatus sticky_spec_from_exprs(const char *drift,
                                         const char *vol,
                                         struct StickySpec **out);

// Adds a sticky point at `x` leaving right with probability `p_plus`.
//
// # Safety
// `spec` must be a live handle.
enum StickyStatus sticky_spec_add_point(struct StickySpec *spec,
                                        double x,
                                        double p_plus,
                                        double alpha);

// Compiles scale `u` and speed `v`; every breakpoint becomes a sticky point.
//
// # Safety
// `u` and `v` must be NUL-terminated strings; `out` must be writable.
enum StickyStatus sticky_spec_feller(const char *u, const char *v, struct StickySpec **out);

// Limiting process of a narrow tube with cross section `v1`.
//
// # Safety
// `v1` must be a NUL-terminated string; `out` must be writable.
enum StickyStatus sticky_spec_tube(const char *v1, double beta, double mu, struct StickySpec **out);

// Checks the specification; the error message lists every violation.
//
// # Safety
// `spec` must be a live handle.
enum StickyStatus sticky_spec_validate(const struct StickySpec *spec);

// # Safety
// `spec` must be a live handle and `out` writable.
enum StickyStatus sticky_spec_point_count(const struct StickySpec *spec, size_t *out);

// # Safety
// `spec` must be a live handle and `out` writable.
enum StickyStatus sticky_spec_get_point(const struct StickySpec *spec,
                                        size_t index,
                                        struct StickyPointInfo *out);

// # Safety
// `spec` must be null or a handle not yet freed.
void sticky_spec_free(struct StickySpec *spec);

// Simulates one path on `[0, horizon]` with step `dt`. Paths with the
// same `seed` and `path_index` are identical.
//
// # Safety
// `spec` must be a live handle and `out` writable.
enum StickyStatus sticky_simulate_path(const struct StickySpec *spec,
                                       double horizon,
                                       double dt,
                                       double x0,
                                       uint64_t seed,
                                       uint64_t path_index,
                                       struct StickyPath **out);

// Number of samples, including time 0.
//
// # Safety
// `path` must be a live handle and `out` writable.
enum StickyStatus sticky_path_len(const struct StickyPath *path, size_t *out);

// # Safety
// `path` must be a live handle and `out` writable.
enum StickyStatus sticky_path_point_count(const struct StickyPath *path, size_t *out);

// Copies sample times and positions; either buffer may be null.
//
// # Safety
// Non-null buffers must hold `len` values; `path` must be a live handle.
enum StickyStatus sticky_path_copy(const struct StickyPath *path,
                                   double *times,
                                   double *values,
                                   size_t len);

// Copies the per-point series of sticky point `point`: local time,
// occupation time, at-point flag. Any buffer may be null.
//
// # Safety
// Non-null buffers must hold `len` values; `path` must be a live handle.
enum StickyStatus sticky_path_copy_point(const struct StickyPath *path,
                                         size_t point,
                                         double *local_time,
                                         double *occupation,
                                         uint8_t *at_point,
                                         size_t len);

// # Safety
// `path` must be null or a handle not yet freed.
void sticky_path_free(struct StickyPath *path);

// Terminal state of `n_paths` independent paths at `horizon`.
//
// `positions` and `at_point` hold `n_paths` values; `local_time` holds
// `n_paths * m` values row by row, `m` being the number of sticky points.
// `at_point` receives the point index or -1. Any buffer may be null.
//
// # Safety
// `spec` must be a live handle; non-null buffers must have the sizes above.
enum StickyStatus sticky_sample_terminal(const struct StickySpec *spec,
                                         double horizon,
                                         double dt,
                                         double x0,
                                         uint64_t seed,
                                         size_t n_paths,
                                         double *positions,
                                         double *local_time,
                                         int32_t *at_point);

// Lattice walk with spacing `delta` and a sticky site at 0, sampled at
// `horizon`. Each buffer holds `n_paths` values and may be null.
//
// # Safety
// Non-null buffers must hold `n_paths` values.
enum StickyStatus sticky_lattice_sample(double delta,
                                        double p_plus,
                                        double alpha,
                                        double horizon,
                                        uint64_t seed,
                                        size_t n_paths,
                                        double *positions,
                                        double *occupation,
                                        double *local_time);

// `P(X(t) = 0)` for symmetric sticky Brownian motion from 0.
//
// # Safety
// `out` must be writable.
enum StickyStatus sticky_point_mass(double t, double alpha, double *out);

// Expected occupation time of the origin up to `t`.
//
// # Safety
// `out` must be writable.
enum StickyStatus sticky_expected_occupation(double t, double alpha, double *out);

// `P(α L(t, 0) > y)` for `0 <= y < t`.
//
// # Safety
// `out` must be writable.
enum StickyStatus sticky_local_time_tail(double t, double y, double alpha, double *out);

// Characteristic function of `X(t)`; real by symmetry.
//
// # Safety
// `out` must be writable.
enum StickyStatus sticky_char_fn(double lambda, double t, double alpha, double *out);

double sticky_normal_cdf(double x);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STICKY_SIM_H */
