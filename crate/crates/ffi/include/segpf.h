/* Generated by cbindgen from src/lib.rs. Do not edit. */

#ifndef SEGPF_H
#define SEGPF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define SEGPF_OK 0

#define SEGPF_NULL_POINTER 1

#define SEGPF_INVALID_ARGUMENT 2

// Weights or boundary factors vanished, or an initializer failed to cover
// the model's transitions.
#define SEGPF_NUMERICAL 3

#define SEGPF_PANIC 4

#define SEGPF_INIT_PRIOR 0

#define SEGPF_INIT_FIXED 1

#define SEGPF_INIT_ESTIMATED 2

#define SEGPF_INIT_PREDICTOR 3

#define SEGPF_FORM_CHAIN 0

#define SEGPF_FORM_PRODUCT 1

// Linear-Gaussian model handle.
typedef struct SegpfModel SegpfModel;

// Outputs of one segmented run.
typedef struct SegpfRun SegpfRun;

// How segments after the first are initialized. `mean` and `var` are used
// by `SEGPF_INIT_FIXED`; `window` and `aux_particles` by
// `SEGPF_INIT_ESTIMATED`.
typedef struct SegpfInit {
  int32_t kind;
  double mean;
  double var;
  size_t window;
  size_t aux_particles;
} SegpfInit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failure on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *segpf_last_error(void);

// Create a model `X_t = a X_{t-1} + e_t`, `Y_t = X_t + n_t` with stationary
// variance `sigma_x2` and noise variance `sigma_y2`.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
int32_t segpf_model_new(double a, double sigma_x2, double sigma_y2, struct SegpfModel **out);

// # Safety
// `model` must be null or a handle from `segpf_model_new` not yet freed.
void segpf_model_free(struct SegpfModel *model);

// Simulate `len` states and observations from `seed`. Either output may
// be null if not wanted.
//
// # Safety
// Non-null outputs must point to `len` writable doubles.
int32_t segpf_model_simulate(const struct SegpfModel *model,
                             uint64_t seed,
                             size_t len,
                             double *states_out,
                             double *observations_out);

// Exact log-likelihood of `observations` from the Kalman filter.
//
// # Safety
// `observations` must point to `len` doubles and `out` to one.
int32_t segpf_kalman_log_likelihood(const struct SegpfModel *model,
                                    const double *observations,
                                    size_t len,
                                    double *out);

// Exact smoothed means `E(X_u | all observations)` for every `u`.
//
// # Safety
// `observations` must point to `len` doubles and `means_out` to `len`
// writable doubles.
int32_t segpf_kalman_smoothed_means(const struct SegpfModel *model,
                                    const double *observations,
                                    size_t len,
                                    double *means_out);

// Run `segments` independent filters over the first `len` observations
// (which must divide evenly) and join them. `particles` holds one count
// per segment.
//
// # Safety
// `observations` must point to `len` doubles, `particles` to `segments`
// counts and `out` to writable storage for one handle.
int32_t segpf_run_new(const struct SegpfModel *model,
                      const double *observations,
                      size_t len,
                      size_t segments,
                      const size_t *particles,
                      struct SegpfInit init,
                      uint64_t seed,
                      struct SegpfRun **out);

// # Safety
// `run` must be null or a handle from `segpf_run_new` not yet freed.
void segpf_run_free(struct SegpfRun *run);

// Number of segments in `run`, or 0 for a null handle.
//
// # Safety
// `run` must be null or a live handle.
size_t segpf_run_segment_count(const struct SegpfRun *run);

// Log of the unbiased likelihood estimate, in `SEGPF_FORM_CHAIN` or
// `SEGPF_FORM_PRODUCT` form (identical for up to two segments).
//
// # Safety
// `run` must be a live handle and `out` must point to one double.
int32_t segpf_run_log_likelihood(const struct SegpfRun *run, int32_t form, double *out);

// Estimate of `E(X_u | observations)` and its in-sample standard error.
// `sigma2_out` may be null; otherwise it receives one per-filter variance
// estimate per segment.
//
// # Safety
// `run` must be a live handle, `estimate_out` and `stderr_out` must point
// to one double each, and a non-null `sigma2_out` to one per segment.
int32_t segpf_run_latent_estimate(const struct SegpfRun *run,
                                  size_t u,
                                  double *estimate_out,
                                  double *stderr_out,
                                  double *sigma2_out);

// Split `budget` particles over `n` filters in proportion to the square
// roots of `sigma2` (at least 2 each).
//
// # Safety
// `sigma2` must point to `n` doubles and `out` to `n` writable counts.
int32_t segpf_allocate_particles(const double *sigma2, size_t n, size_t budget, size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEGPF_H */
