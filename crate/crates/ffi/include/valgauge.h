#ifndef VALGAUGE_H
#define VALGAUGE_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum VgStatus {
  VG_STATUS_OK = 0,
  VG_STATUS_NULL_POINTER = 1,
  VG_STATUS_INVALID_ARGUMENT = 2,
  VG_STATUS_IO = 3,
  VG_STATUS_PARSE = 4,
  VG_STATUS_PANIC = 5,
} VgStatus;

/**
 * A verifier with its text encoder. Create with `vg_verifier_new_random` or
 * `vg_verifier_load`, release with `vg_verifier_free`.
 */
typedef struct VgVerifier VgVerifier;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next valgauge call on the same thread.
 */
const char *vg_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *vg_version(void);

/**
 * 1-Wasserstein distance between two uniform empirical distributions.
 *
 * # Safety
 * `p` and `q` must point to `n` and `m` doubles; `out` to one double.
 */
enum VgStatus vg_wasserstein1(const double *p, size_t n, const double *q, size_t m, double *out);

/**
 * Var% of a simulated sample against ground truth.
 *
 * # Safety
 * `sim` and `gt` must point to `n` and `m` doubles; `out` to one double.
 */
enum VgStatus vg_var_pct(const double *sim, size_t n, const double *gt, size_t m, double *out);

/**
 * Minimum inversion distance over rotations of `obs` against `gt`. Both hold
 * the same `n` value indices (0 = Self-Direction ... 9 = Universalism).
 *
 * # Safety
 * `obs` and `gt` must point to `n` bytes; `out` to one size_t.
 */
enum VgStatus vg_circular_inversion_distance(const uint8_t *obs,
                                             const uint8_t *gt,
                                             size_t n,
                                             size_t *out);

/**
 * Circular Inversion Score in [0, 1]; arguments as for
 * `vg_circular_inversion_distance`.
 *
 * # Safety
 * `obs` and `gt` must point to `n` bytes; `out` to one double.
 */
enum VgStatus vg_cis(const uint8_t *obs, const uint8_t *gt, size_t n, double *out);

/**
 * Randomly initialized verifier of embedding width `width` (at least 2).
 *
 * # Safety
 * `out` must point to writable storage for one handle.
 */
enum VgStatus vg_verifier_new_random(size_t width,
                                     uint64_t seed,
                                     uint64_t encoder_seed,
                                     struct VgVerifier **out);

/**
 * Loads a params file written by `valgauge train-verifier`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` writable storage for one
 * handle.
 */
enum VgStatus vg_verifier_load(const char *path, uint64_t encoder_seed, struct VgVerifier **out);

/**
 * Embedding width of a verifier.
 *
 * # Safety
 * `handle` must come from this library and not be freed; `out` must point to
 * one size_t.
 */
enum VgStatus vg_verifier_width(const struct VgVerifier *handle, size_t *out);

/**
 * Scores `action` in `context` for an agent with the given ten value scores
 * in [-1, 1]. When `activation` is not null, the ten attention weights are
 * written there as well.
 *
 * # Safety
 * `handle` must be live; strings NUL-terminated; `profile` must point to 10
 * doubles, `score` to one, and `activation` to 10 or be null.
 */
enum VgStatus vg_verifier_score(const struct VgVerifier *handle,
                                const char *action,
                                const char *context,
                                const double *profile,
                                double *score,
                                double *activation);

/**
 * Releases a verifier. Null is ignored.
 *
 * # Safety
 * `handle` must be null or a live handle from this library, freed once.
 */
void vg_verifier_free(struct VgVerifier *handle);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VALGAUGE_H */
