#ifndef WITTEN_H
#define WITTEN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum WittenStatus {
  WITTEN_STATUS_OK = 0,
  WITTEN_STATUS_NULL_POINTER = 1,
  WITTEN_STATUS_INVALID_ARGUMENT = 2,
  WITTEN_STATUS_PARSE = 3,
  WITTEN_STATUS_CONFIG = 4,
  WITTEN_STATUS_LABELING = 5,
  WITTEN_STATUS_PREDICTION = 6,
  WITTEN_STATUS_SPECTRAL = 7,
  WITTEN_STATUS_OUT_OF_RANGE = 8,
  WITTEN_STATUS_PANIC = 9,
} WittenStatus;

/**
 * A fixture loaded from TOML, with its labeling computed on demand.
 */
typedef struct WittenFixture WittenFixture;

/**
 * A parsed potential.
 */
typedef struct WittenPotential WittenPotential;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *witten_version(void);

/**
 * Copies the last error message of this thread into `buf` (NUL
 * terminated, truncated to `len`) and returns the full length including
 * the terminator.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t witten_last_error(char *buf, size_t len);

/**
 * Parses `source` as a potential in `dim` variables `x1..xd`.
 *
 * # Safety
 * `source` must be a NUL-terminated string and `out` a valid pointer.
 */
enum WittenStatus witten_potential_new(const char *source,
                                       size_t dim,
                                       struct WittenPotential **out);

/**
 * Releases a potential; null is ignored.
 *
 * # Safety
 * `p` must come from `witten_potential_new` and not be used afterwards.
 */
void witten_potential_free(struct WittenPotential *p);

/**
 * Value at `x` (length `dim`) and, when `grad` is non-null, the gradient.
 *
 * # Safety
 * `x` must point to `dim` doubles, `value` to one double and `grad` (if
 * non-null) to `dim` doubles.
 */
enum WittenStatus witten_potential_eval(const struct WittenPotential *p,
                                        const double *x,
                                        size_t dim,
                                        double *value,
                                        double *grad);

/**
 * Builds a fixture from TOML text.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum WittenStatus witten_fixture_from_toml(const char *toml, struct WittenFixture **out);

/**
 * Loads a fixture file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum WittenStatus witten_fixture_load(const char *path, struct WittenFixture **out);

/**
 * Releases a fixture; null is ignored.
 *
 * # Safety
 * `fx` must come from a fixture constructor and not be used afterwards.
 */
void witten_fixture_free(struct WittenFixture *fx);

/**
 * Number of declared minima.
 *
 * # Safety
 * `fx` and `out` must be valid pointers.
 */
enum WittenStatus witten_fixture_minimum_count(const struct WittenFixture *fx, size_t *out);

/**
 * Barrier `S(m)` of minimum `index` (infinite for the global minimum).
 *
 * # Safety
 * `fx` and `out` must be valid pointers.
 */
enum WittenStatus witten_fixture_barrier(struct WittenFixture *fx, size_t index, double *out);

/**
 * Eyring-Kramers prediction of the eigenvalue attached to minimum
 * `index` at `h`, using the fixture's solver kind.
 *
 * # Safety
 * `fx` and `out` must be valid pointers.
 */
enum WittenStatus witten_fixture_prediction(struct WittenFixture *fx,
                                            size_t index,
                                            double h,
                                            double *out);

/**
 * The `k` smallest eigenvalues of the discrete Witten Laplacian at `h`,
 * written in ascending order to `out`.
 *
 * # Safety
 * `fx` must be valid and `out` must point to `k` writable doubles.
 */
enum WittenStatus witten_fixture_smallest_eigenvalues(const struct WittenFixture *fx,
                                                      double h,
                                                      size_t k,
                                                      double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WITTEN_H */
