#ifndef OPFREE_H
#define OPFREE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OpfreeStatus {
  OPFREE_STATUS_OK = 0,
  OPFREE_STATUS_NULL_POINTER = 1,
  OPFREE_STATUS_INVALID_ARGUMENT = 2,
  OPFREE_STATUS_DIMENSION_MISMATCH = 3,
  OPFREE_STATUS_MISSING_ORDER = 4,
  OPFREE_STATUS_SERIALIZATION = 5,
  OPFREE_STATUS_SINGULAR = 6,
  OPFREE_STATUS_DOMAIN_VIOLATION = 7,
  OPFREE_STATUS_NO_CONVERGENCE = 8,
  OPFREE_STATUS_INFEASIBLE_INPUT = 9,
  OPFREE_STATUS_INVALID_UTF8 = 10,
  OPFREE_STATUS_PANIC = 11,
} OpfreeStatus;

// A distribution held by its cumulant sequence.
typedef struct OpfreeDistribution OpfreeDistribution;

// A finite family of real vectors.
typedef struct OpfreeVectors OpfreeVectors;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null. Owned by the library.
const char *opfree_last_error(void);

// Releases a string returned by this library.
//
// # Safety
// `s` must come from this library and not have been freed.
void opfree_string_free(char *s);

// Semicircular law with covariance `eta`, a `d^2 x d^2` matrix whose column
// `a d + b` is `eta(E_ab)` flattened row-major.
//
// # Safety
// `eta` must point to `2 d^4` doubles; `out` must be writable.
enum OpfreeStatus opfree_semicircular(size_t dim,
                                      const double *eta,
                                      size_t order,
                                      struct OpfreeDistribution **out);

// `delta_b` for a self-adjoint `d x d` matrix `b`.
//
// # Safety
// `b` must point to `2 d^2` doubles; `out` must be writable.
enum OpfreeStatus opfree_point_mass(size_t dim,
                                    const double *b,
                                    size_t order,
                                    struct OpfreeDistribution **out);

// Parses a distribution document (moments or cumulants).
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum OpfreeStatus opfree_distribution_from_json(const char *json, struct OpfreeDistribution **out);

// Serializes the cumulants (`moments == false`) or moments of `h`.
//
// # Safety
// `h` must be a live handle; release `*out` with [`opfree_string_free`].
enum OpfreeStatus opfree_distribution_to_json(const struct OpfreeDistribution *h,
                                              bool moments,
                                              char **out);

// # Safety
// `h` must be a live handle; all three outputs may be null.
enum OpfreeStatus opfree_distribution_info(const struct OpfreeDistribution *h,
                                           size_t *dim,
                                           size_t *order,
                                           double *bound);

// # Safety
// `h` must come from this library and not have been freed.
void opfree_distribution_free(struct OpfreeDistribution *h);

// `a boxplus b`.
//
// # Safety
// `a`, `b` must be live handles; `out` must be writable.
enum OpfreeStatus opfree_free_convolve(const struct OpfreeDistribution *a,
                                       const struct OpfreeDistribution *b,
                                       struct OpfreeDistribution **out);

// `h^{boxplus t}`. `positive` (nullable) reports whether positivity is certified.
//
// # Safety
// `h` must be a live handle; `out` must be writable.
enum OpfreeStatus opfree_convolution_power(const struct OpfreeDistribution *h,
                                           double t,
                                           struct OpfreeDistribution **out,
                                           bool *positive);

// Truncated Cauchy transform `E[(b - X)^{-1}]` at a level-`level` probe `b`
// (a `k d x k d` matrix with positive imaginary part), with its tail bound.
//
// # Safety
// `b` and `value` must hold `2 (level d)^2` doubles; `tail` may be null.
enum OpfreeStatus opfree_cauchy(const struct OpfreeDistribution *h,
                                size_t level,
                                const double *b,
                                size_t tail_order,
                                double *value,
                                double *tail);

// Voiculescu transform `sum_n kappa_n(b^{-1}, ..., b^{-1})` with its tail bound.
//
// # Safety
// As for [`opfree_cauchy`].
enum OpfreeStatus opfree_voiculescu(const struct OpfreeDistribution *h,
                                    size_t level,
                                    const double *b,
                                    size_t tail_order,
                                    double *value,
                                    double *tail);

// `len` vectors of length `dim`, stored contiguously.
//
// # Safety
// `data` must point to `len * dim` doubles; `out` must be writable.
enum OpfreeStatus opfree_vectors_new(size_t dim,
                                     size_t len,
                                     const double *data,
                                     struct OpfreeVectors **out);

// # Safety
// `h` must come from this library and not have been freed.
void opfree_vectors_free(struct OpfreeVectors *h);

// Reorders a zero-sum family with bounded prefix sums; writes the result as JSON.
//
// # Safety
// `h` must be a live handle; release `*out` with [`opfree_string_free`].
enum OpfreeStatus opfree_steinitz_rearrange(const struct OpfreeVectors *h, char **out);

// Selects a subset whose sum approximates `t` times the total; writes the result as JSON.
//
// # Safety
// As for [`opfree_steinitz_rearrange`].
enum OpfreeStatus opfree_steinitz_select(const struct OpfreeVectors *h, double t, char **out);

// Runs a divisibility experiment from a TOML (or JSON, when `json`) config.
// Relative paths in the config resolve against `base_dir`, which may be null.
// The output holds `report` and `infinitesimality`.
//
// # Safety
// Strings must be NUL-terminated; release `*out` with [`opfree_string_free`].
enum OpfreeStatus opfree_hinchin_run(const char *config_text,
                                     bool json,
                                     const char *base_dir,
                                     char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OPFREE_H */
