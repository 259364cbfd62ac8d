#ifndef VFLKIT_H
#define VFLKIT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of every fallible call.
 */
typedef enum {
  VFL_STATUS_OK = 0,
  VFL_STATUS_NULL_POINTER = 1,
  VFL_STATUS_INVALID_ARGUMENT = 2,
  VFL_STATUS_SHAPE = 3,
  VFL_STATUS_DATA = 4,
  VFL_STATUS_CONFIG = 5,
  VFL_STATUS_NON_FINITE = 6,
  VFL_STATUS_PRIVACY = 7,
  VFL_STATUS_IO = 8,
  VFL_STATUS_PANIC = 9,
} VflStatus;

/**
 * How the SplitNN unit variance is assembled.
 */
typedef enum {
  VFL_SPLITNN_MODE_EXACT_MIXTURE = 0,
  VFL_SPLITNN_MODE_PER_COMPONENT = 1,
} VflSplitnnMode;

/**
 * Benign rows of every non-adversary participant, cached for repeated
 * pairing with inputs of A.
 */
typedef struct VflBenign VflBenign;

/**
 * A trained system.
 */
typedef struct VflSystem VflSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Version string of the library; static, never freed.
 */
const char *vfl_version(void);

/**
 * Byte length of the last error message of this thread, without the
 * terminating NUL.
 */
size_t vfl_last_error_length(void);

/**
 * Copies the last error message of this thread into `buf`, truncated to
 * `len - 1` bytes and NUL-terminated. Returns the number of bytes written
 * without the NUL, or -1 when `buf` is null or `len` is 0.
 *
 * # Safety
 * `buf` is null or valid for writes of `len` bytes.
 */
int vfl_last_error_message(char *buf, size_t len);

/**
 * Loads a system checkpoint written by the `train` command.
 *
 * # Safety
 * `path` is a NUL-terminated string; `out` is valid for one pointer write.
 */
VflStatus vfl_system_load(const char *path, VflSystem **out);

/**
 * Releases a system; null is ignored.
 *
 * # Safety
 * `system` is null or a handle from [`vfl_system_load`] not yet freed.
 */
void vfl_system_free(VflSystem *system);

/**
 * Participant count, class count and the feature width of one participant.
 *
 * # Safety
 * `system` is a valid handle; every non-null out pointer is writable.
 */
VflStatus vfl_system_shape(const VflSystem *system,
                           size_t participant,
                           size_t *out_participants,
                           size_t *out_classes,
                           size_t *out_width);

/**
 * Joint predictions for `rows` aligned rows; `views` holds one buffer per
 * participant and `out_labels` receives `rows` labels.
 *
 * # Safety
 * See the module notes; `out_labels` is valid for `rows` writes.
 */
VflStatus vfl_system_predict(const VflSystem *system,
                             const double *const *views_ptr,
                             size_t rows,
                             size_t *out_labels);

/**
 * Caches benign rows of every participant except A (participant 0);
 * `views` holds one buffer per benign participant in order.
 *
 * # Safety
 * See the module notes; `out` is valid for one pointer write.
 */
VflStatus vfl_benign_new(const VflSystem *system,
                         const double *const *views_ptr,
                         size_t rows,
                         VflBenign **out);

/**
 * Releases a benign cache; null is ignored.
 *
 * # Safety
 * `benign` is null or a handle from [`vfl_benign_new`] not yet freed.
 */
void vfl_benign_free(VflBenign *benign);

/**
 * Fraction of cached benign rows for which `x_a` yields `target`.
 *
 * # Safety
 * Handles are valid; `x_a` holds `len` doubles; `out` is writable.
 */
VflStatus vfl_hit_rate(const VflSystem *system,
                       const VflBenign *benign,
                       const double *x_a,
                       size_t len,
                       size_t target,
                       double *out);

/**
 * Label `x_a` yields most often against the cached rows and its fraction.
 *
 * # Safety
 * Handles are valid; `x_a` holds `len` doubles; out pointers are writable.
 */
VflStatus vfl_majority_label(const VflSystem *system,
                             const VflBenign *benign,
                             const double *x_a,
                             size_t len,
                             size_t *out_label,
                             double *out_fraction);

/**
 * Synthesizes a perturbation of `x_a` toward `target`. S is given as one
 * buffer per benign participant with `s_rows` rows; success is judged on
 * `check`. `config_json` is a synthesis config object or null for defaults.
 * Writes `len` doubles to `out_perturbation` and the attack accuracy.
 *
 * # Safety
 * Handles are valid; buffers match the stated sizes; out pointers are
 * writable.
 */
VflStatus vfl_synthesize(const VflSystem *system,
                         const VflBenign *check,
                         const double *const *s_views,
                         size_t s_rows,
                         const double *x_a,
                         size_t len,
                         size_t target,
                         const char *config_json,
                         double *out_perturbation,
                         double *out_accuracy);

/**
 * Analytic variance of the sigmoid output for a scalar score drawn from a
 * `k`-component Gaussian mixture.
 *
 * # Safety
 * `weights`, `means` and `stds` each hold `k` doubles; `out` is writable.
 */
VflStatus vfl_heterolr_variance(const double *weights,
                                const double *means,
                                const double *stds,
                                size_t k,
                                double *out);

/**
 * Analytic variance of a ReLU unit whose pre-activation is drawn from a
 * `k`-component Gaussian mixture.
 *
 * # Safety
 * `weights`, `means` and `stds` each hold `k` doubles; `out` is writable.
 */
VflStatus vfl_splitnn_variance(const double *weights,
                               const double *means,
                               const double *stds,
                               size_t k,
                               VflSplitnnMode mode,
                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VFLKIT_H */
