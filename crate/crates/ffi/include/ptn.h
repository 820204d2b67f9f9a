#ifndef PTN_H
#define PTN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PtnStatus {
  PTN_STATUS_OK = 0,
  PTN_STATUS_DATA_ERROR = 1,
  PTN_STATUS_CONFIG_ERROR = 2,
  PTN_STATUS_NUMERICAL_ERROR = 3,
  PTN_STATUS_NULL_POINTER = 4,
  PTN_STATUS_INVALID_ARGUMENT = 5,
  PTN_STATUS_PANIC = 6,
} PtnStatus;

typedef enum PtnMethod {
  /**
   * Calibrated Poisson MBO.
   */
  PTN_METHOD_PTN = 0,
  /**
   * Same inference as `Ptn`.
   */
  PTN_METHOD_DPN = 1,
  /**
   * Poisson MBO without query calibration.
   */
  PTN_METHOD_POISSON = 2,
  /**
   * Label propagation baseline.
   */
  PTN_METHOD_LP = 3,
} PtnMethod;

typedef enum PtnRole {
  PTN_ROLE_SUPPORT = 0,
  PTN_ROLE_UNLABELED = 1,
  PTN_ROLE_QUERY = 2,
} PtnRole;

/**
 * Solver settings.
 */
typedef struct PtnConfig PtnConfig;

/**
 * A validated episode in canonical order (support, unlabeled, query).
 */
typedef struct PtnEpisode PtnEpisode;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library from the same thread.
 */
const char *ptn_last_error_message(void);

/**
 * New configuration holding the defaults.
 */
struct PtnConfig *ptn_config_new(void);

/**
 * # Safety
 * `config` must come from [`ptn_config_new`] and not be freed yet, or be null.
 */
void ptn_config_free(struct PtnConfig *config);

/**
 * Sets one key, e.g. `("knn_k", "15")`, then re-validates the whole
 * configuration. On failure the configuration is left unchanged.
 *
 * # Safety
 * `config` must be a live handle; `key` and `value` NUL-terminated strings.
 */
enum PtnStatus ptn_config_set(struct PtnConfig *config, const char *key, const char *value);

/**
 * Applies a `key = value` configuration file on top of the current values.
 *
 * # Safety
 * `config` must be a live handle; `path` a NUL-terminated string.
 */
enum PtnStatus ptn_config_load(struct PtnConfig *config, const char *path);

/**
 * Builds an episode from `n` row-major feature vectors of length `dim`.
 *
 * `roles[i]` is a [`PtnRole`] value; `labels[i]` is the class of a support
 * row and is ignored otherwise. Points get ids `p0`, `p1`, ... by input
 * position.
 *
 * # Safety
 * `features` must hold `n * dim` doubles, `roles` and `labels` `n` entries
 * each, and `out` must be writable.
 */
enum PtnStatus ptn_episode_new(const double *features,
                               const uint8_t *roles,
                               const int64_t *labels,
                               size_t n,
                               size_t dim,
                               size_t classes,
                               struct PtnEpisode **out);

/**
 * Loads an episode from a feature CSV (`id,role,label,f0,...`).
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum PtnStatus ptn_episode_load_csv(const char *path, struct PtnEpisode **out);

/**
 * # Safety
 * `episode` must be a live handle or null.
 */
void ptn_episode_free(struct PtnEpisode *episode);

/**
 * Number of query points, or 0 for a null handle.
 *
 * # Safety
 * `episode` must be a live handle or null.
 */
size_t ptn_episode_num_queries(const struct PtnEpisode *episode);

/**
 * Number of classes, or 0 for a null handle.
 *
 * # Safety
 * `episode` must be a live handle or null.
 */
size_t ptn_episode_classes(const struct PtnEpisode *episode);

/**
 * Predicts a class for every query, in the order queries were given.
 *
 * `calibrate` is -1 for the method default, 0 to disable and 1 to enable
 * query calibration. `prior` may be null for a uniform prior, otherwise it
 * holds one fraction per class. `predictions` must hold `capacity >=`
 * query count entries.
 *
 * # Safety
 * Handles must be live; pointer arguments must satisfy the sizes above.
 */
enum PtnStatus ptn_infer(const struct PtnEpisode *episode,
                         const struct PtnConfig *config,
                         enum PtnMethod method,
                         int32_t calibrate,
                         const double *prior,
                         size_t *predictions,
                         size_t capacity);

/**
 * Evaluates the transfer loss (contrastive plus `lambda` times KL) on two
 * `n x dim` row-major views. Gradients are written when the output
 * pointers are non-null; each must then hold `n * dim` doubles.
 *
 * # Safety
 * `z_t` and `z_tp` must hold `n * dim` doubles; `loss` must be writable.
 */
enum PtnStatus ptn_ut_loss(const double *z_t,
                           const double *z_tp,
                           size_t n,
                           size_t dim,
                           double tau,
                           double lambda,
                           double *loss,
                           double *grad_t,
                           double *grad_tp);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PTN_H */
