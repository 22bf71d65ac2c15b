#ifndef ICE_H
#define ICE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IceStatus {
  ICE_STATUS_OK = 0,
  ICE_STATUS_NULL_POINTER = 1,
  ICE_STATUS_INVALID_ARGUMENT = 2,
  ICE_STATUS_DIMENSION_MISMATCH = 3,
  ICE_STATUS_NUMERICAL = 4,
  ICE_STATUS_IO = 5,
  ICE_STATUS_PANIC = 6,
} IceStatus;

/**
 * Opaque game handle.
 */
typedef struct IceGame IceGame;

/**
 * Opaque fitted-model handle.
 */
typedef struct IceModel IceModel;

/**
 * Solver options. A non-positive `c`, `tolerance` or `max_iters` keeps the library default.
 */
typedef struct IceFitOptions {
  double c;
  size_t max_iters;
  double tolerance;
  /**
   * Nonzero selects swap regret instead of internal regret.
   */
  int32_t swap;
} IceFitOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message on this thread into `buf` (NUL-terminated,
 * truncated to `len - 1` bytes). Returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t ice_last_error_message(char *buf, size_t len);

/**
 * Build a game from an outcome-major feature table of length
 * `num_outcomes * num_players * feature_dim`.
 *
 * # Safety
 * `action_counts` must hold `num_players` values, `features` `features_len`
 * values, and `out` must be a valid pointer.
 */
enum IceStatus ice_game_new(const size_t *action_counts,
                            size_t num_players,
                            size_t feature_dim,
                            const double *features,
                            size_t features_len,
                            struct IceGame **out);

/**
 * Load a game file written by `ice gen`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum IceStatus ice_game_load(const char *path, struct IceGame **out);

/**
 * # Safety
 * `game` must be null or a handle from `ice_game_new`/`ice_game_load` not yet freed.
 */
void ice_game_free(struct IceGame *game);

/**
 * Number of joint outcomes, or 0 for a null handle.
 *
 * # Safety
 * `game` must be null or a live handle.
 */
size_t ice_game_num_outcomes(const struct IceGame *game);

/**
 * Feature dimension, or 0 for a null handle.
 *
 * # Safety
 * `game` must be null or a live handle.
 */
size_t ice_game_feature_dim(const struct IceGame *game);

/**
 * Default options.
 */
struct IceFitOptions ice_fit_options_default(void);

/**
 * Fit MaxEnt ICE to observed outcome indices of `game`. With a non-null
 * `target`, the prediction is made for that game instead.
 *
 * # Safety
 * `game` must be live, `target` null or live, `samples` must hold
 * `num_samples` indices and `out` must be a valid pointer.
 */
enum IceStatus ice_fit(const struct IceGame *game,
                       const size_t *samples,
                       size_t num_samples,
                       const struct IceGame *target,
                       struct IceFitOptions options,
                       struct IceModel **out);

/**
 * # Safety
 * `model` must be null or a handle from `ice_fit` not yet freed.
 */
void ice_model_free(struct IceModel *model);

/**
 * Copy the predicted distribution into `out` (length = target outcomes).
 *
 * # Safety
 * `model` must be live and `out` must hold `len` doubles.
 */
enum IceStatus ice_model_predicted(const struct IceModel *model, double *out, size_t len);

/**
 * Copy the recovered utility weights into `out` (length = feature dimension).
 *
 * # Safety
 * `model` must be live and `out` must hold `len` doubles.
 */
enum IceStatus ice_model_utility(const struct IceModel *model, double *out, size_t len);

/**
 * Duality gap at termination, NaN for a null handle.
 *
 * # Safety
 * `model` must be null or live.
 */
double ice_model_gap(const struct IceModel *model);

/**
 * Certified transfer slack, NaN for a null handle.
 *
 * # Safety
 * `model` must be null or live.
 */
double ice_model_slack(const struct IceModel *model);

/**
 * 1 if the solver met its tolerance, 0 otherwise or for a null handle.
 *
 * # Safety
 * `model` must be null or live.
 */
int32_t ice_model_converged(const struct IceModel *model);

/**
 * Observation count sufficient for every expected regret to be within
 * `epsilon * Delta` of its mean with probability `1 - delta`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum IceStatus ice_sample_bound(double epsilon,
                                double delta,
                                size_t mods_size,
                                size_t feature_dim,
                                size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ICE_H */
