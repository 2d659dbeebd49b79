#ifndef RPDIFF_H
#define RPDIFF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RpdStatus {
  RPD_STATUS_OK = 0,
  RPD_STATUS_NULL_ARGUMENT = 1,
  RPD_STATUS_INVALID_ARGUMENT = 2,
  RPD_STATUS_IO = 3,
  RPD_STATUS_NUMERIC = 4,
  RPD_STATUS_PANIC = 5,
} RpdStatus;

/**
 * Loaded network (de-noiser or classifier).
 */
typedef struct RpdModel RpdModel;

/**
 * Result of one refinement call.
 */
typedef struct RpdResult RpdResult;

typedef struct RpdRefineParams {
  /**
   * Parallel runs K.
   */
  size_t runs;
  /**
   * Iterations I.
   */
  size_t iterations;
  /**
   * Timestep schedule bias A.
   */
  uint32_t schedule_bias;
  /**
   * Non-zero to enable annealed exploration noise.
   */
  uint8_t noise_enabled;
  uint64_t seed;
} RpdRefineParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *rpd_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rpd_version(void);

struct RpdRefineParams rpd_refine_params_default(void);

/**
 * Loads a checkpoint directory.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RpdStatus rpd_model_load(const char *dir, struct RpdModel **out);

/**
 * # Safety
 * `model` must come from [`rpd_model_load`] and not be used afterwards.
 */
void rpd_model_free(struct RpdModel *model);

/**
 * Number of scalar parameters.
 *
 * # Safety
 * Pointers must be valid.
 */
enum RpdStatus rpd_model_param_count(const struct RpdModel *model, size_t *out);

/**
 * 1 for a pose de-noiser, 0 for a success classifier.
 *
 * # Safety
 * `model` must be valid.
 */
uint8_t rpd_model_is_denoiser(const struct RpdModel *model);

/**
 * Refines `runs` random initial poses of the object against the scene.
 *
 * Clouds are `n × 3` row-major doubles in metres. `classifier` may be null,
 * in which case the output is picked uniformly at random.
 *
 * # Safety
 * All non-null pointers must be valid for the given lengths.
 */
enum RpdStatus rpd_refine(const struct RpdModel *denoiser,
                          const struct RpdModel *classifier,
                          const double *object_xyz,
                          size_t object_len,
                          const double *scene_xyz,
                          size_t scene_len,
                          const struct RpdRefineParams *params,
                          struct RpdResult **out);

/**
 * # Safety
 * `result` must come from [`rpd_refine`] and not be used afterwards.
 */
void rpd_result_free(struct RpdResult *result);

/**
 * # Safety
 * `result` must be valid.
 */
size_t rpd_result_run_count(const struct RpdResult *result);

/**
 * # Safety
 * `result` must be valid.
 */
size_t rpd_result_best_index(const struct RpdResult *result);

/**
 * Final pose of `run` as a row-major 4×4 homogeneous matrix mapping the
 * object cloud as given to its placed position.
 *
 * # Safety
 * `result` must be valid and `out` point to 16 doubles.
 */
enum RpdStatus rpd_result_pose(const struct RpdResult *result, size_t run, double *out);

/**
 * Classifier score of `run`; NaN when no classifier was given.
 *
 * # Safety
 * `result` must be valid.
 */
double rpd_result_score(const struct RpdResult *result, size_t run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RPDIFF_H */
