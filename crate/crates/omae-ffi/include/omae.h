#ifndef OMAE_FFI_H
#define OMAE_FFI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

#define OMAE_OK 0

#define OMAE_ERR_NULL -1

/**
 * Opaque trained-model handle (schedule + weights from a checkpoint).
 */
typedef struct OmaeModel OmaeModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread. Valid until the
 * next failing call on the same thread; never null.
 */
const char *omae_last_error(void);

/**
 * Load a full training checkpoint. The reconstruction grid uses the
 * checkpoint's dimensions with 0.5 m voxels centered on the sensor in XY
 * (the desk-scale layout). Returns 0 and writes the handle to `out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string, `out` a valid pointer.
 */
int32_t omae_model_load(const char *path, struct OmaeModel **out);

/**
 * Release a model handle. A null handle is a no-op.
 *
 * # Safety
 * `model` must come from `omae_model_load` and not be freed twice.
 */
void omae_model_free(struct OmaeModel *model);

/**
 * Grid dimensions (W, H, D) of a loaded model.
 *
 * # Safety
 * `dims` must point to at least 3 writable u32 values.
 */
int32_t omae_model_grid_dims(const struct OmaeModel *model, uint32_t *dims);

/**
 * Generate one synthetic scene and write it as a point file
 * (little-endian x, y, z, intensity f32 records).
 *
 * # Safety
 * `path` must be a NUL-terminated string.
 */
int32_t omae_scene_write(uint64_t seed, uint32_t num_rays, const char *path);

/**
 * Mask a scene with the default range-aware ratios under `mask_seed`,
 * reconstruct it with the model, and write the hidden-region occupancy
 * IoU (masked occupied voxels plus all free voxels) at threshold 0.5
 * to `masked_iou`.
 *
 * # Safety
 * `model` from `omae_model_load`; `scene_path` NUL-terminated;
 * `masked_iou` a valid pointer.
 */
int32_t omae_model_score(const struct OmaeModel *model,
                         const char *scene_path,
                         uint64_t mask_seed,
                         double *masked_iou);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OMAE_FFI_H */
