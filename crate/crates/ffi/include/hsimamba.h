#ifndef HSIMAMBA_H
#define HSIMAMBA_H

#include <stddef.h>
#include <stdint.h>

// Status codes; the nonzero values match the command-line exit codes.
typedef enum HsmStatus {
  HSM_STATUS_OK = 0,
  HSM_STATUS_NULL_POINTER = 1,
  HSM_STATUS_VALIDATION = 2,
  HSM_STATUS_DIVERGED = 3,
  HSM_STATUS_IO = 4,
  HSM_STATUS_PANIC = 5,
} HsmStatus;

// Opaque hyperspectral cube.
typedef struct HsmCube HsmCube;

// Opaque trained classifier.
typedef struct HsmModel HsmModel;

// Training settings. Obtain defaults from `hsm_train_options_default`.
typedef struct HsmTrainOptions {
  uint32_t patch;
  uint32_t hidden;
  uint32_t epochs;
  uint32_t batch_size;
  double lr;
  uint64_t seed;
  // Nonzero enables the rotation and flip copies.
  uint8_t augment;
} HsmTrainOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. Owned by the
// library; valid until the next call.
const char *hsm_last_error(void);

// Library version as a static NUL-terminated string.
const char *hsm_version(void);

struct HsmTrainOptions hsm_train_options_default(void);

// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum HsmStatus hsm_cube_synthetic(uint32_t height,
                                  uint32_t width,
                                  uint32_t bands,
                                  uint32_t classes,
                                  double noise_sigma,
                                  uint64_t seed,
                                  struct HsmCube **out);

// # Safety
// `path` must be a NUL-terminated string; `out` as for `hsm_cube_synthetic`.
enum HsmStatus hsm_cube_read(const char *path, struct HsmCube **out);

// # Safety
// `cube` must be a live handle and `path` a NUL-terminated string.
enum HsmStatus hsm_cube_write(const struct HsmCube *cube, const char *path);

// Writes height, width, bands and class count. Any output may be NULL.
//
// # Safety
// `cube` must be a live handle; non-null outputs must be writable.
enum HsmStatus hsm_cube_dims(const struct HsmCube *cube,
                             uint32_t *height,
                             uint32_t *width,
                             uint32_t *bands,
                             uint32_t *classes);

// Min-max normalizes every band and draws `train_per_class` training
// pixels per class; the rest become test pixels.
//
// # Safety
// `cube` must be a live handle not used concurrently.
enum HsmStatus hsm_cube_prepare(struct HsmCube *cube, uint32_t train_per_class, uint64_t seed);

// # Safety
// `cube` must come from this library and not be used afterwards. NULL is ignored.
void hsm_cube_free(struct HsmCube *cube);

// Trains on the cube's split and writes the new model to `out`. Test-set
// overall accuracy goes to `test_oa` when it is not NULL.
//
// # Safety
// `cube` must be a prepared live handle, `options` readable, `out` writable.
enum HsmStatus hsm_model_train(const struct HsmCube *cube,
                               const struct HsmTrainOptions *options,
                               struct HsmModel **out,
                               double *test_oa);

// # Safety
// `path` must be NUL-terminated; `out` writable.
enum HsmStatus hsm_model_load(const char *path, struct HsmModel **out);

// # Safety
// `model` must be a live handle and `path` NUL-terminated.
enum HsmStatus hsm_model_save(const struct HsmModel *model, const char *path);

// Input geometry and class count of a model. Any output may be NULL.
//
// # Safety
// `model` must be a live handle; non-null outputs must be writable.
enum HsmStatus hsm_model_info(const struct HsmModel *model,
                              uint32_t *patch,
                              uint32_t *bands,
                              uint32_t *classes);

// Class scores for `count` patches laid out `[count, p, p, bands]`;
// writes `count × classes` values to `out`.
//
// # Safety
// `patches` must hold `count·p·p·bands` floats and `out` room for
// `count·classes` floats.
enum HsmStatus hsm_model_logits(const struct HsmModel *model,
                                const float *patches,
                                uintptr_t count,
                                float *out);

// 0-based predicted class per patch.
//
// # Safety
// As for `hsm_model_logits`, with `labels` room for `count` values.
enum HsmStatus hsm_model_predict(const struct HsmModel *model,
                                 const float *patches,
                                 uintptr_t count,
                                 uint32_t *labels);

// # Safety
// `model` must come from this library and not be used afterwards. NULL is ignored.
void hsm_model_free(struct HsmModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HSIMAMBA_H */
