#ifndef AMFUSE_H
#define AMFUSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AmfuseStatus {
  AMFUSE_STATUS_OK = 0,
  AMFUSE_STATUS_NULL_POINTER = 1,
  AMFUSE_STATUS_INVALID_UTF8 = 2,
  AMFUSE_STATUS_CONFIG = 3,
  AMFUSE_STATUS_USAGE = 4,
  AMFUSE_STATUS_DIMENSION = 5,
  AMFUSE_STATUS_DATA = 6,
  AMFUSE_STATUS_FORMAT = 7,
  AMFUSE_STATUS_IO = 8,
  AMFUSE_STATUS_BUFFER_TOO_SMALL = 9,
  AMFUSE_STATUS_PANIC = 10,
} AmfuseStatus;

/**
 * Opaque model handle.
 */
typedef struct AmfuseModel AmfuseModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *amfuse_version(void);

/**
 * Message of the last failure on this thread, or null. Free with [`amfuse_string_free`].
 */
char *amfuse_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed at most once.
 */
void amfuse_string_free(char *s);

/**
 * Builds a freshly initialised model from a JSON config.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `out` must be writable.
 */
enum AmfuseStatus amfuse_model_new(const char *config_json,
                                   uint64_t seed,
                                   struct AmfuseModel **out);

/**
 * Loads `.nnz` weights saved for the given config.
 *
 * # Safety
 * Both strings must be NUL-terminated; `out` must be writable.
 */
enum AmfuseStatus amfuse_model_load(const char *config_json,
                                    const char *weights_path,
                                    struct AmfuseModel **out);

/**
 * # Safety
 * `model` must be a live handle; `weights_path` NUL-terminated.
 */
enum AmfuseStatus amfuse_model_save(const struct AmfuseModel *model, const char *weights_path);

/**
 * # Safety
 * `model` must be null or a handle from this library, freed at most once.
 */
void amfuse_model_free(struct AmfuseModel *model);

/**
 * Config of a model as JSON. Free with [`amfuse_string_free`]; null on a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
char *amfuse_model_config_json(const struct AmfuseModel *model);

/**
 * # Safety
 * `model` must be a live handle.
 */
size_t amfuse_model_num_classes(const struct AmfuseModel *model);

/**
 * # Safety
 * `model` must be a live handle.
 */
size_t amfuse_model_num_modalities(const struct AmfuseModel *model);

/**
 * Scalar parameter total and the increment from one more secondary modality.
 *
 * # Safety
 * `config_json` NUL-terminated; output pointers writable.
 */
enum AmfuseStatus amfuse_count_params(const char *config_json,
                                      uint64_t *total,
                                      uint64_t *per_modality_increment);

/**
 * Forward pass. `frames` holds `modalities x 3 x height x width` values in
 * `[0, 1]`, modality-major; `logits` receives `num_classes x height x width`.
 *
 * # Safety
 * `frames` and `logits` must point to buffers of the stated lengths.
 */
enum AmfuseStatus amfuse_model_forward(const struct AmfuseModel *model,
                                       const double *frames,
                                       size_t height,
                                       size_t width,
                                       double *logits,
                                       size_t logits_len);

/**
 * Per-pixel class ids (`height x width`), ties resolved to the lower class.
 *
 * # Safety
 * `frames` and `classes` must point to buffers of the stated lengths.
 */
enum AmfuseStatus amfuse_model_segment(const struct AmfuseModel *model,
                                       const double *frames,
                                       size_t height,
                                       size_t width,
                                       uint32_t *classes,
                                       size_t classes_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AMFUSE_H */
