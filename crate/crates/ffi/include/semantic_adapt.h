#ifndef SEMANTIC_ADAPT_H
#define SEMANTIC_ADAPT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SaStatus {
  SA_STATUS_OK = 0,
  SA_STATUS_NULL_POINTER = 1,
  SA_STATUS_INVALID_ARGUMENT = 2,
  SA_STATUS_SHAPE = 3,
  SA_STATUS_LABEL_OUT_OF_RANGE = 4,
  SA_STATUS_CHECKPOINT = 5,
  SA_STATUS_IO = 6,
  SA_STATUS_NON_FINITE = 7,
  SA_STATUS_INTERNAL = 8,
} SaStatus;

typedef enum SaDirection {
  SA_DIRECTION_VIRTUAL_TO_REAL = 0,
  SA_DIRECTION_REAL_TO_VIRTUAL = 1,
} SaDirection;

/**
 * Opaque handle to a loaded generator.
 */
typedef struct SaGenerator SaGenerator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL terminated,
 * truncated to `len`). Returns the full message length without the NUL.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t sa_last_error_message(char *buf, size_t len);

/**
 * Loads one generator from a training checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SaStatus sa_generator_load(const char *path,
                                enum SaDirection direction,
                                struct SaGenerator **out);

/**
 * Releases a generator. Null is ignored.
 *
 * # Safety
 * `generator` must come from [`sa_generator_load`] and not be used afterwards.
 */
void sa_generator_free(struct SaGenerator *generator);

/**
 * Height and width must be multiples of this value.
 *
 * # Safety
 * `generator` must be a live handle.
 */
enum SaStatus sa_generator_size_multiple(const struct SaGenerator *generator, size_t *out);

/**
 * Translates one image. `input` and `output` hold `3 * height * width` floats
 * and may not overlap.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum SaStatus sa_generator_adapt(const struct SaGenerator *generator,
                                 const float *input,
                                 size_t height,
                                 size_t width,
                                 float *output);

/**
 * Writes the 0/1 class-boundary mask of a label map (`height * width` floats).
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum SaStatus sa_boundary_mask(const uint32_t *label_values,
                               size_t height,
                               size_t width,
                               size_t num_classes,
                               float *output);

/**
 * Soft gradient-sensitive loss between an image and its translation.
 *
 * # Safety
 * Pointers must be valid for the stated lengths; `out` must be writable.
 */
enum SaStatus sa_soft_grad_loss(const float *x,
                                const float *x_adapted,
                                const uint32_t *label_values,
                                size_t height,
                                size_t width,
                                size_t num_classes,
                                float alpha,
                                float beta,
                                double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEMANTIC_ADAPT_H */
