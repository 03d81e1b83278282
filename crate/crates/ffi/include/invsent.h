#ifndef INVSENT_H
#define INVSENT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define INVSENT_SOURCE_EN 0

#define INVSENT_SOURCE_DE 1

#define INVSENT_SOURCE_ENSEMBLE_AVG 2

#define INVSENT_SOURCE_ENSEMBLE_CONCAT 3

#define INVSENT_SOURCE_PROJECTED 4

#define INVSENT_POOLING_MEAN 0

#define INVSENT_POOLING_CONCAT3 1

/**
 * Result of every fallible call.
 */
typedef enum InvsentStatus {
  INVSENT_STATUS_OK = 0,
  INVSENT_STATUS_NULL_POINTER = 1,
  INVSENT_STATUS_INVALID_ARGUMENT = 2,
  /**
   * A string argument is not valid UTF-8.
   */
  INVSENT_STATUS_UTF8 = 3,
  INVSENT_STATUS_IO = 4,
  /**
   * Malformed input text, or a sentence with no known words.
   */
  INVSENT_STATUS_PARSE = 5,
  INVSENT_STATUS_CHECKPOINT = 6,
  /**
   * The output buffer is too small; the required length was written.
   */
  INVSENT_STATUS_BUFFER_TOO_SMALL = 7,
  INVSENT_STATUS_NUMERIC = 8,
  INVSENT_STATUS_FAILED = 9,
  INVSENT_STATUS_PANIC = 10,
} InvsentStatus;

/**
 * A loaded checkpoint.
 */
typedef struct InvsentModel InvsentModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *invsent_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until
 * the next call into the library on the same thread.
 */
const char *invsent_last_error_message(void);

/**
 * Loads the checkpoint at `path` into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum InvsentStatus invsent_model_load(const char *path, struct InvsentModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or come from [`invsent_model_load`] and not have
 * been freed.
 */
void invsent_model_free(struct InvsentModel *model);

/**
 * Writes the code width `2d` and the word-vector width `d_v`.
 *
 * # Safety
 * `model` must be a live handle; the out pointers must be writable.
 */
enum InvsentStatus invsent_model_dims(const struct InvsentModel *model,
                                      size_t *code_dim,
                                      size_t *word_dim);

/**
 * Number of floats one sentence encodes to under `source` and `pooling`.
 *
 * # Safety
 * `model` must be a live handle; `len` must be writable.
 */
enum InvsentStatus invsent_representation_len(const struct InvsentModel *model,
                                              uint32_t source,
                                              uint32_t pooling,
                                              size_t *len);

/**
 * `‖WWᵀ − I‖_F` of the decoder projection.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum InvsentStatus invsent_orthonormality_error(const struct InvsentModel *model, double *out);

/**
 * Encodes `count` sentences into `out`, row-major, `count * len` floats
 * where `len` is [`invsent_representation_len`]. With `postprocess` set
 * the top singular direction over the batch is removed per source.
 *
 * When `capacity` is too small the required float count is written to
 * `written` and [`InvsentStatus::BufferTooSmall`] is returned.
 *
 * # Safety
 * `model` must be a live handle, `sentences` must point to `count`
 * NUL-terminated strings, `out` to `capacity` writable floats and
 * `written` must be writable.
 */
enum InvsentStatus invsent_encode(const struct InvsentModel *model,
                                  const char *const *sentences,
                                  size_t count,
                                  uint32_t source,
                                  uint32_t pooling,
                                  bool postprocess,
                                  float *out,
                                  size_t capacity,
                                  size_t *written);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INVSENT_H */
