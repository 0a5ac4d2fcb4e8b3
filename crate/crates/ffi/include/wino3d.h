/* C ABI for the wino3d 3D Winograd convolution engine. */

#ifndef WINO3D_H
#define WINO3D_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible call. `wino3d_last_error` holds
 * the human-readable detail for the most recent non-OK return on this
 * thread.
 */
typedef enum Wino3dStatus {
  WINO3D_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  WINO3D_STATUS_NULL_ARGUMENT = 1,
  /**
   * Arguments were structurally invalid: bad shapes, lengths, ranks,
   * non-UTF-8 paths, or rejected configuration.
   */
  WINO3D_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The filesystem refused the operation.
   */
  WINO3D_STATUS_IO = 3,
  /**
   * The file is not a valid `.lrt` / `.lrw` payload.
   */
  WINO3D_STATUS_FORMAT = 4,
  /**
   * An internal numeric or consistency check failed.
   */
  WINO3D_STATUS_INTERNAL = 5,
} Wino3dStatus;

/**
 * Opaque handle around a loaded model.
 */
typedef struct Wino3dModel Wino3dModel;

/**
 * Opaque handle around an f32 tensor.
 */
typedef struct Wino3dTensor Wino3dTensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Version of the underlying engine as a static NUL-terminated string.
 */
const char *wino3d_version(void);

/**
 * Message for the most recent failure on the calling thread; empty string
 * if nothing failed yet. Valid until the next failing call on this thread.
 */
const char *wino3d_last_error(void);

/**
 * Build a tensor from `ndim` extents and exactly `len` f32 values
 * (row-major). The data is copied.
 *
 * # Safety
 * `dims` must point to `ndim` readable `size_t`s and `data` to `len`
 * readable floats.
 */
enum Wino3dStatus wino3d_tensor_new(const size_t *dims,
                                    size_t ndim,
                                    const float *data,
                                    size_t len,
                                    struct Wino3dTensor **out);

/**
 * Load a `.lrt` tensor. f64 payloads are narrowed to f32.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum Wino3dStatus wino3d_tensor_load(const char *path, struct Wino3dTensor **out);

/**
 * Write the tensor as an f32 `.lrt` file.
 *
 * # Safety
 * `t` must be a live tensor handle; `path` must be NUL-terminated.
 */
enum Wino3dStatus wino3d_tensor_save(const struct Wino3dTensor *t, const char *path);

/**
 * Number of axes, or 0 for a null handle.
 *
 * # Safety
 * `t` must be null or a live tensor handle.
 */
size_t wino3d_tensor_ndim(const struct Wino3dTensor *t);

/**
 * Copy the extents into `out`, which must hold `ndim` values (query
 * `wino3d_tensor_ndim` first).
 *
 * # Safety
 * `t` must be a live tensor handle; `out` must point to `ndim` writable
 * `size_t`s.
 */
enum Wino3dStatus wino3d_tensor_dims(const struct Wino3dTensor *t, size_t *out, size_t ndim);

/**
 * Total element count, or 0 for a null handle.
 *
 * # Safety
 * `t` must be null or a live tensor handle.
 */
size_t wino3d_tensor_len(const struct Wino3dTensor *t);

/**
 * Borrowed pointer to the row-major elements; null for a null handle.
 * Valid until the tensor is freed.
 *
 * # Safety
 * `t` must be null or a live tensor handle.
 */
const float *wino3d_tensor_data(const struct Wino3dTensor *t);

/**
 * Release a tensor handle. Null is a no-op.
 *
 * # Safety
 * `t` must be null or an owned handle not freed before.
 */
void wino3d_tensor_free(struct Wino3dTensor *t);

/**
 * Load a `.lrw` model.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum Wino3dStatus wino3d_model_load(const char *path, struct Wino3dModel **out);

/**
 * Write the model as a `.lrw` file.
 *
 * # Safety
 * `m` must be a live model handle; `path` must be NUL-terminated.
 */
enum Wino3dStatus wino3d_model_save(const struct Wino3dModel *m, const char *path);

/**
 * Number of layers, or 0 for a null handle.
 *
 * # Safety
 * `m` must be null or a live model handle.
 */
size_t wino3d_model_layer_count(const struct Wino3dModel *m);

/**
 * Run the model on a `(C, D, H, W)` input tensor; on success `out`
 * receives a new rank-1 tensor of logits.
 *
 * # Safety
 * `m` and `input` must be live handles; `out` must be writable.
 */
enum Wino3dStatus wino3d_model_forward(const struct Wino3dModel *m,
                                       const struct Wino3dTensor *input,
                                       struct Wino3dTensor **out);

/**
 * Release a model handle. Null is a no-op.
 *
 * # Safety
 * `m` must be null or an owned handle not freed before.
 */
void wino3d_model_free(struct Wino3dModel *m);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WINO3D_H */
