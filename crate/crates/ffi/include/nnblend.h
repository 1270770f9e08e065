#ifndef NNBLEND_H
#define NNBLEND_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

/**
 * Result of every fallible call.
 */
typedef enum {
  NNB_STATUS_OK = 0,
  NNB_STATUS_NULL_POINTER = 1,
  NNB_STATUS_INVALID_ARGUMENT = 2,
  NNB_STATUS_SHAPE = 3,
  NNB_STATUS_PRECONDITION = 4,
  NNB_STATUS_INFEASIBLE = 5,
  NNB_STATUS_FORMAT = 6,
  NNB_STATUS_IO = 7,
  /**
   * Internal inconsistency or a caught panic.
   */
  NNB_STATUS_INTERNAL = 8,
} NnbStatus;

/**
 * Gating modes accepted by [`nnb_should_apply`].
 */
typedef enum {
  NNB_GATING_MODE_DEFAULT = 0,
  NNB_GATING_MODE_FAST = 1,
  NNB_GATING_MODE_SLOW = 2,
} NnbGatingMode;

/**
 * Float network (NNBB weights).
 */
typedef struct NnbFloatNet NnbFloatNet;

/**
 * Int16 network (NNBQ) with its private scratch buffers.
 */
typedef struct NnbIntNet NnbIntNet;

/**
 * Size figures of a network depth.
 */
typedef struct {
  uint32_t n_layers;
  uint32_t border;
  uint64_t param_count;
  uint64_t param_bytes;
  /**
   * At the requested MAC block size, border overhead included.
   */
  double mac_per_pixel;
  /**
   * At the requested memory block size.
   */
  uint64_t peak_memory_bytes;
} NnbNetInfo;

/**
 * Coding-unit metadata for gating.
 */
typedef struct {
  bool is_affine;
  bool uses_ciip;
  /**
   * Non-default BCW weight.
   */
  bool uses_bcw;
  bool uses_smvd;
  int32_t poc_current;
  int32_t poc_ref0;
  int32_t poc_ref1;
  uint32_t width;
  uint32_t height;
  bool is_biprediction;
} NnbCuMeta;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *nnb_version(void);

/**
 * Message of the last failed call on this thread, or null after a
 * successful call. Valid until the next call on the same thread.
 */
const char *nnb_last_error(void);

/**
 * Load float weights from an NNBB file.
 *
 * # Safety
 * `path` is a NUL-terminated string and `out` is writable.
 */
NnbStatus nnb_float_net_read(const char *path, NnbFloatNet **out);

/**
 * Decode float weights from an in-memory NNBB image.
 *
 * # Safety
 * `data` points to `len` readable bytes and `out` is writable.
 */
NnbStatus nnb_float_net_from_bytes(const uint8_t *data, size_t len, NnbFloatNet **out);

/**
 * Release a float network. Null is ignored.
 *
 * # Safety
 * `net` is null or a handle from this library not yet freed.
 */
void nnb_float_net_free(NnbFloatNet *net);

/**
 * Load an int16 network from an NNBQ file.
 *
 * # Safety
 * `path` is a NUL-terminated string and `out` is writable.
 */
NnbStatus nnb_int_net_read(const char *path, NnbIntNet **out);

/**
 * Decode an int16 network from an in-memory NNBQ image.
 *
 * # Safety
 * `data` points to `len` readable bytes and `out` is writable.
 */
NnbStatus nnb_int_net_from_bytes(const uint8_t *data, size_t len, NnbIntNet **out);

/**
 * Write an int16 network as an NNBQ file.
 *
 * # Safety
 * `net` is a live handle and `path` a NUL-terminated string.
 */
NnbStatus nnb_int_net_write(const NnbIntNet *net, const char *path);

/**
 * Release an int16 network. Null is ignored.
 *
 * # Safety
 * `net` is null or a handle from this library not yet freed.
 */
void nnb_int_net_free(NnbIntNet *net);

/**
 * Calibrate `net` on the patches of an in-memory NNBP image and return the
 * int16 network. With `ranges_only` the error search is skipped.
 *
 * # Safety
 * `net` is a live handle, `patches` points to `len` readable bytes and `out`
 * is writable.
 */
NnbStatus nnb_quantize(const NnbFloatNet *net,
                       const uint8_t *patches,
                       size_t len,
                       bool ranges_only,
                       NnbIntNet **out);

/**
 * Border N of a network handle (0 for null): planes passed to the blend
 * calls are `2N` samples wider and taller than the output.
 *
 * # Safety
 * `net` is null or a live handle.
 */
uint32_t nnb_int_net_border(const NnbIntNet *net);

/**
 * # Safety
 * `net` is null or a live handle.
 */
uint32_t nnb_float_net_border(const NnbFloatNet *net);

/**
 * Blend two `width x height` prediction planes (row-major) with the int16
 * engine. `out` receives `(width - 2N) x (height - 2N)` samples.
 *
 * # Safety
 * `net` is a live handle not in use on another thread; `pred0` and `pred1`
 * point to `width * height` samples; `out` points to `out_len` writable
 * samples.
 */
NnbStatus nnb_int_net_blend(NnbIntNet *net,
                            const int16_t *pred0,
                            const int16_t *pred1,
                            size_t width,
                            size_t height,
                            uint8_t bit_depth,
                            int16_t *out,
                            size_t out_len);

/**
 * Blend with the float reference path, rounded to samples.
 *
 * # Safety
 * As for [`nnb_int_net_blend`].
 */
NnbStatus nnb_float_net_blend(const NnbFloatNet *net,
                              const int16_t *pred0,
                              const int16_t *pred1,
                              size_t width,
                              size_t height,
                              uint8_t bit_depth,
                              int16_t *out,
                              size_t out_len);

/**
 * Parameter count, MAC/pixel at `mac_block` and peak activation memory at
 * `memory_block` for an `n_layers` network.
 *
 * # Safety
 * `out` is writable.
 */
NnbStatus nnb_net_info(uint32_t n_layers,
                       uint32_t mac_block,
                       uint32_t memory_block,
                       NnbNetInfo *out);

/**
 * Gating decision. `mode` is an [`NnbGatingMode`] value.
 *
 * # Safety
 * `cu` is readable and `out` writable.
 */
NnbStatus nnb_should_apply(const NnbCuMeta *cu, uint32_t mode, bool *out);

/**
 * SATD between two `width x height` planes; both sides must be multiples
 * of 8.
 *
 * # Safety
 * `a` and `b` point to `width * height` samples and `out` is writable.
 */
NnbStatus nnb_satd(const int16_t *a, const int16_t *b, size_t width, size_t height, uint64_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NNBLEND_H */
