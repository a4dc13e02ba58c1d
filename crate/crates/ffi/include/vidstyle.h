#ifndef VIDSTYLE_H
#define VIDSTYLE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VsStatus {
  VS_STATUS_OK = 0,
  VS_STATUS_NULL_POINTER = 1,
  VS_STATUS_INVALID_ARGUMENT = 2,
  VS_STATUS_IO = 3,
  VS_STATUS_FORMAT = 4,
  VS_STATUS_SHAPE = 5,
  VS_STATUS_CONFIG = 6,
  VS_STATUS_NUMERIC = 7,
  VS_STATUS_PANIC = 8,
} VsStatus;

// Dense two-channel optical flow.
typedef struct VsFlow VsFlow;

// Image with `f64` samples in `[0, 1]`, row-major, channels interleaved.
typedef struct VsImage VsImage;

typedef struct VsStylizeOptions {
  // Seed of the noise initialization.
  uint64_t seed;
  // 0 keeps the solver default.
  size_t max_iterations;
  // Use the fixed benchmark weights instead of the per-resolution table.
  bool benchmark_weights;
  // Loosen the convergence threshold.
  bool relaxed;
} VsStylizeOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the next
// failing call on the same thread.
const char *vs_last_error_message(void);

// Static NUL-terminated version string.
const char *vs_version(void);

// # Safety
// `data` must point to `width * height * channels` readable doubles.
enum VsStatus vs_image_new(size_t width,
                           size_t height,
                           size_t channels,
                           const double *data,
                           struct VsImage **out);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum VsStatus vs_image_read_ppm(const char *path, struct VsImage **out);

// Writes an 8-bit binary PPM.
//
// # Safety
// `img` must be a live handle and `path` a NUL-terminated string.
enum VsStatus vs_image_write_ppm(const struct VsImage *img, const char *path);

// # Safety
// `img` must be a live handle or null.
size_t vs_image_width(const struct VsImage *img);

// # Safety
// `img` must be a live handle or null.
size_t vs_image_height(const struct VsImage *img);

// # Safety
// `img` must be a live handle or null.
size_t vs_image_channels(const struct VsImage *img);

// Copies the samples into `dst`, which must hold exactly `width * height * channels`.
//
// # Safety
// `img` must be a live handle and `dst` must point to `len` writable doubles.
enum VsStatus vs_image_copy_data(const struct VsImage *img, double *dst, size_t len);

// # Safety
// `img` must come from this library and not be used afterwards. Null is ignored.
void vs_image_free(struct VsImage *img);

// `data` holds `(u, v)` pairs, row-major.
//
// # Safety
// `data` must point to `2 * width * height` readable floats.
enum VsStatus vs_flow_new(size_t width, size_t height, const float *data, struct VsFlow **out);

// Reads a Middlebury `.flo` file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum VsStatus vs_flow_read_flo(const char *path, struct VsFlow **out);

// # Safety
// `flow` must be a live handle or null.
size_t vs_flow_width(const struct VsFlow *flow);

// # Safety
// `flow` must be a live handle or null.
size_t vs_flow_height(const struct VsFlow *flow);

// # Safety
// `flow` must come from this library and not be used afterwards. Null is ignored.
void vs_flow_free(struct VsFlow *flow);

// Backward warp: `out(x) = src(x + backward(x))`, bilinear, borders clamped.
//
// # Safety
// `src` and `backward` must be live handles; `out` must be writable.
enum VsStatus vs_warp_image(const struct VsImage *src,
                            const struct VsFlow *backward,
                            struct VsImage **out);

// Per-pixel temporal weights on the later frame's grid: 0 where the forward-backward
// check or the motion-boundary check fails, 1 elsewhere.
//
// # Safety
// Both flows must be live handles; `dst` must point to `len == width * height`
// writable doubles.
enum VsStatus vs_consistency_weights(const struct VsFlow *forward,
                                     const struct VsFlow *backward,
                                     double *dst,
                                     size_t len);

struct VsStylizeOptions vs_stylize_options_default(void);

// Single-image transfer from noise with the built-in extractor.
//
// # Safety
// `content` and `style` must be live handles; `options` may be null for defaults;
// `out` must be writable.
enum VsStatus vs_stylize_image(const struct VsImage *content,
                               const struct VsImage *style,
                               const struct VsStylizeOptions *options,
                               struct VsImage **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VIDSTYLE_H */
