#ifndef MMQS_H
#define MMQS_H

/* This file is generated by cbindgen from mmqs-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every API call.
typedef enum mmqs_status {
  MmqsOk = 0,
  // A required pointer argument was NULL.
  MmqsNullArgument = 1,
  // A value was malformed or out of range.
  MmqsInvalidArgument = 2,
  // Image shapes do not agree.
  MmqsShapeMismatch = 3,
  // File could not be read or written.
  MmqsIoError = 4,
  // The optimization or another internal step failed.
  MmqsRuntimeError = 5,
} mmqs_status;

// Opaque task configuration handle.
typedef struct MmqsConfig MmqsConfig;

// Opaque image handle (grayscale or RGB, f64 samples in [0, 1]).
typedef struct MmqsImage MmqsImage;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on this thread. The pointer
// stays valid until the next failing call on the same thread.
const char *mmqs_last_error_message(void);

// Release a string returned by this library.
//
// # Safety
// `s` must have been returned by an mmqs function and not freed before.
void mmqs_string_free(char *s);

// Create an image from a row-major, channel-interleaved sample buffer of
// length `height * width * channels` (channels must be 1 or 3).
//
// # Safety
// `data` must point to at least `height * width * channels` doubles;
// `out` must be a valid destination pointer.
enum mmqs_status mmqs_image_create(size_t height,
                                   size_t width,
                                   size_t channels,
                                   const double *data,
                                   struct MmqsImage **out);

// Load an 8-bit PNG or PGM/PPM file.
//
// # Safety
// `path` must be a valid NUL-terminated string, `out` a valid pointer.
enum mmqs_status mmqs_image_load(const char *path, struct MmqsImage **out);

// Write an image as 8-bit PNG or PGM/PPM (clamped to [0, 1]).
//
// # Safety
// `img` must be a live handle, `path` a valid NUL-terminated string.
enum mmqs_status mmqs_image_save(const struct MmqsImage *img, const char *path);

// # Safety
// `img` must be NULL or a live handle.
size_t mmqs_image_height(const struct MmqsImage *img);

// # Safety
// `img` must be NULL or a live handle.
size_t mmqs_image_width(const struct MmqsImage *img);

// # Safety
// `img` must be NULL or a live handle.
size_t mmqs_image_channels(const struct MmqsImage *img);

// Copy the samples into `buf` (length `height * width * channels`).
//
// # Safety
// `buf` must have room for `len` doubles; `img` must be a live handle.
enum mmqs_status mmqs_image_data(const struct MmqsImage *img, double *buf, size_t len);

// # Safety
// `img` must be NULL or an owned handle; it is invalid afterwards.
void mmqs_image_free(struct MmqsImage *img);

// Peak signal-to-noise ratio in dB (infinite for identical images).
//
// # Safety
// All pointers must be live handles / valid destinations.
enum mmqs_status mmqs_psnr(const struct MmqsImage *reference,
                           const struct MmqsImage *estimate,
                           double *out);

// Mean SSIM over 8x8 sliding windows (color inputs use the channel mean).
//
// # Safety
// All pointers must be live handles / valid destinations.
enum mmqs_status mmqs_ssim(const struct MmqsImage *reference,
                           const struct MmqsImage *estimate,
                           double *out);

// New configuration holding the preset for `task` (one of "inpaint",
// "deblur", "sr", "denoise").
//
// # Safety
// `task` must be a valid NUL-terminated string, `out` a valid pointer.
enum mmqs_status mmqs_config_new(const char *task, struct MmqsConfig **out);

// Parse a full config from the flat `key = value` text format.
//
// # Safety
// `text` must be a valid NUL-terminated string, `out` a valid pointer.
enum mmqs_status mmqs_config_parse(const char *text, struct MmqsConfig **out);

// Override one config key (same keys as the text format).
//
// # Safety
// `cfg` must be a live handle; `key` and `value` valid strings.
enum mmqs_status mmqs_config_set(struct MmqsConfig *cfg, const char *key, const char *value);

// Render the config in the flat text format. Free with
// [`mmqs_string_free`]. Returns NULL on NULL input.
//
// # Safety
// `cfg` must be NULL or a live handle.
char *mmqs_config_serialize(const struct MmqsConfig *cfg);

// # Safety
// `cfg` must be NULL or an owned handle; it is invalid afterwards.
void mmqs_config_free(struct MmqsConfig *cfg);

// Synthesize a degraded observation from a clean reference according to
// the config's task (seeded by the config seed). For inpainting
// `mask_out` receives the generated mask when non-NULL.
//
// # Safety
// `cfg` and `reference` must be live handles; `observed_out` valid;
// `mask_out` NULL or valid.
enum mmqs_status mmqs_degrade(const struct MmqsConfig *cfg,
                              const struct MmqsImage *reference,
                              struct MmqsImage **observed_out,
                              struct MmqsImage **mask_out);

// Run the full reconstruction in memory and return the restored image.
//
// For the inpainting task `mask` is required (0 = missing); other tasks
// ignore it. Paths inside the config are not touched; no files are
// written.
//
// # Safety
// `cfg` and `observed` must be live handles; `mask` NULL or a live
// handle; `out` a valid destination pointer.
enum mmqs_status mmqs_reconstruct(const struct MmqsConfig *cfg,
                                  const struct MmqsImage *observed,
                                  const struct MmqsImage *mask,
                                  struct MmqsImage **out);

// Run a configured task end to end through the filesystem, exactly like
// the command-line front end (reads the config's input paths, writes all
// artifacts into its out_dir).
//
// # Safety
// `cfg` must be a live handle.
enum mmqs_status mmqs_run_task(const struct MmqsConfig *cfg);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MMQS_H */
