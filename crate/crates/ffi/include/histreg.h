/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef HISTREG_H
#define HISTREG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code of every fallible call.
 */
typedef enum HrStatus {
  HR_STATUS_OK = 0,
  /**
   * A null pointer, bad size or malformed string was passed.
   */
  HR_STATUS_INVALID_ARGUMENT = 1,
  /**
   * Unreadable file, bad image or invalid configuration.
   */
  HR_STATUS_INPUT_ERROR = 2,
  /**
   * A registration stage made no progress.
   */
  HR_STATUS_REGISTRATION_FAILED = 3,
  /**
   * A bug in the library; the message has details.
   */
  HR_STATUS_INTERNAL_ERROR = 4,
} HrStatus;

/**
 * Gray image with physical pixel spacing.
 */
typedef struct HrImage HrImage;

/**
 * Outcome of a full registration.
 */
typedef struct HrResult HrResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread. Valid until the next
 * failing call on the same thread; never null.
 */
const char *hr_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *hr_version(void);

/**
 * Copies `width * height` row-major intensities into a new image.
 *
 * # Safety
 * `data` must point to `width * height` readable doubles and `out` to a
 * writable handle slot.
 */
enum HrStatus hr_image_new(size_t width,
                           size_t height,
                           double spacing,
                           const double *data,
                           struct HrImage **out);

/**
 * Loads a PNG or TIFF slide, converted to gray and inverted so the white
 * background becomes 0.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable handle slot.
 */
enum HrStatus hr_image_load(const char *path, double spacing, struct HrImage **out);

/**
 * # Safety
 * `img` must be null or a handle from this library that was not freed yet.
 */
void hr_image_free(struct HrImage *img);

/**
 * # Safety
 * `img` must be a live handle; the out pointers must be writable.
 */
enum HrStatus hr_image_size(const struct HrImage *img, size_t *width, size_t *height);

/**
 * Registers `template` onto `reference` with all three stages.
 * `config_json` may be null for the defaults; otherwise it holds a JSON
 * object with any subset of the pipeline settings.
 *
 * # Safety
 * Both images must be live handles, `config_json` null or NUL-terminated,
 * and `out` a writable handle slot.
 */
enum HrStatus hr_register(const struct HrImage *reference,
                          const struct HrImage *template_,
                          const char *config_json,
                          struct HrResult **out);

/**
 * # Safety
 * `res` must be null or a handle from this library that was not freed yet.
 */
void hr_result_free(struct HrResult *res);

/**
 * Rigid parameters `[phi, t1, t2]`.
 *
 * # Safety
 * `res` must be a live handle and `out` must have room for 3 doubles.
 */
enum HrStatus hr_result_rigid(const struct HrResult *res, double *out);

/**
 * Affine parameters `[a11, a12, a21, a22, b1, b2]`.
 *
 * # Safety
 * `res` must be a live handle and `out` must have room for 6 doubles.
 */
enum HrStatus hr_result_affine(const struct HrResult *res, double *out);

/**
 * Control grid size: `m1` nodes per row, `m2` rows.
 *
 * # Safety
 * `res` must be a live handle; the out pointers must be writable.
 */
enum HrStatus hr_result_grid_size(const struct HrResult *res, size_t *m1, size_t *m2);

/**
 * Copies the row-major node displacements into `u1` and `u2`, each of
 * length `m1 * m2`.
 *
 * # Safety
 * `res` must be a live handle and both buffers must hold `len` doubles.
 */
enum HrStatus hr_result_grid_displacements(const struct HrResult *res,
                                           double *u1,
                                           double *u2,
                                           size_t len);

/**
 * Maps a reference point through the final transform.
 *
 * # Safety
 * `res` must be a live handle; the out pointers must be writable.
 */
enum HrStatus hr_result_map_point(const struct HrResult *res,
                                  double x,
                                  double y,
                                  double *out_x,
                                  double *out_y);

/**
 * Writes the deformation field in the library's binary grid format.
 *
 * # Safety
 * `res` must be a live handle and `path` a NUL-terminated string.
 */
enum HrStatus hr_result_save_deformation(const struct HrResult *res, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HISTREG_H */
