/* Generated by cbindgen; do not edit. */

#ifndef MASTGEOREF_H
#define MASTGEOREF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum {
  MG_STATUS_OK = 0,
  MG_STATUS_NULL_POINTER = 1,
  MG_STATUS_INVALID_ARGUMENT = 2,
  MG_STATUS_TOO_FEW_POINTS = 3,
  MG_STATUS_DEGENERATE = 4,
  MG_STATUS_POINT_AT_INFINITY = 5,
  MG_STATUS_OUT_OF_DOMAIN = 6,
  MG_STATUS_EMPTY_MASK = 7,
  MG_STATUS_BUFFER_TOO_SMALL = 8,
  MG_STATUS_PANIC = 99,
} MgStatus;

/**
 * Homography fitting method for `mg_homography_fit`.
 */
typedef enum {
  MG_FIT_METHOD_LEAST_SQUARES = 0,
  MG_FIT_METHOD_DLT = 1,
} MgFitMethod;

/**
 * Opaque 3x3 projective transform.
 */
typedef struct MgHomography MgHomography;

/**
 * Opaque binary mask.
 */
typedef struct MgMask MgMask;

/**
 * Opaque first-order scattering result.
 */
typedef struct MgScatterOutput MgScatterOutput;

/**
 * Opaque slice plan.
 */
typedef struct MgSlicePlan MgSlicePlan;

/**
 * One slice of a plan, in full-frame pixels.
 */
typedef struct {
  uint32_t x0;
  uint32_t y0;
  uint32_t width;
  uint32_t height;
} MgSlice;

/**
 * Scored box for `mg_nms`.
 */
typedef struct {
  uint32_t class_id;
  double score;
  double x_min;
  double y_min;
  double x_max;
  double y_max;
} MgDetection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * NUL-terminated library version; static storage, never freed.
 */
const char *mg_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `len > 0`). Returns the full message length
 * excluding the terminator.
 */
size_t mg_last_error_message(char *buf, size_t len);

/**
 * Fits a homography to `n` pairs; `src` and `dst` hold `2 n` interleaved
 * `x, y` values (destination `x = lon`, `y = lat` for georeferencing).
 */
MgStatus mg_homography_fit(const double *src,
                           const double *dst,
                           size_t n,
                           MgFitMethod method,
                           MgHomography **out_h);

/**
 * Builds a homography from 9 row-major entries (normalized to `h33 = 1`).
 */
MgStatus mg_homography_from_entries(const double *entries, MgHomography **out_h);

/**
 * Writes the 9 row-major entries.
 */
MgStatus mg_homography_entries(const MgHomography *h, double *entries);

MgStatus mg_homography_apply(const MgHomography *h,
                             double x,
                             double y,
                             double *out_x,
                             double *out_y);

MgStatus mg_homography_invert(const MgHomography *h, MgHomography **out_h);

/**
 * Root-mean-square reprojection error over `n` interleaved pairs.
 */
MgStatus mg_homography_rmse(const MgHomography *h,
                            const double *src,
                            const double *dst,
                            size_t n,
                            double *out_rmse);

void mg_homography_free(MgHomography *h);

/**
 * Great-circle distance in meters. `radius <= 0` selects the default
 * (geocentric radius at 53.55 N).
 */
MgStatus mg_haversine(double lat1,
                      double lon1,
                      double lat2,
                      double lon2,
                      double radius,
                      double *out_m);

/**
 * Initial bearing in `[0, 360)` degrees clockwise from north.
 */
MgStatus mg_heading_angle(double lat1, double lon1, double lat2, double lon2, double *out_deg);

/**
 * `d^2 / 2r`.
 */
double mg_curvature_sagitta(double d, double r);

/**
 * WGS84 UTM coordinates; `out_south` is 1 for the southern hemisphere.
 */
MgStatus mg_to_utm(double lat,
                   double lon,
                   double *out_easting,
                   double *out_northing,
                   uint8_t *out_zone,
                   int32_t *out_south);

MgStatus mg_from_utm(double easting,
                     double northing,
                     uint8_t zone,
                     int32_t south,
                     double *out_lat,
                     double *out_lon);

/**
 * Mask from `width * height` row-major bytes; non-zero means set.
 */
MgStatus mg_mask_new(uint32_t width, uint32_t height, const uint8_t *bits, MgMask **out_mask);

/**
 * Even-odd fill of a polygon given as `n_vertices` interleaved `x, y`.
 */
MgStatus mg_mask_from_polygon(const double *xy,
                              size_t n_vertices,
                              uint32_t width,
                              uint32_t height,
                              MgMask **out_mask);

MgStatus mg_mask_area(const MgMask *m, uint64_t *out_area);

/**
 * Georeferencing pixel: fullest column, bottom-most set row.
 */
MgStatus mg_mask_georef_pixel(const MgMask *m, uint32_t *out_x, uint32_t *out_y);

MgStatus mg_mask_iou(const MgMask *a, const MgMask *b, double *out_iou);

void mg_mask_free(MgMask *m);

MgStatus mg_slice_plan_new(uint32_t width,
                           uint32_t height,
                           uint32_t slice_width,
                           uint32_t slice_height,
                           double overlap,
                           MgSlicePlan **out_plan);

MgStatus mg_slice_plan_len(const MgSlicePlan *plan, size_t *out_len);

MgStatus mg_slice_plan_get(const MgSlicePlan *plan, size_t index, MgSlice *out_slice);

void mg_slice_plan_free(MgSlicePlan *plan);

/**
 * Greedy NMS. Writes the input indices of kept detections, best first, to
 * `out_keep` (room for `n` entries) and their count to `out_kept`.
 */
MgStatus mg_nms(const MgDetection *dets,
                size_t n,
                double tau,
                bool class_aware,
                size_t *out_keep,
                size_t *out_kept);

/**
 * Circular median of `n` compass angles (degrees); ties go to the smaller.
 */
MgStatus mg_circular_median(const double *angles, size_t n, double *out_deg);

/**
 * First-order scattering of a row-major `width x height` image with a Morlet
 * bank of `scales` scales and `orientations` orientations. `kernel_size` 0
 * picks a size covering the low-pass filter.
 */
MgStatus mg_scatter(const double *image,
                    size_t width,
                    size_t height,
                    size_t scales,
                    size_t orientations,
                    size_t kernel_size,
                    bool downsample,
                    MgScatterOutput **out_s);

/**
 * Channel count (`J L + 1`) and per-channel map size.
 */
MgStatus mg_scatter_shape(const MgScatterOutput *s,
                          size_t *out_channels,
                          size_t *out_width,
                          size_t *out_height);

/**
 * Copies channel `index` (0 is the low-pass map) into `buf` of `len` values.
 */
MgStatus mg_scatter_channel(const MgScatterOutput *s, size_t index, double *buf, size_t len);

void mg_scatter_free(MgScatterOutput *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MASTGEOREF_H */
