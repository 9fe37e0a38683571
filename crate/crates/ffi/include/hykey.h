#ifndef HYKEY_H
#define HYKEY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. Values 10 to 20 are the cube-file and
 * dataset codes of the core library, unchanged.
 */
typedef enum HykeyStatus {
  HYKEY_STATUS_OK = 0,
  HYKEY_STATUS_NULL_ARGUMENT = 1,
  HYKEY_STATUS_INVALID_ARGUMENT = 2,
  HYKEY_STATUS_INVALID_UTF8 = 3,
  HYKEY_STATUS_BUFFER_TOO_SMALL = 4,
  HYKEY_STATUS_MODEL = 5,
  HYKEY_STATUS_CHECKPOINT = 6,
  HYKEY_STATUS_GEOMETRY = 7,
  HYKEY_STATUS_MATCHING = 8,
  HYKEY_STATUS_IO = 9,
  HYKEY_STATUS_CUBE_BAD_MAGIC = 10,
  HYKEY_STATUS_CUBE_UNSUPPORTED_VERSION = 11,
  HYKEY_STATUS_CUBE_HEADER_SYNTAX = 12,
  HYKEY_STATUS_CUBE_HEADER_INCONSISTENT = 13,
  HYKEY_STATUS_CUBE_PAYLOAD_LENGTH = 14,
  HYKEY_STATUS_CUBE_WAVELENGTHS = 15,
  HYKEY_STATUS_CUBE_VALUE_RANGE = 16,
  HYKEY_STATUS_CUBE_MOSAIC_DIMENSIONS = 17,
  HYKEY_STATUS_INVALID_SPEC = 18,
  HYKEY_STATUS_MANIFEST = 19,
  HYKEY_STATUS_CUBE_IO = 20,
  HYKEY_STATUS_PANIC = 99,
} HykeyStatus;

/**
 * A hyperspectral cube `[bands, height, width]`.
 */
typedef struct HykeyCube HykeyCube;

/**
 * Keypoints, scores and descriptors of one image.
 */
typedef struct HykeyFeatures HykeyFeatures;

/**
 * A network restored from a checkpoint.
 */
typedef struct HykeyNetwork HykeyNetwork;

/**
 * A mutual nearest-neighbour match.
 */
typedef struct HykeyMatch {
  uint32_t index0;
  uint32_t index1;
  float similarity;
} HykeyMatch;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *hykey_version(void);

/**
 * Message of the last failure on this thread, or null if none. Valid until
 * the next failing call on the same thread.
 */
const char *hykey_last_error_message(void);

/**
 * Reads a cube file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HykeyStatus hykey_cube_load(const char *path, struct HykeyCube **out);

/**
 * Builds a cube from band-major `[bands, height, width]` values in [0, 1]
 * with evenly spaced default wavelengths.
 *
 * # Safety
 * `data` must point to `len` floats and `out` be a valid pointer.
 */
enum HykeyStatus hykey_cube_new(size_t bands,
                                size_t height,
                                size_t width,
                                const float *data,
                                size_t len,
                                struct HykeyCube **out);

/**
 * Writes a cube file.
 *
 * # Safety
 * `cube` must come from this library; `path` must be NUL-terminated.
 */
enum HykeyStatus hykey_cube_save(const struct HykeyCube *cube, const char *path);

/**
 * Shape of a cube; any output pointer may be null.
 *
 * # Safety
 * `cube` must come from this library.
 */
enum HykeyStatus hykey_cube_shape(const struct HykeyCube *cube,
                                  size_t *bands,
                                  size_t *height,
                                  size_t *width);

/**
 * # Safety
 * `cube` must come from this library and not be used afterwards. Null is
 * ignored.
 */
void hykey_cube_free(struct HykeyCube *cube);

/**
 * Restores a network from a checkpoint file.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` a valid pointer.
 */
enum HykeyStatus hykey_network_load(const char *path, struct HykeyNetwork **out);

/**
 * # Safety
 * `net` must come from this library and not be used afterwards. Null is
 * ignored.
 */
void hykey_network_free(struct HykeyNetwork *net);

/**
 * Detects up to `max_keypoints` keypoints and describes them.
 *
 * # Safety
 * `net` and `cube` must come from this library; `out` must be valid.
 */
enum HykeyStatus hykey_network_infer(const struct HykeyNetwork *net,
                                     const struct HykeyCube *cube,
                                     size_t max_keypoints,
                                     struct HykeyFeatures **out);

/**
 * Number of keypoints and descriptor length; either pointer may be null.
 *
 * # Safety
 * `features` must come from this library.
 */
enum HykeyStatus hykey_features_size(const struct HykeyFeatures *features,
                                     size_t *count,
                                     size_t *dim);

/**
 * Keypoints as interleaved `x, y` pixel coordinates (`2 * count` floats).
 *
 * # Safety
 * `xy` must be null or hold `capacity` floats; `len` may be null.
 */
enum HykeyStatus hykey_features_keypoints(const struct HykeyFeatures *features,
                                          float *xy,
                                          size_t capacity,
                                          size_t *len);

/**
 * Detection scores, one per keypoint.
 *
 * # Safety
 * `scores` must be null or hold `capacity` floats; `len` may be null.
 */
enum HykeyStatus hykey_features_scores(const struct HykeyFeatures *features,
                                       float *scores,
                                       size_t capacity,
                                       size_t *len);

/**
 * Unit-norm descriptors, row-major `[count, dim]`.
 *
 * # Safety
 * `descriptors` must be null or hold `capacity` floats; `len` may be null.
 */
enum HykeyStatus hykey_features_descriptors(const struct HykeyFeatures *features,
                                            float *descriptors,
                                            size_t capacity,
                                            size_t *len);

/**
 * # Safety
 * `features` must come from this library and not be used afterwards. Null
 * is ignored.
 */
void hykey_features_free(struct HykeyFeatures *features);

/**
 * Mutual nearest-neighbour matches between two feature sets, sorted by
 * `index0`. `min_similarity` below -1 disables the similarity floor.
 *
 * # Safety
 * Handles must come from this library; `matches` must be null or hold
 * `capacity` elements; `len` may be null.
 */
enum HykeyStatus hykey_match(const struct HykeyFeatures *a,
                             const struct HykeyFeatures *b,
                             float min_similarity,
                             struct HykeyMatch *matches,
                             size_t capacity,
                             size_t *len);

/**
 * Robust homography mapping `points0` onto `points1` (interleaved `x, y`,
 * `count` points each). Writes the row-major 3x3 matrix to `h` and, if
 * `inliers` is non-null, one 0/1 flag per point.
 *
 * # Safety
 * `points0`/`points1` must hold `2 * count` doubles, `h` nine doubles and
 * `inliers` (if non-null) `count` bytes.
 */
enum HykeyStatus hykey_estimate_homography(const double *points0,
                                           const double *points1,
                                           size_t count,
                                           double threshold,
                                           uint64_t seed,
                                           double *h,
                                           uint8_t *inliers);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HYKEY_H */
