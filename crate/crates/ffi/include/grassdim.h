#ifndef GRASSDIM_H
#define GRASSDIM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum {
  GD_STATUS_OK = 0,
  GD_STATUS_NULL_POINTER = 1,
  GD_STATUS_INVALID_ARGUMENT = 2,
  GD_STATUS_DIMENSION_MISMATCH = 3,
  GD_STATUS_DEGENERATE_PAIR = 4,
  GD_STATUS_RESOLUTION = 5,
  GD_STATUS_SATURATION = 6,
  GD_STATUS_INSUFFICIENT_RANGE = 7,
  GD_STATUS_SIZE_LIMIT = 8,
  GD_STATUS_PRECONDITION = 9,
  GD_STATUS_EMPTY_SET = 10,
  GD_STATUS_CONFIG = 11,
  GD_STATUS_FORMAT = 12,
  GD_STATUS_IO = 13,
  GD_STATUS_PANIC = 99,
} GdStatus;

// Weighted point cloud.
typedef struct GdCloud GdCloud;

// Serialized experiment report.
typedef struct GdReport GdReport;

// Point of a Grassmannian.
typedef struct GdSubspace GdSubspace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread; empty after a success. Valid until the next call.
const char *gd_last_error(void);

// Library version as a static string.
const char *gd_version(void);

// Builds a cloud from `count` row-major points in `dim` coordinates. `weights` may be null
// for unit weights.
//
// # Safety
// `coords` must hold `dim * count` doubles and `weights`, when non-null, `count` doubles.
GdStatus gd_cloud_new(uintptr_t dim,
                      const double *coords,
                      const double *weights,
                      uintptr_t count,
                      GdCloud **out);

// Generates a corpus cloud by key; `depth` 0 selects the default depth.
//
// # Safety
// `key` must be a NUL-terminated string.
GdStatus gd_cloud_generate(const char *key, uint32_t depth, GdCloud **out);

// Reads a CSV or binary cloud file.
//
// # Safety
// `path` must be a NUL-terminated string.
GdStatus gd_cloud_read(const char *path, GdCloud **out);

// Ambient dimension, or 0 for a null handle.
//
// # Safety
// `cloud` must be null or a live handle.
uintptr_t gd_cloud_dim(const GdCloud *cloud);

// Number of points, or 0 for a null handle.
//
// # Safety
// `cloud` must be null or a live handle.
uintptr_t gd_cloud_len(const GdCloud *cloud);

// Copies the coordinates (row-major) into `buf`, which must hold `dim * len` doubles.
//
// # Safety
// `buf` must be writable for `capacity` doubles.
GdStatus gd_cloud_coords(const GdCloud *cloud, double *buf, uintptr_t capacity);

// # Safety
// `cloud` must be null or a handle not freed before.
void gd_cloud_free(GdCloud *cloud);

// Uniform sample of G(n, m) from stream `index` of `seed`.
//
// # Safety
// `out` must be writable.
GdStatus gd_subspace_sample(uintptr_t n,
                            uintptr_t m,
                            uint64_t seed,
                            uint64_t index,
                            GdSubspace **out);

// Subspace spanned by the `m` rows of a row-major frame (`m * n` doubles), orthonormalised.
//
// # Safety
// `frame` must hold `m * n` doubles.
GdStatus gd_subspace_from_frame(uintptr_t n, uintptr_t m, const double *frame, GdSubspace **out);

// Distance between the orthogonal projections.
//
// # Safety
// Both handles must be live; `out` writable.
GdStatus gd_subspace_distance(const GdSubspace *v, const GdSubspace *w, double *out);

// # Safety
// `v` must be null or a handle not freed before.
void gd_subspace_free(GdSubspace *v);

// Pushforward of `cloud` under the projection onto `v`, in frame coordinates.
//
// # Safety
// Handles must be live; `out` writable.
GdStatus gd_project(const GdCloud *cloud, const GdSubspace *v, GdCloud **out);

// Box-counting estimate over dyadic levels `j_min..=j_max`.
//
// # Safety
// `cloud` must be live; `out` writable.
GdStatus gd_boxdim(const GdCloud *cloud, uint32_t j_min, uint32_t j_max, double *out);

// Energy-slope estimate on the grid `s_step, 2 s_step, … < dim`.
//
// # Safety
// `cloud` must be live; `out` writable.
GdStatus gd_energy_dim(const GdCloud *cloud, double s_step, double *out);

// Riesz s-energy over distinct pairs.
//
// # Safety
// `cloud` must be live; `out` writable.
GdStatus gd_riesz_energy(const GdCloud *cloud, double s, double *out);

// Runs an experiment from TOML text; `threads` 0 uses the default pool.
//
// # Safety
// `config_toml` must be a NUL-terminated string; `out` writable.
GdStatus gd_experiment_run(const char *config_toml, uintptr_t threads, GdReport **out);

// JSON text of a report, owned by the handle.
//
// # Safety
// `report` must be null or a live handle.
const char *gd_report_json(const GdReport *report);

// # Safety
// `report` must be null or a handle not freed before.
void gd_report_free(GdReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRASSDIM_H */
