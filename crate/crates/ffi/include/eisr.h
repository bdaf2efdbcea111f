#ifndef EISR_H
#define EISR_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum EisrStatus {
  EISR_STATUS_OK = 0,
  EISR_STATUS_NULL_POINTER = 1,
  EISR_STATUS_INVALID_ARGUMENT = 2,
  EISR_STATUS_IO = 3,
  EISR_STATUS_PARSE = 4,
  // Input violates a requirement, e.g. a mesh that is not watertight.
  EISR_STATUS_PRECONDITION = 5,
  // Optimization produced non-finite values.
  EISR_STATUS_DIVERGED = 6,
  EISR_STATUS_PANIC = 7,
} EisrStatus;

// Opaque charge set.
typedef struct EisrChargeSet EisrChargeSet;

// Opaque triangle mesh.
typedef struct EisrMesh EisrMesh;

// One charge in physical units.
typedef struct EisrCharge {
  double x;
  double y;
  double z;
  double q;
  double sigma;
} EisrCharge;

// Optimization settings; start from `eisr_fit_options_default`.
typedef struct EisrFitOptions {
  size_t num_charges;
  size_t steps;
  double lr_start;
  double lr_end;
  double lambda_cr;
  double tau;
  size_t surface_pool;
  size_t batch;
  size_t interior_pool;
  double init_q;
  double init_sigma_std;
  uint64_t seed;
  // Non-zero: sequential reductions, bitwise reproducible.
  int32_t deterministic;
} EisrFitOptions;

// Mesh comparison results. `iou` is NaN when it was skipped.
typedef struct EisrMetrics {
  double chamfer;
  double hausdorff;
  double f1;
  double precision;
  double recall;
  double normal_consistency;
  double iou;
} EisrMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *eisr_last_error(void);

// Library version as a static NUL-terminated string.
const char *eisr_version(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be freed twice.
void eisr_string_free(char *s);

// Builds a charge set from `n` charges.
//
// # Safety
// `charges` must point to `n` elements; `out` must be writable.
enum EisrStatus eisr_charge_set_new(const struct EisrCharge *charges,
                                    size_t n,
                                    double permittivity,
                                    double iso_value,
                                    struct EisrChargeSet **out);

// Parses a charge set from JSON text.
//
// # Safety
// `json` must be NUL-terminated; `out` must be writable.
enum EisrStatus eisr_charge_set_from_json(const char *json, struct EisrChargeSet **out);

// Serializes a charge set; release the result with `eisr_string_free`.
//
// # Safety
// `set` must be a live handle; `out` must be writable.
enum EisrStatus eisr_charge_set_to_json(const struct EisrChargeSet *set, char **out);

// Number of charges; 0 for a null handle.
//
// # Safety
// `set` must be null or a live handle.
size_t eisr_charge_set_len(const struct EisrChargeSet *set);

// Copies charge `index` in physical units.
//
// # Safety
// `set` must be a live handle; `out` must be writable.
enum EisrStatus eisr_charge_set_get(const struct EisrChargeSet *set,
                                    size_t index,
                                    struct EisrCharge *out);

// Iso-value of the set; NaN for a null handle.
//
// # Safety
// `set` must be null or a live handle.
double eisr_charge_set_iso_value(const struct EisrChargeSet *set);

// # Safety
// `set` must be null or a handle not yet freed.
void eisr_charge_set_free(struct EisrChargeSet *set);

// Potential at `n` points (`xyz` holds `3n` doubles) into `out[n]`.
//
// # Safety
// Buffers must hold the stated number of elements.
enum EisrStatus eisr_eval_potential(const struct EisrChargeSet *set,
                                    const double *xyz,
                                    size_t n,
                                    double *out);

// Spatial gradient at `n` points into `out[3n]`.
//
// # Safety
// Buffers must hold the stated number of elements.
enum EisrStatus eisr_eval_gradient(const struct EisrChargeSet *set,
                                   const double *xyz,
                                   size_t n,
                                   double *out);

// Builds a mesh from `3 * num_vertices` coordinates and `3 * num_faces`
// zero-based indices.
//
// # Safety
// Buffers must hold the stated number of elements; `out` must be writable.
enum EisrStatus eisr_mesh_new(const double *vertices,
                              size_t num_vertices,
                              const uint32_t *faces,
                              size_t num_faces,
                              struct EisrMesh **out);

// Loads an OBJ or PLY file.
//
// # Safety
// `path` must be NUL-terminated; `out` must be writable.
enum EisrStatus eisr_mesh_load(const char *path, struct EisrMesh **out);

// Writes a mesh as OBJ.
//
// # Safety
// `mesh` must be a live handle; `path` must be NUL-terminated.
enum EisrStatus eisr_mesh_save_obj(const struct EisrMesh *mesh, const char *path);

// Vertex count; 0 for a null handle.
//
// # Safety
// `mesh` must be null or a live handle.
size_t eisr_mesh_vertex_count(const struct EisrMesh *mesh);

// Face count; 0 for a null handle.
//
// # Safety
// `mesh` must be null or a live handle.
size_t eisr_mesh_face_count(const struct EisrMesh *mesh);

// Copies vertices into `out[3 * vertex_count]`.
//
// # Safety
// `out` must hold `3 * eisr_mesh_vertex_count(mesh)` doubles.
enum EisrStatus eisr_mesh_vertices(const struct EisrMesh *mesh, double *out);

// Copies zero-based face indices into `out[3 * face_count]`.
//
// # Safety
// `out` must hold `3 * eisr_mesh_face_count(mesh)` integers.
enum EisrStatus eisr_mesh_faces(const struct EisrMesh *mesh, uint32_t *out);

// 1 if every edge is shared by exactly two faces, else 0.
//
// # Safety
// `mesh` must be null or a live handle.
int32_t eisr_mesh_is_watertight(const struct EisrMesh *mesh);

// # Safety
// `mesh` must be null or a handle not yet freed.
void eisr_mesh_free(struct EisrMesh *mesh);

// Marching cubes on a `resolution`^3 grid over `[-half_extent, half_extent]^3`.
// `tau` NaN uses the set's iso-value. An iso-value outside the sampled
// range yields an empty mesh, not an error.
//
// # Safety
// `set` must be a live handle; `out` must be writable.
enum EisrStatus eisr_extract(const struct EisrChargeSet *set,
                             double tau,
                             double half_extent,
                             size_t resolution,
                             struct EisrMesh **out);

// Fills `out` with the library defaults.
//
// # Safety
// `out` must be writable.
enum EisrStatus eisr_fit_options_default(struct EisrFitOptions *out);

// Fits charges to a watertight mesh, taken as given (no normalization).
// `final_bc` may be null; otherwise it receives the final boundary loss.
//
// # Safety
// Pointers must be live handles or writable as documented.
enum EisrStatus eisr_fit(const struct EisrMesh *target,
                         const struct EisrFitOptions *options,
                         struct EisrChargeSet **out,
                         double *final_bc);

// Compares two meshes. `iou_resolution` 0 skips IoU (reported as NaN).
//
// # Safety
// Meshes must be live handles; `out` must be writable.
enum EisrStatus eisr_metrics(const struct EisrMesh *pred,
                             const struct EisrMesh *gt,
                             size_t points,
                             size_t iou_resolution,
                             uint64_t seed,
                             struct EisrMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EISR_H */
