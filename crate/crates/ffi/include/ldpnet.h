#ifndef LDPNET_H
#define LDPNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Number of values written by [`ldp_metrics_reduced`]: SAM, SCC, ERGAS, Q4.
 */
#define LDP_REDUCED_METRICS 4

/*
 Number of values written by [`ldp_metrics_full`]: D_lambda, D_S, QNR.
 */
#define LDP_FULL_METRICS 3

typedef enum LdpMethod {
  LDP_METHOD_IHS = 0,
  LDP_METHOD_BROVEY = 1,
  LDP_METHOD_PCA = 2,
} LdpMethod;

typedef enum LdpRange {
  LDP_RANGE_RAW = 0,
  LDP_RANGE_UNIT = 1,
  LDP_RANGE_SIGNED = 2,
} LdpRange;

/*
 Result code of every fallible call.
 */
typedef enum LdpStatus {
  LDP_STATUS_OK = 0,
  LDP_STATUS_NULL_POINTER = 1,
  LDP_STATUS_IO = 2,
  LDP_STATUS_FORMAT = 3,
  LDP_STATUS_SHAPE = 4,
  LDP_STATUS_INVALID_ARGUMENT = 5,
  LDP_STATUS_RANGE = 6,
  LDP_STATUS_NON_FINITE = 7,
  LDP_STATUS_CHECKPOINT = 8,
  LDP_STATUS_MANIFEST = 9,
  LDP_STATUS_PROTOCOL = 10,
  LDP_STATUS_INTERNAL = 11,
} LdpStatus;

/*
 Trained fusion network loaded from a checkpoint.
 */
typedef struct LdpModel LdpModel;

/*
 Band-sequential float raster.
 */
typedef struct LdpRaster LdpRaster;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Toolkit version as a static NUL-terminated string.
 */
const char *ldp_version(void);

/*
 Message of the last failed call on this thread, or null. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *ldp_last_error_message(void);

void ldp_clear_error(void);

/*
 Copies `bands * width * height` floats from `data` into a new raster.

 # Safety
 `data` must point to that many readable floats; `out` must be writable.
 */
enum LdpStatus ldp_raster_new(size_t bands,
                              size_t width,
                              size_t height,
                              const float *data,
                              enum LdpRange range,
                              struct LdpRaster **out);

/*
 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum LdpStatus ldp_raster_load(const char *path, struct LdpRaster **out);

/*
 # Safety
 `raster` must come from this library; `path` must be NUL-terminated.
 */
enum LdpStatus ldp_raster_save(const struct LdpRaster *raster, const char *path);

/*
 # Safety
 `raster` must come from this library and not be used afterwards.
 */
void ldp_raster_free(struct LdpRaster *raster);

/*
 # Safety
 `raster` must be null or come from this library.
 */
size_t ldp_raster_bands(const struct LdpRaster *raster);

/*
 # Safety
 `raster` must be null or come from this library.
 */
size_t ldp_raster_width(const struct LdpRaster *raster);

/*
 # Safety
 `raster` must be null or come from this library.
 */
size_t ldp_raster_height(const struct LdpRaster *raster);

/*
 # Safety
 `raster` must be null or come from this library.
 */
enum LdpRange ldp_raster_range(const struct LdpRaster *raster);

/*
 Borrowed view of the band-sequential samples, valid while the raster
 lives. Null for a null raster.

 # Safety
 `raster` must be null or come from this library.
 */
const float *ldp_raster_data(const struct LdpRaster *raster);

/*
 Classic component-substitution fusion of a unit-range LRMS and PAN.

 # Safety
 `ms` and `pan` must come from this library; `out` must be writable.
 */
enum LdpStatus ldp_baseline_fuse(enum LdpMethod method,
                                 const struct LdpRaster *ms,
                                 const struct LdpRaster *pan,
                                 size_t ratio,
                                 struct LdpRaster **out);

/*
 # Safety
 `path` must be NUL-terminated; `out` must be writable.
 */
enum LdpStatus ldp_model_load(const char *path, struct LdpModel **out);

/*
 # Safety
 `model` must come from this library and not be used afterwards.
 */
void ldp_model_free(struct LdpModel *model);

/*
 # Safety
 `model` must be null or come from this library.
 */
size_t ldp_model_bands(const struct LdpModel *model);

/*
 # Safety
 `model` must be null or come from this library.
 */
size_t ldp_model_ratio(const struct LdpModel *model);

/*
 Fuses a unit-range LRMS/PAN pair with a trained model. A model may be
 shared across threads for concurrent calls.

 # Safety
 All pointers must come from this library; `out` must be writable.
 */
enum LdpStatus ldp_model_pansharpen(const struct LdpModel *model,
                                    const struct LdpRaster *ms,
                                    const struct LdpRaster *pan,
                                    struct LdpRaster **out);

/*
 Writes SAM, SCC, ERGAS and Q4 of `fused` against `reference` into `out`.

 # Safety
 Rasters must come from this library; `out` must hold
 [`LDP_REDUCED_METRICS`] doubles.
 */
enum LdpStatus ldp_metrics_reduced(const struct LdpRaster *fused,
                                   const struct LdpRaster *reference,
                                   size_t ratio,
                                   size_t window,
                                   double *out);

/*
 Writes D_lambda, D_S and QNR of `fused` into `out`.

 # Safety
 Rasters must come from this library; `out` must hold
 [`LDP_FULL_METRICS`] doubles.
 */
enum LdpStatus ldp_metrics_full(const struct LdpRaster *fused,
                                const struct LdpRaster *lrms,
                                const struct LdpRaster *pan,
                                size_t ratio,
                                size_t window,
                                double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LDPNET_H */
