#ifndef TERRASEG_H
#define TERRASEG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every `ts_*` call.
typedef enum TsStatus {
  TS_STATUS_OK = 0,
  // A required pointer argument was null.
  TS_STATUS_NULL_ARGUMENT = 1,
  // Input content or parameters were rejected.
  TS_STATUS_INVALID = 2,
  // Filesystem failure.
  TS_STATUS_IO = 3,
  // A bug inside the library; the handle involved should be discarded.
  TS_STATUS_PANIC = 4,
} TsStatus;

// Opaque streaming confusion accumulator bound to a schema.
typedef struct TsAccumulator TsAccumulator;

// Opaque class schema.
typedef struct TsSchema TsSchema;

// Owned byte buffer returned by the library.
typedef struct TsBuffer {
  uint8_t *data;
  uintptr_t len;
} TsBuffer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Last error on this thread as JSON, or null when none was recorded.
// The pointer stays valid until the next failing call on the same thread.
const char *ts_last_error(void);

// Library version as a static NUL-terminated string.
const char *ts_version(void);

// Releases a buffer returned by the library. Null buffers are ignored.
//
// # Safety
// `buffer` must come from this library and not have been freed.
void ts_buffer_free(struct TsBuffer buffer);

// Built-in ten-class terrain schema.
//
// # Safety
// `out_schema` must be a valid pointer.
enum TsStatus ts_schema_default(struct TsSchema **out_schema);

// Parses a schema from NUL-terminated JSON.
//
// # Safety
// `json` must be a NUL-terminated string; `out_schema` a valid pointer.
enum TsStatus ts_schema_from_json(const char *json, struct TsSchema **out_schema);

// Number of classes, or 0 for a null handle.
//
// # Safety
// `schema` must be null or a live handle.
uintptr_t ts_schema_len(const struct TsSchema *schema);

// # Safety
// `schema` must be null or a live handle, not used afterwards.
void ts_schema_free(struct TsSchema *schema);

// Empty accumulator sized for `schema`; the schema is copied.
//
// # Safety
// `schema` must be a live handle; `out_acc` a valid pointer.
enum TsStatus ts_accumulator_new(const struct TsSchema *schema, struct TsAccumulator **out_acc);

// Adds one ground-truth/prediction pair of label PNGs.
//
// # Safety
// `acc` must be a live handle and each pointer/length pair a readable range.
enum TsStatus ts_accumulator_add_png(struct TsAccumulator *acc,
                                     const uint8_t *gt_png,
                                     uintptr_t gt_len,
                                     const uint8_t *pred_png,
                                     uintptr_t pred_len);

// Folds `src` into `dst`; both must share a class count.
//
// # Safety
// Both handles must be live and distinct.
enum TsStatus ts_accumulator_merge(struct TsAccumulator *dst, const struct TsAccumulator *src);

// Pixels counted so far, or 0 for a null handle.
//
// # Safety
// `acc` must be null or a live handle.
uint64_t ts_accumulator_pixels(const struct TsAccumulator *acc);

// Metrics report as canonical JSON. `exclude_json` is an optional list of
// class-name lists; null selects the default exclusion sets.
//
// # Safety
// `acc` must be a live handle, `exclude_json` null or NUL-terminated, and
// `out_json` a valid pointer.
enum TsStatus ts_accumulator_report_json(const struct TsAccumulator *acc,
                                         const char *exclude_json,
                                         uintptr_t top_k,
                                         struct TsBuffer *out_json);

// # Safety
// `acc` must be null or a live handle, not used afterwards.
void ts_accumulator_free(struct TsAccumulator *acc);

// Combined loss breakdown for a TST1 logit tensor and a label PNG.
// `config_json` may be null for the default weighting.
//
// # Safety
// `schema` must be live, byte ranges readable, `config_json` null or
// NUL-terminated, and `out_json` valid.
enum TsStatus ts_loss_json(const struct TsSchema *schema,
                           const uint8_t *logits,
                           uintptr_t logits_len,
                           const uint8_t *mask_png,
                           uintptr_t mask_len,
                           const char *config_json,
                           struct TsBuffer *out_json);

// Uncertainty report JSON plus an entropy heatmap PNG for a TST1
// probability tensor. Either output pointer may be null to skip it.
//
// # Safety
// Byte range readable, `params_json` null or NUL-terminated, outputs null
// or valid.
enum TsStatus ts_uncertainty(const uint8_t *probs,
                             uintptr_t probs_len,
                             const char *params_json,
                             struct TsBuffer *out_json,
                             struct TsBuffer *out_png);

// Dense-CRF refinement of a TST1 probability tensor against an RGB PNG;
// writes the refined TST1 tensor.
//
// # Safety
// Byte ranges readable, `params_json` null or NUL-terminated, `out_tensor`
// valid.
enum TsStatus ts_crf(const uint8_t *probs,
                     uintptr_t probs_len,
                     const uint8_t *image_png,
                     uintptr_t image_len,
                     const char *params_json,
                     struct TsBuffer *out_tensor);

// Traversability costmap PNG and sidecar JSON for a label PNG.
//
// # Safety
// `schema` live, byte range readable, `params_json` null or
// NUL-terminated, outputs null or valid.
enum TsStatus ts_costmap(const struct TsSchema *schema,
                         const uint8_t *mask_png,
                         uintptr_t mask_len,
                         const char *params_json,
                         struct TsBuffer *out_png,
                         struct TsBuffer *out_sidecar);

// Least-cost path over a costmap PNG. `request_json` carries `start`,
// `goal` and optionally `clearance` and `costs`.
//
// # Safety
// Byte range readable, `request_json` NUL-terminated, `out_json` valid.
enum TsStatus ts_plan_json(const uint8_t *costmap_png,
                           uintptr_t costmap_len,
                           const char *request_json,
                           struct TsBuffer *out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TERRASEG_H */
