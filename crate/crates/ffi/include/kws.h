#ifndef KWS_H
#define KWS_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KwsStatus {
  KWS_STATUS_OK = 0,
  KWS_STATUS_NULL_ARGUMENT = 1,
  KWS_STATUS_INVALID_UTF8 = 2,
  KWS_STATUS_IO = 3,
  KWS_STATUS_CONFIG = 4,
  KWS_STATUS_INVALID_STREAM = 5,
  KWS_STATUS_DECODE = 6,
  KWS_STATUS_OUT_OF_RANGE = 7,
  KWS_STATUS_PANIC = 99,
} KwsStatus;

/**
 * Detections from one run. Keyword strings live as long as the handle.
 */
typedef struct KwsDetections KwsDetections;

/**
 * A loaded engine: inventory, compiled graph and pipeline settings.
 */
typedef struct KwsEngine KwsEngine;

/**
 * One detection. Absent scores are NaN; absent frames are -1.
 */
typedef struct KwsDetection {
  const char *keyword;
  int64_t t0_frame;
  int64_t t_r_frame;
  int64_t t_end_frame;
  double t0_s;
  double t_r_s;
  double t_end_s;
  double detect_cost;
  double s1;
  double s2;
  uint8_t final_stage_passed;
  bool accepted;
} KwsDetection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a TOML run configuration and builds an engine.
 *
 * # Safety
 * `config_path` must be a nul-terminated string and `out` a writable pointer.
 */
enum KwsStatus kws_engine_new_from_config(const char *config_path, struct KwsEngine **out);

/**
 * # Safety
 * `engine` must come from [`kws_engine_new_from_config`] or be null.
 */
void kws_engine_free(struct KwsEngine *engine);

/**
 * Number of units each posterior frame must carry.
 *
 * # Safety
 * `engine` must be a live handle and `out` a writable pointer.
 */
enum KwsStatus kws_engine_num_units(const struct KwsEngine *engine, size_t *out);

/**
 * Runs the cascade over a pair of posterior files.
 *
 * # Safety
 * `engine` must be a live handle, the paths nul-terminated strings and
 * `out` a writable pointer. The result must be released with
 * [`kws_detections_free`].
 */
enum KwsStatus kws_engine_run_files(const struct KwsEngine *engine,
                                    const char *det_path,
                                    const char *ali_path,
                                    struct KwsDetections **out);

/**
 * Runs the cascade over row-major `frames x num_units` buffers.
 *
 * # Safety
 * `engine` must be a live handle, each buffer must hold
 * `frames * num_units` floats and `out` must be writable.
 */
enum KwsStatus kws_engine_run_buffers(const struct KwsEngine *engine,
                                      const float *det,
                                      size_t det_frames,
                                      const float *ali,
                                      size_t ali_frames,
                                      size_t num_units,
                                      float frame_duration,
                                      struct KwsDetections **out);

/**
 * # Safety
 * `detections` must be a live handle.
 */
size_t kws_detections_len(const struct KwsDetections *detections);

/**
 * Copies detection `index` into `out`. The keyword pointer stays valid
 * until the handle is freed.
 *
 * # Safety
 * `detections` must be a live handle and `out` writable.
 */
enum KwsStatus kws_detections_get(const struct KwsDetections *detections,
                                  size_t index,
                                  struct KwsDetection *out);

/**
 * # Safety
 * `detections` must come from a run function or be null.
 */
void kws_detections_free(struct KwsDetections *detections);

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *kws_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KWS_H */
