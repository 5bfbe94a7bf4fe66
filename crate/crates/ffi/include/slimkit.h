#ifndef SLIMKIT_H
#define SLIMKIT_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SlimkitAction {
  SLIMKIT_ACTION_NONE = 0,
  SLIMKIT_ACTION_PLAY = 1,
  SLIMKIT_ACTION_PAUSE = 2,
  SLIMKIT_ACTION_NEXT_TRACK = 3,
  SLIMKIT_ACTION_PREV_TRACK = 4,
  SLIMKIT_ACTION_VOLUME_UP = 5,
  SLIMKIT_ACTION_VOLUME_DOWN = 6,
} SlimkitAction;

typedef enum SlimkitStatus {
  SLIMKIT_STATUS_OK = 0,
  SLIMKIT_STATUS_NULL_POINTER = 1,
  SLIMKIT_STATUS_INVALID_ARGUMENT = 2,
  SLIMKIT_STATUS_IO = 3,
  SLIMKIT_STATUS_PARSE = 4,
  SLIMKIT_STATUS_VALIDATION = 5,
  SLIMKIT_STATUS_SHAPE = 6,
  SLIMKIT_STATUS_UNPRUNABLE = 7,
  SLIMKIT_STATUS_SURGERY = 8,
  SLIMKIT_STATUS_STREAM = 9,
  SLIMKIT_STATUS_CONFIG = 10,
  SLIMKIT_STATUS_INTERNAL = 11,
} SlimkitStatus;

/**
 * Opaque controller handle.
 */
typedef struct SlimkitController SlimkitController;

/**
 * Opaque graph handle.
 */
typedef struct SlimkitGraph SlimkitGraph;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until
 * the next call on this thread.
 */
const char *slimkit_last_error_message(void);

/**
 * Static, NUL-terminated version string.
 */
const char *slimkit_version(void);

/**
 * Load and validate a graph file.
 */
enum SlimkitStatus slimkit_graph_load(const char *path, struct SlimkitGraph **out);

void slimkit_graph_free(struct SlimkitGraph *graph);

enum SlimkitStatus slimkit_graph_validate(const struct SlimkitGraph *graph);

/**
 * Total parameter count (running statistics included).
 */
enum SlimkitStatus slimkit_graph_param_count(const struct SlimkitGraph *graph, uint64_t *out);

/**
 * Forward FLOPs at the graph's declared input shape.
 */
enum SlimkitStatus slimkit_graph_flops(const struct SlimkitGraph *graph, uint64_t *out);

/**
 * Prune at `rate` into a new handle; the source handle is untouched.
 */
enum SlimkitStatus slimkit_graph_prune(const struct SlimkitGraph *graph,
                                       double rate,
                                       struct SlimkitGraph **out);

/**
 * Write the graph atomically.
 */
enum SlimkitStatus slimkit_graph_save(const struct SlimkitGraph *graph, const char *path);

/**
 * IoU of two `[x1, y1, x2, y2]` boxes; NaN if either pointer is null.
 */
double slimkit_iou(const double *a, const double *b);

/**
 * Harmonic mean of precision and recall (0 when both are 0).
 */
double slimkit_f_score(double precision, double recall);

/**
 * Controller with the default gesture bindings.
 */
enum SlimkitStatus slimkit_controller_new(struct SlimkitController **out);

void slimkit_controller_free(struct SlimkitController *ctrl);

/**
 * Feed one gesture event; `*action` receives the action to perform.
 */
enum SlimkitStatus slimkit_controller_step(struct SlimkitController *ctrl,
                                           uint64_t t_ms,
                                           const char *label,
                                           double confidence,
                                           enum SlimkitAction *action);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SLIMKIT_H */
