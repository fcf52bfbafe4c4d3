/* Generated by cbindgen; do not edit. */

#ifndef CSED_H
#define CSED_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CsedStatus {
  CSED_STATUS_OK = 0,
  CSED_STATUS_NULL_POINTER = 1,
  CSED_STATUS_INVALID_ARGUMENT = 2,
  CSED_STATUS_IO = 3,
  CSED_STATUS_FORMAT = 4,
  CSED_STATUS_SHAPE = 5,
  CSED_STATUS_NUMERICAL = 6,
  CSED_STATUS_PANIC = 7,
} CsedStatus;

typedef enum CsedThresholdMode {
  CSED_THRESHOLD_MODE_FIXED = 0,
  CSED_THRESHOLD_MODE_ADAPTIVE = 1,
} CsedThresholdMode;

// Opaque co-occurrence graph.
typedef struct CsedGraph CsedGraph;

// Opaque trained model.
typedef struct CsedModel CsedModel;

typedef struct CsedThresholdConfig {
  enum CsedThresholdMode mode;
  double fixed_theta;
  double adaptive_low;
  double adaptive_ratio;
  size_t min_event_frames;
  size_t smoothing_window;
} CsedThresholdConfig;

// Segment counts summed over classes. `error_rate` is NaN when the
// reference has no active events.
typedef struct CsedScores {
  uint64_t tp;
  uint64_t fp;
  uint64_t fn_;
  uint64_t substitutions;
  uint64_t deletions;
  uint64_t insertions;
  uint64_t n_ref;
  double precision;
  double recall;
  double f1;
  double error_rate;
} CsedScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or NULL. Valid until
// the next call into this library on the same thread.
const char *csed_last_error(void);

// Library version as a static NUL-terminated string.
const char *csed_version(void);

// Read a graph written by `csed build-graph`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum CsedStatus csed_graph_load(const char *path, struct CsedGraph **out);

// Build a graph from an `n_events x n_events` adjacency matrix.
//
// # Safety
// `adjacency` must hold `n_events * n_events` doubles and `out` be writable.
enum CsedStatus csed_graph_from_adjacency(const double *adjacency,
                                          size_t n_events,
                                          struct CsedGraph **out);

// Number of event classes, or 0 for a null handle.
//
// # Safety
// `graph` must be null or a live handle.
size_t csed_graph_n_events(const struct CsedGraph *graph);

// Copy the Laplacian into `out` (`n_events * n_events` doubles).
//
// # Safety
// `graph` must be a live handle and `out` hold `len` doubles.
enum CsedStatus csed_graph_laplacian(const struct CsedGraph *graph, double *out, size_t len);

// Quadratic form `v' L v` for one activity vector.
//
// # Safety
// `graph` must be a live handle, `v` hold `len` doubles, `out` be writable.
enum CsedStatus csed_graph_penalty(const struct CsedGraph *graph,
                                   const double *v,
                                   size_t len,
                                   double *out);

// # Safety
// `graph` must be null or a handle not yet freed.
void csed_graph_free(struct CsedGraph *graph);

// Load a checkpoint written by `csed train`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum CsedStatus csed_model_load(const char *path, struct CsedModel **out);

// # Safety
// `model` must be null or a live handle.
size_t csed_model_n_features(const struct CsedModel *model);

// # Safety
// `model` must be null or a live handle.
size_t csed_model_n_events(const struct CsedModel *model);

// Event posteriors for a clip of log mel features.
//
// # Safety
// `model` must be a live handle, `features` hold `n_features * frames`
// doubles and `out` hold `out_len` doubles.
enum CsedStatus csed_model_predict(const struct CsedModel *model,
                                   const double *features,
                                   size_t n_features,
                                   size_t frames,
                                   double *out,
                                   size_t out_len);

// # Safety
// `model` must be null or a handle not yet freed.
void csed_model_free(struct CsedModel *model);

// Fixed threshold 0.5 with no smoothing.
struct CsedThresholdConfig csed_threshold_config_default(void);

// Binarize `n_events x frames` posteriors into `roll` (0 or 1 per cell).
//
// # Safety
// `posteriors` and `roll` must each hold `n_events * frames` elements and
// `cfg` point to a valid config.
enum CsedStatus csed_threshold(const double *posteriors,
                               size_t n_events,
                               size_t frames,
                               const struct CsedThresholdConfig *cfg,
                               uint8_t *roll);

// Segment-based counts and scores of a predicted roll against a reference.
//
// # Safety
// `pred` and `reference` must each hold `n_events * frames` bytes and `out`
// be writable.
enum CsedStatus csed_segment_scores(const uint8_t *pred,
                                    const uint8_t *reference,
                                    size_t n_events,
                                    size_t frames,
                                    uint32_t hop_ms,
                                    uint32_t segment_ms,
                                    struct CsedScores *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CSED_H */
