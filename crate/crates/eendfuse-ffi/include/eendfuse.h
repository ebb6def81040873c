#ifndef EENDFUSE_H
#define EENDFUSE_H

/* Generated by cbindgen from eendfuse-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Call outcome; 0 is success, anything else is an error whose text is
// available from `ef_last_error_message`.
typedef enum EfStatus {
  EF_STATUS_OK = 0,
  EF_STATUS_INVALID_ARGUMENT = 1,
  EF_STATUS_IO = 2,
  EF_STATUS_PARSE = 3,
  EF_STATUS_SHAPE_MISMATCH = 4,
  EF_STATUS_CHECKPOINT_MISMATCH = 5,
  EF_STATUS_NUMERIC = 6,
  EF_STATUS_NULL_POINTER = 7,
  EF_STATUS_PANIC = 8,
} EfStatus;

// VAD gating applied to the decoded hypothesis.
typedef enum EfVadMode {
  EF_VAD_NONE = 0,
  EF_VAD_ORACLE = 1,
  EF_VAD_ENERGY = 2,
} EfVadMode;

// Opaque per-frame speaker embedding matrix.
typedef struct EfEmbeddings EfEmbeddings;

// Opaque spliced/subsampled log-Mel feature matrix.
typedef struct EfFeatures EfFeatures;

// Opaque loaded model (weights + manifest).
typedef struct EfModel EfModel;

// Opaque diarization hypothesis.
typedef struct EfSegments EfSegments;

// DER components in seconds plus the rate itself.
typedef struct EfDerBreakdown {
  double der;
  double false_alarm_s;
  double missed_s;
  double confusion_s;
  double scored_speech_s;
} EfDerBreakdown;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static string; do not free.
const char *ef_version(void);

// Description of the most recent error on this thread; valid until the
// next library call on the same thread. Do not free.
const char *ef_last_error_message(void);

// Compute 345-dim acoustic features (one frame per 100 ms) from a mono
// 8 kHz 16-bit WAV file.
//
// # Safety
// `wav_path` must be a valid NUL-terminated string and `out` a valid
// pointer.
enum EfStatus ef_features_from_wav(const char *wav_path, struct EfFeatures **out);

// # Safety
// `features` must be a live handle (or null).
size_t ef_features_rows(const struct EfFeatures *features);

// # Safety
// `features` must be a live handle (or null).
size_t ef_features_cols(const struct EfFeatures *features);

// # Safety
// `features` must be a live handle (or null).
double ef_features_frame_shift(const struct EfFeatures *features);

// Copy the row-major matrix into `buffer` (`buffer_len` must be at least
// rows * cols).
//
// # Safety
// `buffer` must point to at least `buffer_len` writable floats.
enum EfStatus ef_features_copy_data(const struct EfFeatures *features,
                                    float *buffer,
                                    size_t buffer_len);

// # Safety
// `features` must come from this library and not be freed twice.
void ef_features_free(struct EfFeatures *features);

// Extract per-frame embeddings with the deterministic toy provider.
// `window_s` must be 1, 2 or 3 seconds.
//
// # Safety
// `wav_path` must be a valid NUL-terminated string and `out` a valid
// pointer.
enum EfStatus ef_embeddings_from_wav(const char *wav_path,
                                     double window_s,
                                     uint64_t toy_seed,
                                     struct EfEmbeddings **out);

// Load a `.emb` dump written by this library.
//
// # Safety
// `path` must be a valid NUL-terminated string and `out` a valid pointer.
enum EfStatus ef_embeddings_load(const char *path, struct EfEmbeddings **out);

// # Safety
// `embeddings` must be a live handle; `path` a valid string.
enum EfStatus ef_embeddings_save(const struct EfEmbeddings *embeddings, const char *path);

// # Safety
// `embeddings` must be a live handle (or null).
size_t ef_embeddings_rows(const struct EfEmbeddings *embeddings);

// # Safety
// `embeddings` must be a live handle (or null).
size_t ef_embeddings_cols(const struct EfEmbeddings *embeddings);

// # Safety
// `buffer` must point to at least `buffer_len` writable floats.
enum EfStatus ef_embeddings_copy_data(const struct EfEmbeddings *embeddings,
                                      float *buffer,
                                      size_t buffer_len);

// # Safety
// `embeddings` must come from this library and not be freed twice.
void ef_embeddings_free(struct EfEmbeddings *embeddings);

// Score a hypothesis RTTM against a reference RTTM with the given collar.
//
// # Safety
// Paths must be valid NUL-terminated strings; `out` a valid pointer.
enum EfStatus ef_score_rttm(const char *reference_rttm,
                            const char *hypothesis_rttm,
                            double collar_s,
                            struct EfDerBreakdown *out);

// Generate a simulated 2-speaker dataset (WAV + RTTM + manifest.tsv).
//
// # Safety
// `out_dir` must be a valid NUL-terminated string.
enum EfStatus ef_simulate_dataset(const char *out_dir,
                                  uint64_t count,
                                  double target_overlap,
                                  uint64_t seed);

// Load a checkpoint from its stem path (`<stem>.safetensors` +
// `<stem>.manifest`).
//
// # Safety
// `stem` must be a valid NUL-terminated string and `out` a valid pointer.
enum EfStatus ef_model_load(const char *stem, struct EfModel **out);

// Diarize one WAV file. `reference_rttm` may be null unless
// `vad == EF_VAD_ORACLE`; `num_speakers = 0` selects automatic attractor
// counting.
//
// # Safety
// Pointer arguments must be valid as documented above.
enum EfStatus ef_model_infer_wav(const struct EfModel *model,
                                 const char *wav_path,
                                 const char *recording_id,
                                 enum EfVadMode vad,
                                 const char *reference_rttm,
                                 size_t num_speakers,
                                 struct EfSegments **out);

// # Safety
// `model` must come from this library and not be freed twice.
void ef_model_free(struct EfModel *model);

// # Safety
// `segments` must be a live handle (or null).
size_t ef_segments_len(const struct EfSegments *segments);

// Speaker label of segment `index`; null when out of range. Borrowed from
// the handle.
//
// # Safety
// `segments` must be a live handle (or null).
const char *ef_segments_speaker(const struct EfSegments *segments, size_t index);

// Recording id of segment `index`; null when out of range.
//
// # Safety
// `segments` must be a live handle (or null).
const char *ef_segments_recording(const struct EfSegments *segments, size_t index);

// # Safety
// `segments` must be a live handle (or null).
double ef_segments_onset(const struct EfSegments *segments, size_t index);

// # Safety
// `segments` must be a live handle (or null).
double ef_segments_duration(const struct EfSegments *segments, size_t index);

// Write the hypothesis as an RTTM file.
//
// # Safety
// `segments` must be a live handle; `path` a valid string.
enum EfStatus ef_segments_write_rttm(const struct EfSegments *segments, const char *path);

// # Safety
// `segments` must come from this library and not be freed twice.
void ef_segments_free(struct EfSegments *segments);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EENDFUSE_H */
