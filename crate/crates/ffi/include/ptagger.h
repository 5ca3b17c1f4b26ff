#ifndef PTAGGER_H
#define PTAGGER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PtStatus {
  PT_STATUS_OK = 0,
  /**
   * Bad configuration or policy.
   */
  PT_STATUS_CONFIG = 1,
  /**
   * Malformed or inconsistent input data.
   */
  PT_STATUS_DATA = 2,
  /**
   * Scorer file or sidecar failure.
   */
  PT_STATUS_BACKEND = 3,
  /**
   * A null pointer or non-UTF-8 string was passed in.
   */
  PT_STATUS_INVALID_ARGUMENT = 4,
  /**
   * The library panicked; the call had no effect.
   */
  PT_STATUS_PANIC = 5,
} PtStatus;

/**
 * Opaque compiler policy.
 */
typedef struct PtPolicy PtPolicy;

/**
 * Opaque scorer: a reference model file or a connected sidecar.
 */
typedef struct PtScorer PtScorer;

/**
 * Opaque label vocabulary.
 */
typedef struct PtVocabulary PtVocabulary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Free with [`pt_string_free`].
 */
char *pt_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void pt_string_free(char *s);

/**
 * Library version as a static string; do not free.
 */
const char *pt_version(void);

/**
 * Cleans one title or abstract with the built-in symbol map.
 *
 * # Safety
 * `raw` must be a nul-terminated string; `out` must be writable.
 */
enum PtStatus pt_normalize_text(const char *raw, char **out);

/**
 * Parses a vocabulary file's JSON text.
 *
 * # Safety
 * `json` must be a nul-terminated string; `out` must be writable.
 */
enum PtStatus pt_vocabulary_from_json(const char *json, struct PtVocabulary **out);

/**
 * # Safety
 * `v` must come from [`pt_vocabulary_from_json`] or be null.
 */
void pt_vocabulary_free(struct PtVocabulary *v);

/**
 * Number of labels in the vocabulary; 0 for null.
 *
 * # Safety
 * `v` must be a live vocabulary handle or null.
 */
size_t pt_vocabulary_len(const struct PtVocabulary *v);

/**
 * Parses and validates a compiler policy against `vocab`.
 *
 * # Safety
 * `json` must be a nul-terminated string, `vocab` a live handle, `out` writable.
 */
enum PtStatus pt_policy_from_json(const char *json,
                                  const struct PtVocabulary *vocab,
                                  struct PtPolicy **out);

/**
 * # Safety
 * `p` must come from [`pt_policy_from_json`] or be null.
 */
void pt_policy_free(struct PtPolicy *p);

/**
 * Loads a reference scorer file.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum PtStatus pt_scorer_load(const char *path, struct PtScorer **out);

/**
 * Connects to a sidecar at `tcp:host:port`, or starts one with `exec:program args`.
 *
 * # Safety
 * `address` must be a nul-terminated string; `out` must be writable.
 */
enum PtStatus pt_scorer_connect(const char *address, struct PtScorer **out);

/**
 * The scorer's descriptor as JSON.
 *
 * # Safety
 * `scorer` must be a live handle; `out` must be writable.
 */
enum PtStatus pt_scorer_descriptor_json(const struct PtScorer *scorer, char **out);

/**
 * # Safety
 * `s` must come from a `pt_scorer_*` constructor or be null.
 */
void pt_scorer_free(struct PtScorer *s);

/**
 * Normalizes, assembles and scores one citation record (JSON). Writes
 * `{"citation_id":..,"scores":{..}}`.
 *
 * # Safety
 * `scorer` must be a live handle, `citation_json` a nul-terminated string, `out` writable.
 */
enum PtStatus pt_score_json(const struct PtScorer *scorer,
                            const char *citation_json,
                            size_t token_budget,
                            char **out);

/**
 * Compiles a score vector (JSON, as written by [`pt_score_json`]) into a tag list
 * `{"id":..,"tags":[..],"provenance":[..]}`. The reliability filter is not applied
 * because no validation metrics travel with bare scores.
 *
 * # Safety
 * Handles must be live, `scores_json` a nul-terminated string, `out` writable.
 */
enum PtStatus pt_compile_json(const struct PtPolicy *policy,
                              const struct PtVocabulary *vocab,
                              const char *scores_json,
                              char **out);

/**
 * Full pipeline for one citation record: normalize, assemble, score, compile.
 *
 * # Safety
 * Handles must be live, `citation_json` a nul-terminated string, `out` writable.
 */
enum PtStatus pt_tag_json(const struct PtScorer *scorer,
                          const struct PtPolicy *policy,
                          const struct PtVocabulary *vocab,
                          const char *citation_json,
                          size_t token_budget,
                          char **out);

/**
 * Area under the ROC curve; `gold[i]` non-zero marks a positive.
 *
 * # Safety
 * `scores` and `gold` must point to `n` readable elements; `out` must be writable.
 */
enum PtStatus pt_auc_roc(const double *scores, const uint8_t *gold, size_t n, double *out);

/**
 * Average precision (step-wise area under the precision/recall curve).
 *
 * # Safety
 * `scores` and `gold` must point to `n` readable elements; `out` must be writable.
 */
enum PtStatus pt_auc_pr(const double *scores, const uint8_t *gold, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PTAGGER_H */
