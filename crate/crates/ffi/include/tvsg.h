#ifndef TVSG_H
#define TVSG_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TvsgStatus {
  TVSG_STATUS_OK = 0,
  TVSG_STATUS_NULL_POINTER = 1,
  TVSG_STATUS_INVALID_UTF8 = 2,
  TVSG_STATUS_IO = 3,
  TVSG_STATUS_PARSE = 4,
  TVSG_STATUS_MODEL = 5,
  TVSG_STATUS_INVALID_ARGUMENT = 6,
  TVSG_STATUS_PANIC = 7,
} TvsgStatus;

/**
 * Loaded masked corpus.
 */
typedef struct TvsgCorpus TvsgCorpus;

/**
 * Loaded model checkpoint.
 */
typedef struct TvsgModel TvsgModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next tvsg call on the same thread.
 */
const char *tvsg_last_error_message(void);

/**
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void tvsg_string_free(char *s);

/**
 * Reads a masked corpus from a JSONL file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum TvsgStatus tvsg_corpus_read(const char *path, struct TvsgCorpus **out);

/**
 * Number of masked scenes, 0 for NULL.
 *
 * # Safety
 * `corpus` must be NULL or a live handle.
 */
uintptr_t tvsg_corpus_len(const struct TvsgCorpus *corpus);

/**
 * # Safety
 * `corpus` must be NULL or a handle from [`tvsg_corpus_read`] not yet freed.
 */
void tvsg_corpus_free(struct TvsgCorpus *corpus);

/**
 * Expected accuracy of guessing uniformly among each scene's candidates.
 * With `trials` > 0 the value is simulated with `seed` instead.
 *
 * # Safety
 * `corpus` must be a live handle; `out` must be writable.
 */
enum TvsgStatus tvsg_random_baseline(const struct TvsgCorpus *corpus,
                                     uintptr_t trials,
                                     uint64_t seed,
                                     double *out);

/**
 * Parses one raw episode with default rules, or with `rules_toml` when it is
 * not NULL. Writes the scenes as a JSON array to `out_json`.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out_json` must be writable.
 */
enum TvsgStatus tvsg_parse_episode(const char *raw,
                                   const char *rules_toml,
                                   const char *show,
                                   const char *episode_id,
                                   char **out_json);

/**
 * Cohen's kappa over two equal-length integer label sequences.
 *
 * # Safety
 * `a` and `b` must point to `n` readable values; `out` must be writable.
 */
enum TvsgStatus tvsg_cohen_kappa(const int32_t *a, const int32_t *b, uintptr_t n, double *out);

/**
 * Query-key pairs an attention layer evaluates for a sequence of `len`
 * tokens. `window` 0 means full attention.
 */
uint64_t tvsg_attention_pair_count(uintptr_t len, uintptr_t window);

/**
 * Loads a model checkpoint.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum TvsgStatus tvsg_model_load(const char *path, struct TvsgModel **out);

/**
 * # Safety
 * `model` must be NULL or a handle from [`tvsg_model_load`] not yet freed.
 */
void tvsg_model_free(struct TvsgModel *model);

/**
 * Predicts every masked speaker of `corpus`; writes JSON lines of
 * prediction records to `out_jsonl`. `joint` selects one-to-one decoding.
 *
 * # Safety
 * Handles must be live; `out_jsonl` must be writable.
 */
enum TvsgStatus tvsg_model_predict(const struct TvsgModel *model,
                                   const struct TvsgCorpus *corpus,
                                   bool joint,
                                   char **out_jsonl);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TVSG_H */
