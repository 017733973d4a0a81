#ifndef HIERNOTE_H
#define HIERNOTE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum HnStatus {
  HN_STATUS_OK = 0,
  HN_STATUS_NULL_POINTER = 1,
  HN_STATUS_INVALID_UTF8 = 2,
  HN_STATUS_INVALID_ARGUMENT = 3,
  HN_STATUS_IO = 4,
  HN_STATUS_PARSE = 5,
  HN_STATUS_CONFIG = 6,
  /**
   * Data rejected by a computation, e.g. AUROC over a single class.
   */
  HN_STATUS_DATA = 7,
  HN_STATUS_MODEL = 8,
  HN_STATUS_NOT_FOUND = 9,
  HN_STATUS_PANIC = 10,
} HnStatus;

typedef struct HnCorpus HnCorpus;

typedef struct HnLexicon HnLexicon;

/**
 * Scored predictions; metrics are computed on demand.
 */
typedef struct HnMetrics HnMetrics;

typedef struct HnModel HnModel;

/**
 * Macro-averaged scores over TT-No and TT-Yes.
 */
typedef struct HnMacroScores {
  double macro_f1;
  double macro_precision;
  double macro_recall;
  /**
   * Non-zero when some precision or recall had an empty denominator and
   * was counted as 0.
   */
  uint8_t zero_division;
} HnMacroScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *hn_last_error(void);

/**
 * Library version as a static string.
 */
const char *hn_version(void);

/**
 * # Safety
 * `s` is null or was returned by this library and not yet freed.
 */
void hn_string_free(char *s);

/**
 * Loads a JSONL corpus.
 *
 * # Safety
 * `path` is a NUL-terminated string and `out` is writable.
 */
enum HnStatus hn_corpus_load(const char *path, struct HnCorpus **out);

/**
 * Generates a synthetic corpus from a TOML generator spec.
 *
 * # Safety
 * `spec_toml` is a NUL-terminated string and `out` is writable.
 */
enum HnStatus hn_corpus_generate(const char *spec_toml, struct HnCorpus **out);

/**
 * # Safety
 * `corpus` is a live handle and `path` a NUL-terminated string.
 */
enum HnStatus hn_corpus_save(const struct HnCorpus *corpus, const char *path);

/**
 * Number of patients.
 *
 * # Safety
 * `corpus` is a live handle and `out` is writable.
 */
enum HnStatus hn_corpus_len(const struct HnCorpus *corpus, size_t *out);

/**
 * Total number of notes.
 *
 * # Safety
 * `corpus` is a live handle and `out` is writable.
 */
enum HnStatus hn_corpus_note_count(const struct HnCorpus *corpus, size_t *out);

/**
 * Fraction of TT-Yes patients.
 *
 * # Safety
 * `corpus` is a live handle and `out` is writable.
 */
enum HnStatus hn_corpus_positive_fraction(const struct HnCorpus *corpus, double *out);

/**
 * # Safety
 * `corpus` is null or a handle from this library, not yet freed.
 */
void hn_corpus_free(struct HnCorpus *corpus);

/**
 * Scores `n` predictions: `scores[i]` is P(TT-Yes) and `labels[i]` is
 * non-zero for TT-Yes. A prediction is TT-Yes iff its score exceeds 0.5.
 *
 * # Safety
 * `scores` and `labels` point to `n` readable elements; `out` is writable.
 */
enum HnStatus hn_metrics_new(const double *scores,
                             const uint8_t *labels,
                             size_t n,
                             struct HnMetrics **out);

/**
 * Area under the ROC curve, ties credited one half. Fails with
 * `HN_STATUS_DATA` when only one class is present.
 *
 * # Safety
 * `metrics` is a live handle and `out` is writable.
 */
enum HnStatus hn_metrics_auroc(const struct HnMetrics *metrics, double *out);

/**
 * # Safety
 * `metrics` is a live handle and `out` is writable.
 */
enum HnStatus hn_metrics_macro(const struct HnMetrics *metrics, struct HnMacroScores *out);

/**
 * # Safety
 * `metrics` is null or a handle from this library, not yet freed.
 */
void hn_metrics_free(struct HnMetrics *metrics);

/**
 * The shipped social-determinants lexicon.
 *
 * # Safety
 * `out` is writable.
 */
enum HnStatus hn_lexicon_default(struct HnLexicon **out);

/**
 * Loads a TOML lexicon.
 *
 * # Safety
 * `path` is a NUL-terminated string and `out` is writable.
 */
enum HnStatus hn_lexicon_load(const char *path, struct HnLexicon **out);

/**
 * Number of topics.
 *
 * # Safety
 * `lexicon` is a live handle and `out` is writable.
 */
enum HnStatus hn_lexicon_len(const struct HnLexicon *lexicon, size_t *out);

/**
 * Key of topic `index`, as a new string.
 *
 * # Safety
 * `lexicon` is a live handle and `out` is writable.
 */
enum HnStatus hn_lexicon_topic_key(const struct HnLexicon *lexicon, size_t index, char **out);

/**
 * Number of whole-word keyword hits of topic `key` in `text`.
 *
 * # Safety
 * `lexicon` is a live handle, `key` and `text` are NUL-terminated strings
 * and `out` is writable.
 */
enum HnStatus hn_lexicon_count(const struct HnLexicon *lexicon,
                               const char *key,
                               const char *text,
                               size_t *out);

/**
 * `text` with every keyword of topic `key` deleted, as a new string.
 *
 * # Safety
 * `lexicon` is a live handle, `key` and `text` are NUL-terminated strings
 * and `out` is writable.
 */
enum HnStatus hn_lexicon_remove(const struct HnLexicon *lexicon,
                                const char *key,
                                const char *text,
                                char **out);

/**
 * # Safety
 * `lexicon` is null or a handle from this library, not yet freed.
 */
void hn_lexicon_free(struct HnLexicon *lexicon);

/**
 * Loads a frozen pipeline from a model directory written by training
 * (`vocab.txt`, `encoder.ckpt` and, for multi-note models, `mlp.ckpt`).
 *
 * # Safety
 * `dir` is a NUL-terminated string and `out` is writable.
 */
enum HnStatus hn_model_load(const char *dir, struct HnModel **out);

/**
 * `single` or `MS-n`, as a new string.
 *
 * # Safety
 * `model` is a live handle and `out` is writable.
 */
enum HnStatus hn_model_name(const struct HnModel *model, char **out);

/**
 * P(TT-Yes) for one patient of `corpus`.
 *
 * # Safety
 * `model` and `corpus` are live handles, `patient_id` is a NUL-terminated
 * string and `out` is writable.
 */
enum HnStatus hn_model_score(const struct HnModel *model,
                             const struct HnCorpus *corpus,
                             const char *patient_id,
                             double *out);

/**
 * # Safety
 * `model` is null or a handle from this library, not yet freed.
 */
void hn_model_free(struct HnModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HIERNOTE_H */
