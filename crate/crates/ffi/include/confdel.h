#ifndef CONFDEL_H
#define CONFDEL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ConfdelStatus {
  CONFDEL_STATUS_OK = 0,
  CONFDEL_STATUS_NULL_POINTER = 1,
  CONFDEL_STATUS_INVALID_UTF8 = 2,
  CONFDEL_STATUS_INVALID_ARGUMENT = 3,
  CONFDEL_STATUS_PARSE = 4,
  CONFDEL_STATUS_DEGENERATE = 5,
  CONFDEL_STATUS_IO = 6,
  CONFDEL_STATUS_OUT_OF_RANGE = 7,
  CONFDEL_STATUS_PANIC = 8,
} ConfdelStatus;

/**
 * Loaded corpus of utterances.
 */
typedef struct ConfdelCorpus ConfdelCorpus;

/**
 * Trained estimator bundle.
 */
typedef struct ConfdelEstimator ConfdelEstimator;

/**
 * Metric summary; deletion AUCs are NaN when the corpus has no deletion
 * predictions.
 */
typedef struct ConfdelEvalReport {
  size_t words;
  double nce;
  double roc_auc;
  double pr_auc;
  double roc_auc_next_del;
  double roc_auc_start_del;
} ConfdelEvalReport;

typedef struct ConfdelErrorCounts {
  size_t cor;
  size_t sub;
  size_t del;
  size_t ins;
} ConfdelErrorCounts;

typedef struct ConfdelThresholds {
  double theta_c;
  double theta_d;
  double theta_s;
  double theta_p;
} ConfdelThresholds;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *confdel_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *confdel_version(void);

/**
 * Reads a JSON-lines corpus.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum ConfdelStatus confdel_corpus_read(const char *path, struct ConfdelCorpus **out);

/**
 * Generates a synthetic corpus from a named preset (`"matched"`,
 * `"mismatched"`) or the defaults when `preset_name` is NULL.
 *
 * # Safety
 * `preset_name` must be NULL or NUL-terminated; `out` must be writable.
 */
enum ConfdelStatus confdel_simulate(const char *preset_name,
                                    uint64_t seed,
                                    size_t n_utts,
                                    struct ConfdelCorpus **out);

/**
 * Writes the corpus, including any targets and predictions, atomically.
 *
 * # Safety
 * `corpus` must be a live handle and `path` NUL-terminated.
 */
enum ConfdelStatus confdel_corpus_write(const struct ConfdelCorpus *corpus, const char *path);

/**
 * Number of utterances; 0 for NULL.
 *
 * # Safety
 * `corpus` must be NULL or a live handle.
 */
size_t confdel_corpus_len(const struct ConfdelCorpus *corpus);

/**
 * Number of hypothesis words in utterance `index`; 0 when out of range.
 *
 * # Safety
 * `corpus` must be NULL or a live handle.
 */
size_t confdel_corpus_utterance_len(const struct ConfdelCorpus *corpus, size_t index);

/**
 * Aligns every utterance with default costs and stores its targets.
 *
 * # Safety
 * `corpus` must be a live handle.
 */
enum ConfdelStatus confdel_corpus_align(struct ConfdelCorpus *corpus);

/**
 * Copies the confidence predictions of utterance `index` into `c_out`,
 * which must hold `confdel_corpus_utterance_len` values.
 *
 * # Safety
 * `corpus` must be a live handle and `c_out` writable for `capacity` values.
 */
enum ConfdelStatus confdel_corpus_confidences(const struct ConfdelCorpus *corpus,
                                              size_t index,
                                              double *c_out,
                                              size_t capacity);

/**
 * Scores the corpus predictions against its targets.
 *
 * # Safety
 * `corpus` must be a live handle and `out` writable.
 */
enum ConfdelStatus confdel_corpus_evaluate(const struct ConfdelCorpus *corpus,
                                           struct ConfdelEvalReport *out);

/**
 * # Safety
 * `corpus` must be NULL or a handle not yet freed.
 */
void confdel_corpus_free(struct ConfdelCorpus *corpus);

/**
 * Loads an estimator written by `confdel train-birnn`.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` writable.
 */
enum ConfdelStatus confdel_estimator_load(const char *path, struct ConfdelEstimator **out);

/**
 * Replaces the predictions of every utterance with the estimator's.
 *
 * # Safety
 * Both handles must be live.
 */
enum ConfdelStatus confdel_estimator_predict(const struct ConfdelEstimator *estimator,
                                             struct ConfdelCorpus *corpus);

/**
 * # Safety
 * `estimator` must be NULL or a handle not yet freed.
 */
void confdel_estimator_free(struct ConfdelEstimator *estimator);

/**
 * Minimum-cost alignment of `hyp` against `reference`. `counts` may be NULL.
 *
 * # Safety
 * Token arrays must hold the stated number of NUL-terminated strings;
 * `cost` must be writable.
 */
enum ConfdelStatus confdel_align(const char *const *hyp,
                                 size_t hyp_len,
                                 const char *const *reference,
                                 size_t ref_len,
                                 uint32_t sub_cost,
                                 uint32_t del_cost,
                                 uint32_t ins_cost,
                                 uint64_t *cost,
                                 struct ConfdelErrorCounts *counts);

/**
 * Normalised cross entropy over `n` scores with 0/1 labels (nonzero is positive).
 *
 * # Safety
 * `scores` and `labels` must hold `n` values; `out` must be writable.
 */
enum ConfdelStatus confdel_nce(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * ROC AUC over `n` scores with 0/1 labels (nonzero is positive).
 *
 * # Safety
 * `scores` and `labels` must hold `n` values; `out` must be writable.
 */
enum ConfdelStatus confdel_roc_auc(const double *scores,
                                   const uint8_t *labels,
                                   size_t n,
                                   double *out);

/**
 * Precision-recall AUC over `n` scores with 0/1 labels (nonzero is positive).
 *
 * # Safety
 * `scores` and `labels` must hold `n` values; `out` must be writable.
 */
enum ConfdelStatus confdel_pr_auc(const double *scores,
                                  const uint8_t *labels,
                                  size_t n,
                                  double *out);

/**
 * Frame-weighted mean confidence of one utterance.
 *
 * # Safety
 * `c` and `frames` must hold `n` values; `out` must be writable.
 */
enum ConfdelStatus confdel_frame_weighted_conf(const double *c,
                                               const uint32_t *frames,
                                               size_t n,
                                               double *out);

/**
 * Thresholded WER estimate of one utterance; +infinity when nothing is
 * counted correct.
 *
 * # Safety
 * `c` and `d` must hold `n` values; `out` must be writable.
 */
enum ConfdelStatus confdel_estimate_wer(const double *c,
                                        const double *d,
                                        size_t n,
                                        double s,
                                        struct ConfdelThresholds thresholds,
                                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONFDEL_H */
