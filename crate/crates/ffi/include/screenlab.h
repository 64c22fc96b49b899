#ifndef SCREENLAB_H
#define SCREENLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum ScreenlabStatus {
  SCREENLAB_STATUS_OK = 0,
  SCREENLAB_STATUS_NULL_POINTER = 1,
  SCREENLAB_STATUS_INVALID_ARGUMENT = 2,
  SCREENLAB_STATUS_IO = 3,
  SCREENLAB_STATUS_INVALID_DATA = 4,
  SCREENLAB_STATUS_DEGENERATE = 5,
  SCREENLAB_STATUS_BUFFER_TOO_SMALL = 6,
  SCREENLAB_STATUS_PANIC = 7,
} ScreenlabStatus;

/**
 * A validated corpus.
 */
typedef struct ScreenlabCorpus ScreenlabCorpus;

/**
 * A loaded emotion head.
 */
typedef struct ScreenlabHead ScreenlabHead;

/**
 * Fixed-effects regression summary.
 */
typedef struct ScreenlabRegression {
  double beta;
  double se;
  double r2;
  double f_stat;
  double p_value;
  uint64_t df1;
  uint64_t df2;
  uint64_t n_obs;
  uint64_t n_groups;
} ScreenlabRegression;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *screenlab_version(void);

/**
 * Number of emotion labels.
 */
size_t screenlab_n_labels(void);

/**
 * Static name of label `index`, or NULL when out of range.
 */
const char *screenlab_label_name(size_t index);

/**
 * Copies the calling thread's last error message into `buf`, truncating
 * to `len - 1` bytes plus NUL. Returns the full message length excluding
 * the NUL, or 0 when the last call succeeded.
 *
 * # Safety
 * `buf` is NULL or valid for `len` writes.
 */
size_t screenlab_last_error_message(char *buf, size_t len);

/**
 * Differential entropy (nats) of Dirichlet(`alpha[0..k]`).
 *
 * # Safety
 * `alpha` is valid for `k` reads; `out` for one write.
 */
enum ScreenlabStatus screenlab_dirichlet_entropy(const double *alpha, size_t k, double *out);

/**
 * Maximum-likelihood Dirichlet fit to `n` row-major samples of dimension
 * `k`. Entries are floored at `epsilon` and rows renormalized first.
 * `converged` may be NULL.
 *
 * # Safety
 * `samples` is valid for `n * k` reads, `alpha_out` for `k` writes and
 * `converged` is NULL or valid for one write.
 */
enum ScreenlabStatus screenlab_dirichlet_mle(const double *samples,
                                             size_t n,
                                             size_t k,
                                             double epsilon,
                                             double *alpha_out,
                                             bool *converged);

/**
 * Leiden modularity partition of an undirected weighted graph given as
 * `n_edges` parallel arrays. Writes a dense community id per node into
 * `membership[0..n_nodes]`. `quality` and `n_communities` may be NULL.
 *
 * # Safety
 * `src`, `dst` and `weight` are valid for `n_edges` reads; `membership`
 * for `n_nodes` writes; optional outputs are NULL or valid for one write.
 */
enum ScreenlabStatus screenlab_leiden(size_t n_nodes,
                                      const uint32_t *src,
                                      const uint32_t *dst,
                                      const double *weight,
                                      size_t n_edges,
                                      double resolution,
                                      uint64_t seed,
                                      uint32_t *membership,
                                      double *quality,
                                      size_t *n_communities);

/**
 * Within (fixed-effects) regression of `y` on `x` with one intercept per
 * value of `group`.
 *
 * # Safety
 * `group`, `x` and `y` are valid for `n` reads; `out` for one write.
 */
enum ScreenlabStatus screenlab_fixed_effects(const uint32_t *group,
                                             const double *x,
                                             const double *y,
                                             size_t n,
                                             struct ScreenlabRegression *out);

/**
 * Parses and validates a corpus from its two JSONL files.
 *
 * # Safety
 * Paths are NUL-terminated strings; `out` is valid for one write.
 */
enum ScreenlabStatus screenlab_corpus_open(const char *utterances_path,
                                           const char *films_path,
                                           struct ScreenlabCorpus **out);

/**
 * Releases a corpus. NULL is ignored.
 *
 * # Safety
 * `corpus` is NULL or a live handle from [`screenlab_corpus_open`].
 */
void screenlab_corpus_free(struct ScreenlabCorpus *corpus);

/**
 * Number of utterances, 0 for NULL.
 *
 * # Safety
 * `corpus` is NULL or a live handle.
 */
size_t screenlab_corpus_n_utterances(const struct ScreenlabCorpus *corpus);

/**
 * Number of films, 0 for NULL.
 *
 * # Safety
 * `corpus` is NULL or a live handle.
 */
size_t screenlab_corpus_n_films(const struct ScreenlabCorpus *corpus);

/**
 * Drops utterances at or after each film's credits start, in place.
 *
 * # Safety
 * `corpus` is NULL or a live handle not used concurrently.
 */
enum ScreenlabStatus screenlab_corpus_trim_credits(struct ScreenlabCorpus *corpus);

/**
 * Binned narrative trajectory with film-level bootstrap intervals.
 *
 * `label` selects the measure: a negative value means emotionality,
 * otherwise the share of that label among emotional utterances (neutral
 * is rejected). `mode` is 0 (prob) or 1 (argmax). Each output array holds
 * `n_bins` entries; bins without utterances get NaN. `n_utts` may be NULL.
 *
 * # Safety
 * `corpus` is a live handle; `point`, `lo`, `hi` are valid for `n_bins`
 * writes and `n_utts` is NULL or valid for `n_bins` writes.
 */
enum ScreenlabStatus screenlab_trajectory(const struct ScreenlabCorpus *corpus,
                                          int32_t label,
                                          uint32_t mode,
                                          size_t n_bins,
                                          size_t n_boot,
                                          uint64_t seed,
                                          double *point,
                                          double *lo,
                                          double *hi,
                                          size_t *n_utts);

/**
 * Loads an emotion-head weight file.
 *
 * # Safety
 * `path` is a NUL-terminated string; `out` is valid for one write.
 */
enum ScreenlabStatus screenlab_head_load(const char *path, struct ScreenlabHead **out);

/**
 * Releases a head. NULL is ignored.
 *
 * # Safety
 * `head` is NULL or a live handle from [`screenlab_head_load`].
 */
void screenlab_head_free(struct ScreenlabHead *head);

/**
 * Input shape of a head: layers and per-layer dimension.
 *
 * # Safety
 * `head` is a live handle; outputs are valid for one write.
 */
enum ScreenlabStatus screenlab_head_dims(const struct ScreenlabHead *head,
                                         size_t *n_layers,
                                         size_t *input_dim);

/**
 * Label distribution for one utterance. `layers` is row-major
 * `n_layers * input_dim`; `probs_out` receives [`screenlab_n_labels`]
 * values. Fails with `BufferTooSmall` when `probs_len` is short.
 *
 * # Safety
 * `head` is a live handle; `layers` is valid for `len` reads and
 * `probs_out` for `probs_len` writes.
 */
enum ScreenlabStatus screenlab_head_forward(const struct ScreenlabHead *head,
                                            const float *layers,
                                            size_t len,
                                            double *probs_out,
                                            size_t probs_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCREENLAB_H */
