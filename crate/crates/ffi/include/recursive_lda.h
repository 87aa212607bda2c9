#ifndef RECURSIVE_LDA_H
#define RECURSIVE_LDA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  RLDA_INITIAL_K_EXPLICIT = 0,
  RLDA_INITIAL_K_HDP1 = 1,
  RLDA_INITIAL_K_HDP2 = 2,
} RldaInitialK;

typedef enum {
  RLDA_OUTCOME_SUCCESS = 0,
  RLDA_OUTCOME_FAILURE_GAMMA_DROP = 1,
  RLDA_OUTCOME_FAILURE_STEADY_DECREASE = 2,
  RLDA_OUTCOME_FAILURE_STEP_CAP = 3,
} RldaOutcome;

typedef enum {
  RLDA_STATUS_OK = 0,
  RLDA_STATUS_NULL_POINTER = 1,
  RLDA_STATUS_INVALID_ARGUMENT = 2,
  RLDA_STATUS_IO = 3,
  RLDA_STATUS_DATA = 4,
  RLDA_STATUS_CONFIG = 5,
  RLDA_STATUS_OUT_OF_RANGE = 6,
  RLDA_STATUS_PANIC = 7,
} RldaStatus;

/**
 * Opaque corpus handle.
 */
typedef struct RldaCorpus RldaCorpus;

/**
 * Opaque fitted LDA model handle.
 */
typedef struct RldaModel RldaModel;

/**
 * Opaque recursion trace handle.
 */
typedef struct RldaTrace RldaTrace;

typedef struct {
  size_t k;
  double alpha;
  double eta;
  size_t sweeps;
  size_t burn_in;
  uint64_t seed;
} RldaLdaConfig;

typedef struct {
  double gamma;
  double beta_prior;
  double eta_doc;
  /**
   * 0 means the corpus size.
   */
  size_t truncation;
  size_t sweeps;
  size_t burn_in;
  uint64_t seed;
  bool refit_escalation;
} RldaHdpConfig;

typedef struct {
  double gamma_guard;
  size_t eta_guard;
  size_t max_steps;
  RldaInitialK initial_k_source;
  /**
   * Used when `initial_k_source` is `Explicit`.
   */
  size_t initial_k;
  /**
   * `k` and `seed` are ignored.
   */
  RldaLdaConfig lda;
  RldaHdpConfig hdp;
  uint64_t seed;
} RldaRecursionConfig;

typedef struct {
  size_t hdp1;
  size_t hdp2;
  size_t hdp3;
  bool degenerate[3];
} RldaEscalation;

typedef struct {
  size_t step_index;
  size_t k_specified;
  size_t k_effective;
  double efficiency_ratio;
} RldaStep;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next `rlda_*` call on the same thread.
 */
const char *rlda_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void rlda_string_free(char *s);

/**
 * Default LDA settings for `k` topics.
 */
RldaLdaConfig rlda_lda_config_default(size_t k);

RldaHdpConfig rlda_hdp_config_default(void);

RldaRecursionConfig rlda_recursion_config_default(void);

/**
 * Load a corpus JSON file.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
RldaStatus rlda_corpus_load(const char *path, RldaCorpus **out_corpus);

/**
 * Parse a corpus from its JSON text.
 *
 * # Safety
 * `json` must be a nul-terminated string; `out` must be writable.
 */
RldaStatus rlda_corpus_from_json(const char *json, RldaCorpus **out_corpus);

/**
 * Ingest a question CSV and clean it with the default settings.
 * Null column names select `id` and `question`.
 *
 * # Safety
 * String arguments must be null (columns only) or nul-terminated.
 */
RldaStatus rlda_corpus_from_csv(const char *path,
                                const char *id_col,
                                const char *text_col,
                                RldaCorpus **out_corpus);

/**
 * # Safety
 * `corpus` must be null or a live handle.
 */
void rlda_corpus_free(RldaCorpus *corpus);

/**
 * Number of documents.
 *
 * # Safety
 * `corpus` must be a live handle.
 */
RldaStatus rlda_corpus_len(const RldaCorpus *corpus, size_t *out_len);

/**
 * # Safety
 * `corpus` must be a live handle.
 */
RldaStatus rlda_corpus_vocab_size(const RldaCorpus *corpus, size_t *out_size);

/**
 * New corpus with documents shuffled by `seed`.
 *
 * # Safety
 * `corpus` must be a live handle.
 */
RldaStatus rlda_corpus_permute(const RldaCorpus *corpus, uint64_t seed, RldaCorpus **out_corpus);

/**
 * New corpus of the first `k` documents.
 *
 * # Safety
 * `corpus` must be a live handle.
 */
RldaStatus rlda_corpus_prefix(const RldaCorpus *corpus, size_t k, RldaCorpus **out_corpus);

/**
 * # Safety
 * `corpus` must be a live handle.
 */
RldaStatus rlda_corpus_to_json(const RldaCorpus *corpus, char **out_json);

/**
 * Fit LDA.
 *
 * # Safety
 * `corpus` and `config` must be valid pointers.
 */
RldaStatus rlda_lda_fit(const RldaCorpus *corpus,
                        const RldaLdaConfig *config,
                        RldaModel **out_model);

/**
 * # Safety
 * `json` must be nul-terminated.
 */
RldaStatus rlda_model_from_json(const char *json, RldaModel **out_model);

/**
 * # Safety
 * `model` must be a live handle.
 */
RldaStatus rlda_model_to_json(const RldaModel *model, char **out_json);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
void rlda_model_free(RldaModel *model);

/**
 * # Safety
 * `model` must be a live handle.
 */
RldaStatus rlda_model_k(const RldaModel *model, size_t *out_k);

/**
 * Number of topics that dominate at least one document.
 *
 * # Safety
 * `model` must be a live handle.
 */
RldaStatus rlda_model_effective_topic_count(const RldaModel *model, size_t *out_count);

/**
 * Dominant topic of document `doc` and its share.
 *
 * # Safety
 * `model` must be a live handle; out pointers must be writable.
 */
RldaStatus rlda_model_dominant_topic(const RldaModel *model,
                                     size_t doc,
                                     size_t *out_topic,
                                     double *out_contribution);

/**
 * Fit the truncated HDP and escalate its weights.
 *
 * # Safety
 * `corpus` and `config` must be valid pointers.
 */
RldaStatus rlda_hdp_fit(const RldaCorpus *corpus,
                        const RldaHdpConfig *config,
                        RldaEscalation *out_escalation);

/**
 * Escalating significance counts for a weight vector over a corpus of `n`
 * documents.
 *
 * # Safety
 * `weights` must point to `len` doubles.
 */
RldaStatus rlda_escalate(const double *weights,
                         size_t len,
                         size_t n,
                         RldaEscalation *out_escalation);

/**
 * Run the recursive refinement.
 *
 * # Safety
 * `corpus` and `config` must be valid pointers.
 */
RldaStatus rlda_recurse(const RldaCorpus *corpus,
                        const RldaRecursionConfig *config,
                        RldaTrace **out_trace);

/**
 * # Safety
 * `trace` must be null or a live handle.
 */
void rlda_trace_free(RldaTrace *trace);

/**
 * # Safety
 * `trace` must be a live handle.
 */
RldaStatus rlda_trace_len(const RldaTrace *trace, size_t *out_len);

/**
 * # Safety
 * `trace` must be a live handle.
 */
RldaStatus rlda_trace_step(const RldaTrace *trace, size_t index, RldaStep *out_step);

/**
 * # Safety
 * `trace` must be a live handle.
 */
RldaStatus rlda_trace_outcome(const RldaTrace *trace, RldaOutcome *out_outcome);

/**
 * Trace as JSON lines: one per step, then the outcome record.
 *
 * # Safety
 * `trace` must be a live handle.
 */
RldaStatus rlda_trace_to_jsonl(const RldaTrace *trace, char **out_jsonl);

/**
 * Copy of the final model of a successful recursion.
 *
 * # Safety
 * `trace` must be a live handle.
 */
RldaStatus rlda_trace_final_model(const RldaTrace *trace, RldaModel **out_model);

/**
 * Held-out perplexity with the default fold-in settings.
 *
 * # Safety
 * `model` and `held_out` must be live handles.
 */
RldaStatus rlda_perplexity(const RldaModel *model, const RldaCorpus *held_out, double *out_value);

/**
 * Mode of `values`, ties resolved toward the mean and then downward.
 *
 * # Safety
 * `values` must point to `len` integers.
 */
RldaStatus rlda_mean_mode(const size_t *values, size_t len, size_t *out_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RECURSIVE_LDA_H */
