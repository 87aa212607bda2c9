#include <stdio.h>
#include <string.h>
#include "recursive_lda.h"

#define CHECK(call)                                                        \
  do {                                                                     \
    RldaStatus s_ = (call);                                                \
    if (s_ != RLDA_STATUS_OK) {                                            \
      fprintf(stderr, "%s failed: %d %s\n", #call, (int)s_,                \
              rlda_last_error() ? rlda_last_error() : "");                 \
      return 1;                                                            \
    }                                                                      \
  } while (0)

int main(int argc, char **argv) {
  if (argc != 2) {
    fprintf(stderr, "usage: smoke CORPUS_JSON\n");
    return 2;
  }
  RldaCorpus *corpus = NULL;
  CHECK(rlda_corpus_load(argv[1], &corpus));

  size_t n = 0;
  CHECK(rlda_corpus_len(corpus, &n));

  RldaLdaConfig lda = rlda_lda_config_default(3);
  lda.sweeps = 60;
  lda.burn_in = 30;
  RldaModel *model = NULL;
  CHECK(rlda_lda_fit(corpus, &lda, &model));
  size_t k = 0;
  CHECK(rlda_model_k(model, &k));
  if (k != 3) {
    fprintf(stderr, "expected k = 3, got %zu\n", k);
    return 1;
  }

  RldaRecursionConfig rc = rlda_recursion_config_default();
  rc.initial_k_source = RLDA_INITIAL_K_EXPLICIT;
  rc.initial_k = 4;
  rc.lda.sweeps = 60;
  rc.lda.burn_in = 30;
  RldaTrace *trace = NULL;
  CHECK(rlda_recurse(corpus, &rc, &trace));
  size_t steps = 0;
  RldaOutcome outcome;
  CHECK(rlda_trace_len(trace, &steps));
  CHECK(rlda_trace_outcome(trace, &outcome));

  if (rlda_corpus_len(NULL, &n) != RLDA_STATUS_NULL_POINTER ||
      rlda_last_error() == NULL) {
    fprintf(stderr, "null handle not reported\n");
    return 1;
  }

  printf("docs=%zu steps=%zu outcome=%d\n", n, steps, (int)outcome);
  rlda_trace_free(trace);
  rlda_model_free(model);
  rlda_corpus_free(corpus);
  return 0;
}
