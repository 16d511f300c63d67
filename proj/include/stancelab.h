/* stancelab — C API for the conditional-alignment laboratory.
 *
 * Conventions:
 *   - Every fallible function returns an slb_status; SLB_OK is 0.
 *   - On failure, a thread-local message is set; read it with slb_last_error().
 *   - Output parameters are written only on success.
 *   - char** outputs receive a NUL-terminated heap string owned by the caller;
 *     release it with slb_string_free().  Handles are released with their
 *     matching *_free function; freeing NULL is a no-op.
 *   - All strings are UTF-8.
 */
#ifndef STANCELAB_H
#define STANCELAB_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum slb_status {
    SLB_OK = 0,
    SLB_ERR_INVALID_ARGUMENT = 1,
    SLB_ERR_IO = 2,
    SLB_ERR_PARSE = 3,
    SLB_ERR_DOMAIN = 4,
    SLB_ERR_TRANSPORT = 5,
    SLB_ERR_CONFIG = 6,
    SLB_ERR_INTERNAL = 7
} slb_status;

/* Opaque handles. */
typedef struct slb_corpus slb_corpus;    /* a list of comments */
typedef struct slb_split slb_split;      /* an issue-level split assignment */
typedef struct slb_triples slb_triples;  /* a list of preference triples */
typedef struct slb_model slb_model;      /* vocabulary + dims + parameters */

/* ------------------------------------------------------------------ */
/* Library housekeeping                                               */
/* ------------------------------------------------------------------ */

const char* slb_version(void);

/* Thread-local message describing the most recent failure in this thread;
 * empty string when no failure has occurred since slb_clear_error(). */
const char* slb_last_error(void);
void slb_clear_error(void);

void slb_string_free(char* s);

/* ------------------------------------------------------------------ */
/* Corpus                                                             */
/* ------------------------------------------------------------------ */

/* format: "jsonl" or "csv".  Applies the five-token ingestion filter.
 * excluded_short (optional) receives the number of dropped records. */
slb_status slb_corpus_ingest(const char* path, const char* format, slb_corpus** out,
                             int* excluded_short);
slb_status slb_corpus_save_jsonl(const slb_corpus* corpus, const char* path);
/* Returns -1 if corpus is NULL. */
int slb_corpus_size(const slb_corpus* corpus);
/* Stats for the given split; pass split = NULL for a single-split view. */
slb_status slb_corpus_stats_json(const slb_corpus* corpus, const slb_split* split,
                                 char** out_json);
slb_status slb_corpus_stats_table(const slb_corpus* corpus, const slb_split* split,
                                  char** out_text);
/* part: "train", "dev", or "test". */
slb_status slb_corpus_filter_split(const slb_corpus* corpus, const slb_split* split,
                                   const char* part, slb_corpus** out);
void slb_corpus_free(slb_corpus* corpus);

/* ------------------------------------------------------------------ */
/* Split                                                              */
/* ------------------------------------------------------------------ */

slb_status slb_split_by_issue(const slb_corpus* corpus, double dev_frac, double test_frac,
                              uint64_t seed, slb_split** out);
slb_status slb_split_save_json(const slb_split* split, const char* path);
slb_status slb_split_load_json(const char* path, slb_split** out);
void slb_split_free(slb_split* split);

/* ------------------------------------------------------------------ */
/* Preference triples                                                 */
/* ------------------------------------------------------------------ */

/* issues_jsonl_path may be NULL or empty: issue ids then stand in for the
 * question text.  skipped (optional) receives the number of comments with no
 * eligible opposing pool. */
slb_status slb_triples_build(const slb_corpus* corpus, const char* issues_jsonl_path,
                             int pairs_per_chosen, uint64_t seed, slb_triples** out,
                             int* skipped);
slb_status slb_triples_save_jsonl(const slb_triples* triples, const char* path);
slb_status slb_triples_load_jsonl(const char* path, slb_triples** out);
/* Returns -1 if triples is NULL. */
int slb_triples_size(const slb_triples* triples);
void slb_triples_free(slb_triples* triples);

/* ------------------------------------------------------------------ */
/* Model                                                              */
/* ------------------------------------------------------------------ */

/* Builds a vocabulary from the triples (instruction, chosen, and rejected
 * texts) and randomly initializes parameters. */
slb_status slb_model_new(const slb_triples* triples, int vocab_size, int layers, int dim,
                         int heads, int context, uint64_t seed, slb_model** out);
slb_status slb_model_load(const char* path, slb_model** out);
slb_status slb_model_save(const slb_model* model, const char* path);
/* JSON object with dims, vocab size, and parameter count. */
slb_status slb_model_info_json(const slb_model* model, char** out_json);
void slb_model_free(slb_model* model);

/* ------------------------------------------------------------------ */
/* Training and scoring                                               */
/* ------------------------------------------------------------------ */

/* config_json: JSON object accepted by the training configuration (objective,
 * lambda, learning_rate, epochs, batch_size, seed, optimizer, beta1, beta2,
 * adam_eps, grad_clip_norm, checkpoint_path); missing keys keep defaults.
 * Updates the model parameters in place.  out_log_jsonl (optional) receives
 * the canonical per-step loss log. */
slb_status slb_train(slb_model* model, const slb_triples* triples, const char* config_json,
                     char** out_log_jsonl);

/* objective: "sft" or "orpo". */
slb_status slb_evaluate_loss(const slb_model* model, const slb_triples* triples,
                             const char* objective, double lambda, double* out_total,
                             double* out_sft, double* out_or_term);

/* language: "de", "fr", or "it".  gen_config_json: JSON object accepted by the
 * generation configuration (temperature, top_k, max_tokens, seed); NULL or
 * empty for defaults. */
slb_status slb_generate(const slb_model* model, const char* party, const char* language,
                        const char* question, const char* gen_config_json, char** out_text);

/* Scores `text` as a continuation of the party/language/question prompt. */
slb_status slb_score_text(const slb_model* model, const char* party, const char* language,
                          const char* question, const char* text, double* out_sum_logprob,
                          double* out_mean_logprob, int* out_length);

/* ------------------------------------------------------------------ */
/* Evaluation                                                         */
/* ------------------------------------------------------------------ */

/* generations_jsonl: records with issue_id/party/language/text/model_tag.
 * out_csv (optional) receives the CSV rendering of the same report. */
slb_status slb_eval_diversity(const char* generations_jsonl, char** out_report_json,
                              char** out_csv);

/* refs_jsonl: any JSONL whose records carry a "text" field.
 * featurizer: "hashed_ngram" or "external_file" (the latter requires
 * sidecar_path; pass NULL otherwise). */
slb_status slb_eval_mauve(const char* generations_jsonl, const char* refs_jsonl,
                          const char* featurizer, int runs, uint64_t seed,
                          const char* sidecar_path, char** out_report_json, char** out_csv);

/* annotations_jsonl: records with item_id/label_a/label_b (labels A, B, BOTH,
 * NEITHER).  discard_ties nonzero drops items labeled BOTH or NEITHER. */
slb_status slb_eval_kappa(const char* annotations_jsonl, int discard_ties,
                          char** out_report_json);

/* comparisons_jsonl: records with model_x/model_y/winner (X, Y, TIE).
 * tie_policy: "half" or "discard". */
slb_status slb_eval_win_rates(const char* comparisons_jsonl, const char* tie_policy,
                              char** out_report_json, char** out_csv);

/* ------------------------------------------------------------------ */
/* Survey, matching, overview                                         */
/* ------------------------------------------------------------------ */

/* questions_jsonl: records with id/text.  Emits one survey-answer JSON object
 * per line (question_id, answer, option_scores). */
slb_status slb_survey(const slb_model* model, const char* questions_jsonl,
                      char** out_answers_jsonl);

/* user_answers_jsonl: survey-answer records for the user.
 * candidates_jsonl: survey-answer records each additionally carrying a
 * "candidate_id" field; they are grouped per candidate. */
slb_status slb_match(const char* user_answers_jsonl, const char* candidates_jsonl,
                     char** out_match_json);

/* parties: comma-separated party labels.  Returns a party-answer-set JSON
 * object (question, language, answers). */
slb_status slb_party_answers(const slb_model* model, const char* question, const char* parties,
                             const char* language, const char* gen_config_json,
                             char** out_answer_set_json);

/* summarizer_config_json: base_url, model_name, api_key_env, timeout_s,
 * max_retries, backoff_base_ms.  answer_set_json: as produced by
 * slb_party_answers.  Performs real HTTP requests against base_url.
 * out_provenance_json (optional) receives the provenance record. */
slb_status slb_synthesize_overview(const char* summarizer_config_json,
                                   const char* answer_set_json, char** out_overview,
                                   char** out_provenance_json);

/* ------------------------------------------------------------------ */
/* Toy study                                                          */
/* ------------------------------------------------------------------ */

/* options_json: JSON object accepted by the toy-study options (seed, epochs,
 * learning_rate, lambda, batch_size, pairs_per_chosen, dim, layers, heads,
 * context, max_tokens, vocab_size, mauve_runs, out_dir); NULL or empty for
 * defaults.  Runs the full synthetic experiment. */
slb_status slb_run_toy_study(const char* options_json, char** out_result_json);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* STANCELAB_H */
