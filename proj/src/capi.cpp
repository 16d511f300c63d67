#include "stancelab.h"

#include <cstring>
#include <exception>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "stancelab/corpus.hpp"
#include "stancelab/encoding.hpp"
#include "stancelab/error.hpp"
#include "stancelab/eval.hpp"
#include "stancelab/io_util.hpp"
#include "stancelab/overview.hpp"
#include "stancelab/prompts.hpp"
#include "stancelab/survey.hpp"
#include "stancelab/text.hpp"
#include "stancelab/tinylm.hpp"
#include "stancelab/toystudy.hpp"
#include "stancelab/trainer.hpp"

struct slb_corpus {
    std::vector<stancelab::Comment> comments;
};
struct slb_split {
    stancelab::SplitAssignment split;
};
struct slb_triples {
    std::vector<stancelab::PreferenceTriple> triples;
};
struct slb_model {
    stancelab::LMModel model;
};

namespace {

using stancelab::Error;
using stancelab::ErrorKind;

thread_local std::string t_last_error;

slb_status status_of(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidArgument: return SLB_ERR_INVALID_ARGUMENT;
        case ErrorKind::Io: return SLB_ERR_IO;
        case ErrorKind::Parse: return SLB_ERR_PARSE;
        case ErrorKind::Domain: return SLB_ERR_DOMAIN;
        case ErrorKind::Transport: return SLB_ERR_TRANSPORT;
        case ErrorKind::Config: return SLB_ERR_CONFIG;
        case ErrorKind::Internal: return SLB_ERR_INTERNAL;
    }
    return SLB_ERR_INTERNAL;
}

// Runs fn, translating exceptions into status codes + the thread-local
// message.  fn performs all output-parameter writes itself, so outputs are
// only touched on success.
template <typename Fn>
slb_status guarded(Fn&& fn) {
    try {
        fn();
        t_last_error.clear();
        return SLB_OK;
    } catch (const Error& e) {
        t_last_error = e.what();
        return status_of(e.kind());
    } catch (const std::exception& e) {
        t_last_error = e.what();
        return SLB_ERR_INTERNAL;
    } catch (...) {
        t_last_error = "unknown error";
        return SLB_ERR_INTERNAL;
    }
}

char* dup_string(const std::string& s) {
    char* out = new char[s.size() + 1];
    std::memcpy(out, s.data(), s.size());
    out[s.size()] = '\0';
    return out;
}

void require(const void* ptr, const char* what) {
    if (ptr == nullptr) {
        stancelab::raise(ErrorKind::InvalidArgument, std::string(what) + " must not be NULL");
    }
}

std::string required_string(const char* s, const char* what) {
    require(s, what);
    return std::string(s);
}

std::string optional_string(const char* s) { return s == nullptr ? std::string() : std::string(s); }

nlohmann::json parse_json_object(const std::string& text, const char* what) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) {
        stancelab::raise(ErrorKind::Parse, std::string(what) + ": invalid JSON");
    }
    return j;
}

stancelab::TrainConfig parse_train_config(const char* config_json) {
    const std::string text = optional_string(config_json);
    if (text.empty()) return stancelab::TrainConfig{};
    return stancelab::TrainConfig::from_json(parse_json_object(text, "train config"));
}

stancelab::GenerationConfig parse_gen_config(const char* config_json) {
    const std::string text = optional_string(config_json);
    if (text.empty()) return stancelab::GenerationConfig{};
    return stancelab::GenerationConfig::from_json(parse_json_object(text, "generation config"));
}

stancelab::CorpusFormat parse_format(const std::string& name) {
    if (name == "jsonl" || name == "JSONL") return stancelab::CorpusFormat::Jsonl;
    if (name == "csv" || name == "CSV") return stancelab::CorpusFormat::Csv;
    stancelab::raise(ErrorKind::InvalidArgument,
                     "unknown corpus format \"" + name + "\" (expected jsonl or csv)");
}

const stancelab::SplitAssignment& split_or_trivial(const slb_corpus* corpus,
                                                  const slb_split* split,
                                                  stancelab::SplitAssignment& storage) {
    if (split != nullptr) return split->split;
    storage = stancelab::trivial_split(corpus->comments);
    return storage;
}

std::vector<std::string> texts_with_text_field(const std::string& path) {
    const std::vector<nlohmann::json> records = stancelab::read_jsonl(path);
    std::vector<std::string> texts;
    texts.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto it = records[i].find("text");
        if (it == records[i].end() || !it->is_string()) {
            stancelab::raise(ErrorKind::Parse, path + ": record " + std::to_string(i + 1) +
                                                   " has no string \"text\" field");
        }
        texts.push_back(it->get<std::string>());
    }
    return texts;
}

}  // namespace

extern "C" {

const char* slb_version(void) { return "0.1.0"; }

const char* slb_last_error(void) { return t_last_error.c_str(); }

void slb_clear_error(void) { t_last_error.clear(); }

void slb_string_free(char* s) { delete[] s; }

/* ------------------------------------------------------------------ */
/* Corpus                                                             */
/* ------------------------------------------------------------------ */

slb_status slb_corpus_ingest(const char* path, const char* format, slb_corpus** out,
                             int* excluded_short) {
    return guarded([&] {
        require(out, "out");
        stancelab::IngestResult result = stancelab::ingest_comments(
            required_string(path, "path"), parse_format(required_string(format, "format")));
        if (excluded_short != nullptr) {
            *excluded_short = static_cast<int>(result.excluded_short);
        }
        *out = new slb_corpus{std::move(result.comments)};
    });
}

slb_status slb_corpus_save_jsonl(const slb_corpus* corpus, const char* path) {
    return guarded([&] {
        require(corpus, "corpus");
        stancelab::save_comments_jsonl(required_string(path, "path"), corpus->comments);
    });
}

int slb_corpus_size(const slb_corpus* corpus) {
    return corpus == nullptr ? -1 : static_cast<int>(corpus->comments.size());
}

slb_status slb_corpus_stats_json(const slb_corpus* corpus, const slb_split* split,
                                 char** out_json) {
    return guarded([&] {
        require(corpus, "corpus");
        require(out_json, "out_json");
        stancelab::SplitAssignment storage;
        const stancelab::StatsReport report =
            stancelab::corpus_stats(corpus->comments, split_or_trivial(corpus, split, storage));
        *out_json = dup_string(report.to_json().dump(2));
    });
}

slb_status slb_corpus_stats_table(const slb_corpus* corpus, const slb_split* split,
                                  char** out_text) {
    return guarded([&] {
        require(corpus, "corpus");
        require(out_text, "out_text");
        stancelab::SplitAssignment storage;
        const stancelab::StatsReport report =
            stancelab::corpus_stats(corpus->comments, split_or_trivial(corpus, split, storage));
        *out_text = dup_string(report.to_table());
    });
}

slb_status slb_corpus_filter_split(const slb_corpus* corpus, const slb_split* split,
                                   const char* part, slb_corpus** out) {
    return guarded([&] {
        require(corpus, "corpus");
        require(split, "split");
        require(out, "out");
        *out = new slb_corpus{stancelab::filter_by_split(corpus->comments, split->split,
                                                         required_string(part, "part"))};
    });
}

void slb_corpus_free(slb_corpus* corpus) { delete corpus; }

/* ------------------------------------------------------------------ */
/* Split                                                              */
/* ------------------------------------------------------------------ */

slb_status slb_split_by_issue(const slb_corpus* corpus, double dev_frac, double test_frac,
                              uint64_t seed, slb_split** out) {
    return guarded([&] {
        require(corpus, "corpus");
        require(out, "out");
        *out = new slb_split{stancelab::split_by_issue(corpus->comments, dev_frac, test_frac,
                                                       seed)};
    });
}

slb_status slb_split_save_json(const slb_split* split, const char* path) {
    return guarded([&] {
        require(split, "split");
        stancelab::write_file(required_string(path, "path"), split->split.to_json().dump(2) + "\n");
    });
}

slb_status slb_split_load_json(const char* path, slb_split** out) {
    return guarded([&] {
        require(out, "out");
        const std::string p = required_string(path, "path");
        *out = new slb_split{stancelab::SplitAssignment::from_json(
            parse_json_object(stancelab::read_file(p), p.c_str()))};
    });
}

void slb_split_free(slb_split* split) { delete split; }

/* ------------------------------------------------------------------ */
/* Preference triples                                                 */
/* ------------------------------------------------------------------ */

slb_status slb_triples_build(const slb_corpus* corpus, const char* issues_jsonl_path,
                             int pairs_per_chosen, uint64_t seed, slb_triples** out,
                             int* skipped) {
    return guarded([&] {
        require(corpus, "corpus");
        require(out, "out");
        std::map<std::string, std::string> questions;
        const std::string issues_path = optional_string(issues_jsonl_path);
        if (!issues_path.empty()) {
            for (const stancelab::Issue& issue : stancelab::read_issues_jsonl(issues_path)) {
                questions[issue.issue_id] = issue.question_text;
            }
        }
        stancelab::PairBuildResult result = stancelab::build_preference_triples(
            corpus->comments, questions, pairs_per_chosen, seed);
        if (skipped != nullptr) *skipped = static_cast<int>(result.skipped);
        *out = new slb_triples{std::move(result.triples)};
    });
}

slb_status slb_triples_save_jsonl(const slb_triples* triples, const char* path) {
    return guarded([&] {
        require(triples, "triples");
        stancelab::save_triples_jsonl(required_string(path, "path"), triples->triples);
    });
}

slb_status slb_triples_load_jsonl(const char* path, slb_triples** out) {
    return guarded([&] {
        require(out, "out");
        *out = new slb_triples{stancelab::load_triples_jsonl(required_string(path, "path"))};
    });
}

int slb_triples_size(const slb_triples* triples) {
    return triples == nullptr ? -1 : static_cast<int>(triples->triples.size());
}

void slb_triples_free(slb_triples* triples) { delete triples; }

/* ------------------------------------------------------------------ */
/* Model                                                              */
/* ------------------------------------------------------------------ */

slb_status slb_model_new(const slb_triples* triples, int vocab_size, int layers, int dim,
                         int heads, int context, uint64_t seed, slb_model** out) {
    return guarded([&] {
        require(triples, "triples");
        require(out, "out");
        std::vector<std::string> texts;
        texts.reserve(triples->triples.size() * 4);
        for (const stancelab::PreferenceTriple& t : triples->triples) {
            texts.push_back(t.instruction.system_text);
            texts.push_back(t.instruction.user_text);
            texts.push_back(t.chosen.text);
            texts.push_back(t.rejected.text);
        }
        stancelab::Vocab vocab = stancelab::Vocab::build(texts, vocab_size);
        stancelab::ModelDims dims{layers, dim, heads, context, vocab.size()};
        *out = new slb_model{stancelab::LMModel::create(std::move(vocab), dims, seed)};
    });
}

slb_status slb_model_load(const char* path, slb_model** out) {
    return guarded([&] {
        require(out, "out");
        *out = new slb_model{stancelab::LMModel::load(required_string(path, "path"))};
    });
}

slb_status slb_model_save(const slb_model* model, const char* path) {
    return guarded([&] {
        require(model, "model");
        model->model.save(required_string(path, "path"));
    });
}

slb_status slb_model_info_json(const slb_model* model, char** out_json) {
    return guarded([&] {
        require(model, "model");
        require(out_json, "out_json");
        const nlohmann::json info{
            {"dims", model->model.dims.to_json()},
            {"vocab_size", model->model.vocab.size()},
            {"parameter_count", static_cast<std::int64_t>(model->model.params.parameter_count())}};
        *out_json = dup_string(info.dump(2));
    });
}

void slb_model_free(slb_model* model) { delete model; }

/* ------------------------------------------------------------------ */
/* Training and scoring                                               */
/* ------------------------------------------------------------------ */

slb_status slb_train(slb_model* model, const slb_triples* triples, const char* config_json,
                     char** out_log_jsonl) {
    return guarded([&] {
        require(model, "model");
        require(triples, "triples");
        const stancelab::TrainConfig config = parse_train_config(config_json);
        stancelab::TrainResult result =
            stancelab::train(triples->triples, model->model.vocab, model->model.params, config);
        model->model.params = std::move(result.params);
        if (out_log_jsonl != nullptr) {
            *out_log_jsonl = dup_string(stancelab::train_log_to_jsonl(result.log));
        }
    });
}

slb_status slb_evaluate_loss(const slb_model* model, const slb_triples* triples,
                             const char* objective, double lambda, double* out_total,
                             double* out_sft, double* out_or_term) {
    return guarded([&] {
        require(model, "model");
        require(triples, "triples");
        const stancelab::Objective obj =
            stancelab::parse_objective(required_string(objective, "objective"));
        const stancelab::LossBreakdown loss = stancelab::evaluate_loss(
            model->model.params, model->model.vocab, triples->triples, obj, lambda);
        if (out_total != nullptr) *out_total = loss.total;
        if (out_sft != nullptr) *out_sft = loss.sft;
        if (out_or_term != nullptr) *out_or_term = loss.or_term;
    });
}

slb_status slb_generate(const slb_model* model, const char* party, const char* language,
                        const char* question, const char* gen_config_json, char** out_text) {
    return guarded([&] {
        require(model, "model");
        require(out_text, "out_text");
        const stancelab::Language lang =
            stancelab::parse_language(required_string(language, "language"));
        const stancelab::Instruction instruction = stancelab::render_instruction(
            required_string(party, "party"), lang, required_string(question, "question"));
        const std::vector<int> prompt = stancelab::encode_prompt(model->model.vocab, instruction);
        const std::vector<int> ids =
            stancelab::sample(model->model.params, prompt, parse_gen_config(gen_config_json));
        *out_text = dup_string(model->model.vocab.decode(ids));
    });
}

slb_status slb_score_text(const slb_model* model, const char* party, const char* language,
                          const char* question, const char* text, double* out_sum_logprob,
                          double* out_mean_logprob, int* out_length) {
    return guarded([&] {
        require(model, "model");
        const stancelab::Language lang =
            stancelab::parse_language(required_string(language, "language"));
        const stancelab::Instruction instruction = stancelab::render_instruction(
            required_string(party, "party"), lang, required_string(question, "question"));
        const std::vector<int> prompt = stancelab::encode_prompt(model->model.vocab, instruction);
        const std::vector<int> target =
            stancelab::encode_target(model->model.vocab, required_string(text, "text"));
        const stancelab::SequenceScore score =
            stancelab::score_sequence(model->model.params, prompt, target);
        if (out_sum_logprob != nullptr) *out_sum_logprob = score.sum_logprob;
        if (out_mean_logprob != nullptr) *out_mean_logprob = score.mean_logprob;
        if (out_length != nullptr) *out_length = score.length;
    });
}

/* ------------------------------------------------------------------ */
/* Evaluation                                                         */
/* ------------------------------------------------------------------ */

slb_status slb_eval_diversity(const char* generations_jsonl, char** out_report_json,
                              char** out_csv) {
    return guarded([&] {
        require(out_report_json, "out_report_json");
        const stancelab::DiversityReport report = stancelab::diversity_report(
            stancelab::load_generations_jsonl(required_string(generations_jsonl,
                                                              "generations_jsonl")));
        if (out_csv != nullptr) *out_csv = dup_string(report.to_csv());
        *out_report_json = dup_string(report.to_json().dump(2));
    });
}

slb_status slb_eval_mauve(const char* generations_jsonl, const char* refs_jsonl,
                          const char* featurizer, int runs, uint64_t seed,
                          const char* sidecar_path, char** out_report_json, char** out_csv) {
    return guarded([&] {
        require(out_report_json, "out_report_json");
        const std::vector<stancelab::GenerationRecord> generations =
            stancelab::load_generations_jsonl(
                required_string(generations_jsonl, "generations_jsonl"));
        std::vector<std::string> model_texts;
        model_texts.reserve(generations.size());
        for (const auto& g : generations) model_texts.push_back(g.text);
        const std::vector<std::string> ref_texts =
            texts_with_text_field(required_string(refs_jsonl, "refs_jsonl"));
        const stancelab::FeaturizerKind kind =
            stancelab::parse_featurizer(required_string(featurizer, "featurizer"));
        const stancelab::MauveReport report = stancelab::mauve_report(
            model_texts, ref_texts, kind, runs, seed, optional_string(sidecar_path));
        if (out_csv != nullptr) *out_csv = dup_string(report.to_csv());
        *out_report_json = dup_string(report.to_json().dump(2));
    });
}

slb_status slb_eval_kappa(const char* annotations_jsonl, int discard_ties,
                          char** out_report_json) {
    return guarded([&] {
        require(out_report_json, "out_report_json");
        const stancelab::KappaReport report = stancelab::kappa_from_annotations(
            stancelab::load_annotations_jsonl(
                required_string(annotations_jsonl, "annotations_jsonl")),
            discard_ties != 0);
        *out_report_json = dup_string(report.to_json().dump(2));
    });
}

slb_status slb_eval_win_rates(const char* comparisons_jsonl, const char* tie_policy,
                              char** out_report_json, char** out_csv) {
    return guarded([&] {
        require(out_report_json, "out_report_json");
        const stancelab::WinRateReport report = stancelab::win_rates(
            stancelab::load_comparisons_jsonl(
                required_string(comparisons_jsonl, "comparisons_jsonl")),
            stancelab::parse_tie_policy(required_string(tie_policy, "tie_policy")));
        if (out_csv != nullptr) *out_csv = dup_string(report.to_csv());
        *out_report_json = dup_string(report.to_json().dump(2));
    });
}

/* ------------------------------------------------------------------ */
/* Survey, matching, overview                                         */
/* ------------------------------------------------------------------ */

slb_status slb_survey(const slb_model* model, const char* questions_jsonl,
                      char** out_answers_jsonl) {
    return guarded([&] {
        require(model, "model");
        require(out_answers_jsonl, "out_answers_jsonl");
        const std::vector<stancelab::SurveyAnswer> answers = stancelab::take_survey(
            model->model.params, model->model.vocab,
            stancelab::load_survey_questions_jsonl(
                required_string(questions_jsonl, "questions_jsonl")));
        std::string lines;
        for (const auto& a : answers) lines += a.to_json().dump() + "\n";
        *out_answers_jsonl = dup_string(lines);
    });
}

slb_status slb_match(const char* user_answers_jsonl, const char* candidates_jsonl,
                     char** out_match_json) {
    return guarded([&] {
        require(out_match_json, "out_match_json");
        const std::vector<stancelab::SurveyAnswer> user = stancelab::load_survey_answers_jsonl(
            required_string(user_answers_jsonl, "user_answers_jsonl"));
        const std::string cand_path = required_string(candidates_jsonl, "candidates_jsonl");
        std::map<std::string, std::vector<stancelab::SurveyAnswer>> candidates;
        const std::vector<nlohmann::json> records = stancelab::read_jsonl(cand_path);
        for (std::size_t i = 0; i < records.size(); ++i) {
            nlohmann::json record = records[i];
            const auto it = record.find("candidate_id");
            if (it == record.end() || !it->is_string()) {
                stancelab::raise(ErrorKind::Parse,
                                 cand_path + ": record " + std::to_string(i + 1) +
                                     " has no string \"candidate_id\" field");
            }
            const std::string candidate_id = it->get<std::string>();
            record.erase("candidate_id");
            candidates[candidate_id].push_back(stancelab::SurveyAnswer::from_json(record, i + 1));
        }
        const stancelab::MatchResult result = stancelab::match_candidates(user, candidates);
        *out_match_json = dup_string(result.to_json().dump(2));
    });
}

slb_status slb_party_answers(const slb_model* model, const char* question, const char* parties,
                             const char* language, const char* gen_config_json,
                             char** out_answer_set_json) {
    return guarded([&] {
        require(model, "model");
        require(out_answer_set_json, "out_answer_set_json");
        std::vector<std::string> party_list;
        const std::string parties_text = required_string(parties, "parties");
        std::string current;
        for (const char c : parties_text) {
            if (c == ',') {
                party_list.push_back(stancelab::trim(current));
                current.clear();
            } else {
                current += c;
            }
        }
        party_list.push_back(stancelab::trim(current));
        const stancelab::PartyAnswerSet set = stancelab::generate_party_answers(
            model->model.params, model->model.vocab, required_string(question, "question"),
            party_list, stancelab::parse_language(required_string(language, "language")),
            parse_gen_config(gen_config_json));
        *out_answer_set_json = dup_string(set.to_json().dump(2));
    });
}

slb_status slb_synthesize_overview(const char* summarizer_config_json,
                                   const char* answer_set_json, char** out_overview,
                                   char** out_provenance_json) {
    return guarded([&] {
        require(out_overview, "out_overview");
        const stancelab::SummarizerConfig config = stancelab::SummarizerConfig::from_json(
            parse_json_object(required_string(summarizer_config_json, "summarizer_config_json"),
                              "summarizer config"));
        const stancelab::PartyAnswerSet answers = stancelab::PartyAnswerSet::from_json(
            parse_json_object(required_string(answer_set_json, "answer_set_json"),
                              "party answer set"));
        const std::string overview = stancelab::synthesize_overview(config, answers);
        if (out_provenance_json != nullptr) {
            *out_provenance_json =
                dup_string(stancelab::overview_provenance(config, answers, overview).dump(2));
        }
        *out_overview = dup_string(overview);
    });
}

/* ------------------------------------------------------------------ */
/* Toy study                                                          */
/* ------------------------------------------------------------------ */

slb_status slb_run_toy_study(const char* options_json, char** out_result_json) {
    return guarded([&] {
        require(out_result_json, "out_result_json");
        stancelab::ToyStudyOptions options;
        const std::string text = optional_string(options_json);
        if (!text.empty()) {
            options = stancelab::ToyStudyOptions::from_json(
                parse_json_object(text, "toy study options"));
        }
        const stancelab::ToyStudyResult result = stancelab::run_toy_study(options);
        *out_result_json = dup_string(result.to_json().dump(2));
    });
}

}  // extern "C"
