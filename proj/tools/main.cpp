// stancelab command-line tool.  All pipeline work goes through the C API in
// stancelab.h; this file only parses flags, moves bytes between files, and
// writes the per-run manifest.
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "stancelab.h"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CliError {
    int code;  // 1 = module error, 2 = config error
    std::string message;
};

[[noreturn]] void fail(int code, const std::string& message) { throw CliError{code, message}; }

void check(slb_status status) {
    if (status == SLB_OK) return;
    fail(status == SLB_ERR_CONFIG ? 2 : 1, slb_last_error());
}

// RAII wrappers over the C handles.
struct SlbStringDeleter {
    void operator()(char* p) const { slb_string_free(p); }
};
using SlbString = std::unique_ptr<char, SlbStringDeleter>;

struct CorpusDeleter {
    void operator()(slb_corpus* p) const { slb_corpus_free(p); }
};
using CorpusPtr = std::unique_ptr<slb_corpus, CorpusDeleter>;

struct SplitDeleter {
    void operator()(slb_split* p) const { slb_split_free(p); }
};
using SplitPtr = std::unique_ptr<slb_split, SplitDeleter>;

struct TriplesDeleter {
    void operator()(slb_triples* p) const { slb_triples_free(p); }
};
using TriplesPtr = std::unique_ptr<slb_triples, TriplesDeleter>;

struct ModelDeleter {
    void operator()(slb_model* p) const { slb_model_free(p); }
};
using ModelPtr = std::unique_ptr<slb_model, ModelDeleter>;

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(1, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(1, "cannot open " + path + " for writing");
    out << content;
    out.flush();
    if (!out) fail(1, "failed while writing " + path);
}

std::string hash_file_fnv1a64(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(1, "cannot open " + path + " for hashing");
    std::uint64_t h = 14695981039346656037ULL;
    char buf[8192];
    while (in) {
        in.read(buf, sizeof(buf));
        const std::streamsize n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
    }
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

json parse_json(const std::string& text, const std::string& what) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) fail(1, what + ": invalid JSON");
    return j;
}

std::string format_double(double value, int digits = 6) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, value);
    return buf;
}

std::string default_out_dir() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y%m%dT%H%M%SZ", &tm);
    std::string base = std::string("runs/") + stamp;
    std::string dir = base;
    int suffix = 1;
    while (fs::exists(dir)) dir = base + "-" + std::to_string(suffix++);
    return dir;
}

// Flags shared by every subcommand.
struct CommonOpts {
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_given = false;
};

void add_common(CLI::App* cmd, CommonOpts& common) {
    cmd->add_option("--out", common.out_dir,
                    "Output directory (default: runs/<UTC timestamp>)");
    cmd->add_option("--seed", common.seed, "Random seed")
        ->each([&common](const std::string&) { common.seed_given = true; });
}

// Tracks inputs/outputs of one subcommand run and writes the manifest.
class Run {
public:
    Run(std::string command, const CommonOpts& common)
        : command_(std::move(command)),
          out_dir_(common.out_dir.empty() ? default_out_dir() : common.out_dir),
          seed_(common.seed),
          seed_given_(common.seed_given) {
        std::error_code ec;
        fs::create_directories(out_dir_, ec);
        if (ec) fail(1, "cannot create output directory " + out_dir_ + ": " + ec.message());
    }

    const std::string& out_dir() const { return out_dir_; }
    std::uint64_t seed() const { return seed_; }

    void add_input(const std::string& label, const std::string& path) {
        inputs_.push_back(json{{"label", label}, {"path", path},
                               {"fnv1a64", hash_file_fnv1a64(path)}});
    }

    std::string out_path(const std::string& name) {
        outputs_.push_back(name);
        return (fs::path(out_dir_) / name).string();
    }

    // Writes manifest.json and prints the one-line summary.
    void finish(const std::string& summary) {
        json manifest{{"command", command_}, {"inputs", inputs_}, {"outputs", outputs_}};
        if (seed_given_) manifest["seed"] = seed_;
        write_text_file((fs::path(out_dir_) / "manifest.json").string(),
                        manifest.dump(2) + "\n");
        std::cout << summary << "\n";
    }

private:
    std::string command_;
    std::string out_dir_;
    std::uint64_t seed_;
    bool seed_given_;
    std::vector<json> inputs_;
    std::vector<std::string> outputs_;
};

CorpusPtr load_corpus(Run& run, const std::string& path, const std::string& format) {
    run.add_input("corpus", path);
    slb_corpus* corpus = nullptr;
    int excluded = 0;
    check(slb_corpus_ingest(path.c_str(), format.c_str(), &corpus, &excluded));
    return CorpusPtr(corpus);
}

ModelPtr load_model(Run& run, const std::string& path) {
    run.add_input("model", path);
    slb_model* model = nullptr;
    check(slb_model_load(path.c_str(), &model));
    return ModelPtr(model);
}

json gen_config_json(double temperature, int top_k, int max_tokens, std::uint64_t seed) {
    return json{{"temperature", temperature},
                {"top_k", top_k},
                {"max_tokens", max_tokens},
                {"seed", seed}};
}

// ------------------------------------------------------------------ ingest

struct IngestOpts {
    CommonOpts common;
    std::string input;
    std::string format = "jsonl";
};

void run_ingest(const IngestOpts& o) {
    Run run("ingest", o.common);
    run.add_input("raw", o.input);
    slb_corpus* corpus = nullptr;
    int excluded = 0;
    check(slb_corpus_ingest(o.input.c_str(), o.format.c_str(), &corpus, &excluded));
    CorpusPtr guard(corpus);
    const std::string out = run.out_path("corpus.jsonl");
    check(slb_corpus_save_jsonl(corpus, out.c_str()));
    run.finish("ingest: kept " + std::to_string(slb_corpus_size(corpus)) + " comments, excluded " +
               std::to_string(excluded) + " short -> " + out);
}

// ------------------------------------------------------------------- stats

struct StatsOpts {
    CommonOpts common;
    std::string input;
    std::string split_path;
};

void run_stats(const StatsOpts& o) {
    Run run("stats", o.common);
    CorpusPtr corpus = load_corpus(run, o.input, "jsonl");
    SplitPtr split;
    if (!o.split_path.empty()) {
        run.add_input("split", o.split_path);
        slb_split* raw = nullptr;
        check(slb_split_load_json(o.split_path.c_str(), &raw));
        split.reset(raw);
    }
    SlbString stats_json, stats_table;
    {
        char* raw = nullptr;
        check(slb_corpus_stats_json(corpus.get(), split.get(), &raw));
        stats_json.reset(raw);
        raw = nullptr;
        check(slb_corpus_stats_table(corpus.get(), split.get(), &raw));
        stats_table.reset(raw);
    }
    write_text_file(run.out_path("stats.json"), std::string(stats_json.get()) + "\n");
    write_text_file(run.out_path("stats.txt"), stats_table.get());
    const json j = parse_json(stats_json.get(), "stats report");
    run.finish("stats: " + std::to_string(j.value("total_comments", 0)) + " comments across " +
               std::to_string(j.value("total_issues", 0)) + " issues -> " + run.out_dir());
}

// ------------------------------------------------------------------- split

struct SplitOpts {
    CommonOpts common;
    std::string input;
    double dev_frac = 0.1;
    double test_frac = 0.1;
};

void run_split(const SplitOpts& o) {
    Run run("split", o.common);
    CorpusPtr corpus = load_corpus(run, o.input, "jsonl");
    slb_split* raw = nullptr;
    check(slb_split_by_issue(corpus.get(), o.dev_frac, o.test_frac, run.seed(), &raw));
    SplitPtr split(raw);
    const std::string out = run.out_path("split.json");
    check(slb_split_save_json(split.get(), out.c_str()));
    const json j = parse_json(read_text_file(out), "split file");
    run.finish("split: train/dev/test issues = " + std::to_string(j["train"].size()) + "/" +
               std::to_string(j["dev"].size()) + "/" + std::to_string(j["test"].size()) + " -> " +
               out);
}

// -------------------------------------------------------------- build-pairs

struct BuildPairsOpts {
    CommonOpts common;
    std::string input;
    std::string issues;
    int pairs_per_chosen = 2;
};

void run_build_pairs(const BuildPairsOpts& o) {
    Run run("build-pairs", o.common);
    CorpusPtr corpus = load_corpus(run, o.input, "jsonl");
    if (!o.issues.empty()) run.add_input("issues", o.issues);
    slb_triples* raw = nullptr;
    int skipped = 0;
    check(slb_triples_build(corpus.get(), o.issues.empty() ? nullptr : o.issues.c_str(),
                            o.pairs_per_chosen, run.seed(), &raw, &skipped));
    TriplesPtr triples(raw);
    const std::string out = run.out_path("pairs.jsonl");
    check(slb_triples_save_jsonl(triples.get(), out.c_str()));
    run.finish("build-pairs: " + std::to_string(slb_triples_size(triples.get())) +
               " preference triples (" + std::to_string(skipped) + " comments skipped) -> " + out);
}

// ------------------------------------------------------------------- train

struct TrainOpts {
    CommonOpts common;
    std::string pairs;
    std::string init_model;
    int vocab_size = 4096;
    int layers = 2;
    int dim = 64;
    int heads = 4;
    int context = 256;
    std::string objective = "orpo";
    double lambda = 0.1;
    double learning_rate = 3e-3;
    int epochs = 10;
    int batch_size = 32;
    std::string optimizer = "adam";
    double grad_clip_norm = 1.0;
};

void run_train(const TrainOpts& o) {
    Run run("train", o.common);
    run.add_input("pairs", o.pairs);
    slb_triples* traw = nullptr;
    check(slb_triples_load_jsonl(o.pairs.c_str(), &traw));
    TriplesPtr triples(traw);

    ModelPtr model;
    if (!o.init_model.empty()) {
        model = load_model(run, o.init_model);
    } else {
        slb_model* mraw = nullptr;
        check(slb_model_new(triples.get(), o.vocab_size, o.layers, o.dim, o.heads, o.context,
                            run.seed(), &mraw));
        model.reset(mraw);
    }

    const std::string checkpoint = run.out_path("checkpoint.json");
    const json config{{"objective", o.objective},
                      {"lambda", o.lambda},
                      {"learning_rate", o.learning_rate},
                      {"epochs", o.epochs},
                      {"batch_size", o.batch_size},
                      {"seed", run.seed()},
                      {"optimizer", o.optimizer},
                      {"grad_clip_norm", o.grad_clip_norm},
                      {"checkpoint_path", checkpoint}};
    char* log_raw = nullptr;
    check(slb_train(model.get(), triples.get(), config.dump().c_str(), &log_raw));
    SlbString log(log_raw);

    const std::string model_out = run.out_path("model.json");
    check(slb_model_save(model.get(), model_out.c_str()));
    write_text_file(run.out_path("train_log.jsonl"), log.get());

    // Last log line carries the final loss.
    std::string last_line;
    {
        std::istringstream lines(log.get());
        std::string line;
        while (std::getline(lines, line)) {
            if (!line.empty()) last_line = line;
        }
    }
    std::string summary = "train: " + o.objective + ", " + std::to_string(o.epochs) + " epochs";
    if (!last_line.empty()) {
        const json j = parse_json(last_line, "train log line");
        summary += ", final loss " + format_double(j.value("total", 0.0));
    }
    run.finish(summary + " -> " + model_out);
}

// ---------------------------------------------------------------- generate

struct GenerateOpts {
    CommonOpts common;
    std::string model;
    std::string party;
    std::string question;
    std::string language = "de";
    std::string issues;   // batch mode: issues JSONL
    std::string parties;  // batch mode: comma-separated party labels
    std::string tag = "model";
    double temperature = 0.0;
    int top_k = 0;
    int max_tokens = 64;
};

void run_generate(const GenerateOpts& o) {
    Run run("generate", o.common);
    ModelPtr model = load_model(run, o.model);
    const bool batch = !o.issues.empty();
    if (batch && o.parties.empty()) {
        fail(2, "generate: --parties is required together with --issues");
    }
    if (!batch && (o.party.empty() || o.question.empty())) {
        fail(2, "generate: either --issues/--parties or --party/--question must be given");
    }

    if (!batch) {
        const json cfg = gen_config_json(o.temperature, o.top_k, o.max_tokens, run.seed());
        char* raw = nullptr;
        check(slb_generate(model.get(), o.party.c_str(), o.language.c_str(), o.question.c_str(),
                           cfg.dump().c_str(), &raw));
        SlbString text(raw);
        const std::string out = run.out_path("generation.txt");
        write_text_file(out, std::string(text.get()) + "\n");
        run.finish(std::string("generate: ") + o.party + ": " + text.get());
        return;
    }

    run.add_input("issues", o.issues);
    std::vector<std::string> parties;
    {
        std::istringstream ss(o.parties);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (!item.empty()) parties.push_back(item);
        }
        if (parties.empty()) fail(2, "generate: --parties has no labels");
    }

    std::vector<std::pair<std::string, std::string>> issues;  // (issue_id, question)
    {
        std::istringstream lines(read_text_file(o.issues));
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(lines, line)) {
            ++line_no;
            if (line.empty()) continue;
            const json j = parse_json(line, o.issues + " line " + std::to_string(line_no));
            if (!j.contains("issue_id") || !j.contains("question_text")) {
                fail(1, o.issues + " line " + std::to_string(line_no) +
                            ": expected issue_id and question_text");
            }
            issues.emplace_back(j["issue_id"].get<std::string>(),
                                j["question_text"].get<std::string>());
        }
    }

    std::string jsonl;
    std::uint64_t offset = 0;
    for (const auto& [issue_id, question] : issues) {
        for (const std::string& party : parties) {
            const json cfg =
                gen_config_json(o.temperature, o.top_k, o.max_tokens, run.seed() + offset);
            ++offset;
            char* raw = nullptr;
            check(slb_generate(model.get(), party.c_str(), o.language.c_str(), question.c_str(),
                               cfg.dump().c_str(), &raw));
            SlbString text(raw);
            std::string body = text.get();
            if (body.empty()) body = "(empty)";
            jsonl += json{{"issue_id", issue_id},
                          {"party", party},
                          {"language", o.language},
                          {"text", body},
                          {"model_tag", o.tag}}
                         .dump() +
                     "\n";
        }
    }
    const std::string out = run.out_path("generations.jsonl");
    write_text_file(out, jsonl);
    run.finish("generate: " + std::to_string(issues.size() * parties.size()) +
               " generations (tag " + o.tag + ") -> " + out);
}

// ---------------------------------------------------------- eval-diversity

struct EvalDiversityOpts {
    CommonOpts common;
    std::string generations;
};

void run_eval_diversity(const EvalDiversityOpts& o) {
    Run run("eval-diversity", o.common);
    run.add_input("generations", o.generations);
    char *json_raw = nullptr, *csv_raw = nullptr;
    check(slb_eval_diversity(o.generations.c_str(), &json_raw, &csv_raw));
    SlbString report_json(json_raw), report_csv(csv_raw);
    write_text_file(run.out_path("diversity.json"), std::string(report_json.get()) + "\n");
    const std::string csv_path = run.out_path("diversity.csv");
    write_text_file(csv_path, report_csv.get());
    const json j = parse_json(report_json.get(), "diversity report");
    run.finish("eval-diversity: overall mean pairwise Jaccard " +
               format_double(j.value("overall_mean", 0.0)) + " -> " + csv_path);
}

// -------------------------------------------------------------- eval-mauve

struct EvalMauveOpts {
    CommonOpts common;
    std::string generations;
    std::string refs;
    std::string featurizer = "hashed_ngram";
    std::string sidecar;
    int runs = 5;
};

void run_eval_mauve(const EvalMauveOpts& o) {
    Run run("eval-mauve", o.common);
    run.add_input("generations", o.generations);
    run.add_input("refs", o.refs);
    if (!o.sidecar.empty()) run.add_input("sidecar", o.sidecar);
    char *json_raw = nullptr, *csv_raw = nullptr;
    check(slb_eval_mauve(o.generations.c_str(), o.refs.c_str(), o.featurizer.c_str(), o.runs,
                         run.seed(), o.sidecar.empty() ? nullptr : o.sidecar.c_str(), &json_raw,
                         &csv_raw));
    SlbString report_json(json_raw), report_csv(csv_raw);
    write_text_file(run.out_path("mauve.json"), std::string(report_json.get()) + "\n");
    write_text_file(run.out_path("mauve.csv"), report_csv.get());
    const json j = parse_json(report_json.get(), "mauve report");
    const std::size_t run_count = j.contains("runs") && j["runs"].is_array() ? j["runs"].size() : 0;
    run.finish("eval-mauve: " + format_double(j.value("mean", 0.0)) + " +/- " +
               format_double(j.value("ci95_halfwidth", 0.0)) + " over " +
               std::to_string(run_count) + " runs -> " + run.out_dir());
}

// ------------------------------------------------------------------- kappa

struct KappaOpts {
    CommonOpts common;
    std::string annotations;
    bool discard_ties = false;
};

void run_kappa(const KappaOpts& o) {
    Run run("kappa", o.common);
    run.add_input("annotations", o.annotations);
    char* raw = nullptr;
    check(slb_eval_kappa(o.annotations.c_str(), o.discard_ties ? 1 : 0, &raw));
    SlbString report(raw);
    write_text_file(run.out_path("kappa.json"), std::string(report.get()) + "\n");
    const json j = parse_json(report.get(), "kappa report");
    run.finish("kappa: " + format_double(j.value("kappa", 0.0), 4) + " over " +
               std::to_string(j.value("items_used", 0)) + " items (" +
               std::to_string(j.value("items_discarded", 0)) + " discarded) -> " + run.out_dir());
}

// --------------------------------------------------------------- win-rates

struct WinRatesOpts {
    CommonOpts common;
    std::string comparisons;
    std::string tie_policy = "half";
};

void run_win_rates(const WinRatesOpts& o) {
    Run run("win-rates", o.common);
    run.add_input("comparisons", o.comparisons);
    char *json_raw = nullptr, *csv_raw = nullptr;
    check(slb_eval_win_rates(o.comparisons.c_str(), o.tie_policy.c_str(), &json_raw, &csv_raw));
    SlbString report_json(json_raw), report_csv(csv_raw);
    write_text_file(run.out_path("win_rates.json"), std::string(report_json.get()) + "\n");
    write_text_file(run.out_path("win_rates.csv"), report_csv.get());
    const json j = parse_json(report_json.get(), "win-rate report");
    std::string parts;
    for (const auto& e : j["entries"]) {
        if (!parts.empty()) parts += ", ";
        parts += e["model"].get<std::string>() + "=";
        parts += e["rate"].is_null() ? "n/a" : format_double(e["rate"].get<double>(), 4);
    }
    run.finish("win-rates (" + o.tie_policy + "): " + parts + " -> " + run.out_dir());
}

// ------------------------------------------------------------------ survey

struct SurveyOpts {
    CommonOpts common;
    std::string model;
    std::string questions;
};

void run_survey(const SurveyOpts& o) {
    Run run("survey", o.common);
    ModelPtr model = load_model(run, o.model);
    run.add_input("questions", o.questions);
    char* raw = nullptr;
    check(slb_survey(model.get(), o.questions.c_str(), &raw));
    SlbString answers(raw);
    const std::string out = run.out_path("survey_answers.jsonl");
    write_text_file(out, answers.get());
    std::size_t count = 0;
    for (const char* p = answers.get(); *p; ++p) {
        if (*p == '\n') ++count;
    }
    run.finish("survey: answered " + std::to_string(count) + " questions -> " + out);
}

// ------------------------------------------------------------------- match

struct MatchOpts {
    CommonOpts common;
    std::string user;
    std::string candidates;
};

void run_match(const MatchOpts& o) {
    Run run("match", o.common);
    run.add_input("user", o.user);
    run.add_input("candidates", o.candidates);
    char* raw = nullptr;
    check(slb_match(o.user.c_str(), o.candidates.c_str(), &raw));
    SlbString result(raw);
    const std::string out = run.out_path("match.json");
    write_text_file(out, std::string(result.get()) + "\n");
    const json j = parse_json(result.get(), "match result");
    std::string summary = "match: no ranked candidates";
    if (!j["ranked"].empty()) {
        const auto& top = j["ranked"][0];
        summary = "match: top candidate " + top["candidate_id"].get<std::string>() + " (overlap " +
                  format_double(top["overlap"].get<double>(), 4) + ")";
    }
    run.finish(summary + " -> " + out);
}

// ---------------------------------------------------------------- overview

struct OverviewOpts {
    CommonOpts common;
    std::string answers;  // pre-generated party-answer-set JSON
    std::string model;    // or generate answers from a model
    std::string question;
    std::string parties;
    std::string language = "de";
    std::string summarizer_config;
    double temperature = 0.0;
    int top_k = 0;
    int max_tokens = 64;
};

void run_overview(const OverviewOpts& o) {
    Run run("overview", o.common);
    run.add_input("summarizer-config", o.summarizer_config);
    const std::string config_text = read_text_file(o.summarizer_config);

    std::string answer_set;
    if (!o.answers.empty()) {
        run.add_input("answers", o.answers);
        answer_set = read_text_file(o.answers);
    } else {
        if (o.model.empty() || o.question.empty() || o.parties.empty()) {
            fail(2, "overview: either --answers or --model/--question/--parties must be given");
        }
        ModelPtr model = load_model(run, o.model);
        const json cfg = gen_config_json(o.temperature, o.top_k, o.max_tokens, run.seed());
        char* raw = nullptr;
        check(slb_party_answers(model.get(), o.question.c_str(), o.parties.c_str(),
                                o.language.c_str(), cfg.dump().c_str(), &raw));
        SlbString answers(raw);
        answer_set = answers.get();
        write_text_file(run.out_path("party_answers.json"), answer_set + "\n");
    }

    char *overview_raw = nullptr, *provenance_raw = nullptr;
    check(slb_synthesize_overview(config_text.c_str(), answer_set.c_str(), &overview_raw,
                                  &provenance_raw));
    SlbString overview(overview_raw), provenance(provenance_raw);
    const std::string out = run.out_path("overview.txt");
    write_text_file(out, std::string(overview.get()) + "\n");
    write_text_file(run.out_path("provenance.json"), std::string(provenance.get()) + "\n");
    run.finish("overview: synthesized " + std::to_string(std::string(overview.get()).size()) +
               " characters -> " + out);
}

// ----------------------------------------------------------- run-toy-study

struct ToyStudyOpts {
    CommonOpts common;
    int epochs = 25;
    double learning_rate = 3e-3;
    double lambda = 1.0;
    int batch_size = 16;
    int pairs_per_chosen = 2;
    int dim = 32;
    int layers = 2;
    int heads = 2;
    int context = 128;
    int max_tokens = 12;
    int vocab_size = 512;
    int mauve_runs = 5;
};

void run_toy_study_cmd(const ToyStudyOpts& o) {
    CommonOpts common = o.common;
    if (!common.seed_given) common.seed = 1;
    Run run("run-toy-study", common);
    const json options{{"seed", run.seed()},
                       {"epochs", o.epochs},
                       {"learning_rate", o.learning_rate},
                       {"lambda", o.lambda},
                       {"batch_size", o.batch_size},
                       {"pairs_per_chosen", o.pairs_per_chosen},
                       {"dim", o.dim},
                       {"layers", o.layers},
                       {"heads", o.heads},
                       {"context", o.context},
                       {"max_tokens", o.max_tokens},
                       {"vocab_size", o.vocab_size},
                       {"mauve_runs", o.mauve_runs},
                       {"out_dir", run.out_dir()}};
    char* raw = nullptr;
    check(slb_run_toy_study(options.dump().c_str(), &raw));
    SlbString result(raw);
    // The library wrote toy_study.{csv,json}, the SVG charts, and the
    // per-model generation files; record them in the manifest.
    run.out_path("toy_study.csv");
    run.out_path("toy_study.json");
    run.out_path("jaccard.svg");
    run.out_path("mauve.svg");
    for (const char* tag : {"baseline", "sft", "orpo"}) {
        run.out_path(std::string("generations_") + tag + ".jsonl");
    }

    const json j = parse_json(result.get(), "toy study result");
    std::string rows;
    for (const auto& r : j["rows"]) {
        if (!rows.empty()) rows += ", ";
        rows += r["model"].get<std::string>() +
                ": jaccard=" + format_double(r["mean_jaccard"].get<double>(), 4) +
                " mauve=" + format_double(r["mauve_mean"].get<double>(), 4);
    }
    const bool gap_ok = j.value("jaccard_gap_ok", false);
    const bool order_ok = j.value("mauve_order_ok", false);
    run.finish("run-toy-study: " + rows + "; jaccard gap " +
               format_double(j.value("jaccard_gap", 0.0), 4) + " (ok=" +
               (gap_ok ? "yes" : "no") + "), mauve order ok=" + (order_ok ? "yes" : "no") +
               " -> " + run.out_dir());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stancelab: conditional-alignment laboratory pipeline"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Configuration file ([subcommand] sections; flags win)");

    auto ingest = std::make_shared<IngestOpts>();
    {
        CLI::App* cmd = app.add_subcommand("ingest", "Ingest and filter a comment corpus");
        add_common(cmd, ingest->common);
        cmd->add_option("--input", ingest->input, "Raw corpus file")->required();
        cmd->add_option("--format", ingest->format, "Input format: jsonl or csv")
            ->check(CLI::IsMember({"jsonl", "csv"}));
        cmd->callback([ingest] { run_ingest(*ingest); });
    }

    auto stats = std::make_shared<StatsOpts>();
    {
        CLI::App* cmd = app.add_subcommand("stats", "Corpus statistics per split");
        add_common(cmd, stats->common);
        cmd->add_option("--input", stats->input, "Corpus JSONL")->required();
        cmd->add_option("--split", stats->split_path, "Split JSON (optional)");
        cmd->callback([stats] { run_stats(*stats); });
    }

    auto split = std::make_shared<SplitOpts>();
    {
        CLI::App* cmd = app.add_subcommand("split", "Issue-level train/dev/test split");
        add_common(cmd, split->common);
        cmd->add_option("--input", split->input, "Corpus JSONL")->required();
        cmd->add_option("--dev-frac", split->dev_frac, "Dev fraction of eligible issues");
        cmd->add_option("--test-frac", split->test_frac, "Test fraction of eligible issues");
        cmd->callback([split] { run_split(*split); });
    }

    auto pairs = std::make_shared<BuildPairsOpts>();
    {
        CLI::App* cmd = app.add_subcommand("build-pairs", "Build preference triples");
        add_common(cmd, pairs->common);
        cmd->add_option("--input", pairs->input, "Corpus JSONL")->required();
        cmd->add_option("--issues", pairs->issues, "Issues JSONL with question texts");
        cmd->add_option("--pairs-per-chosen", pairs->pairs_per_chosen,
                        "Rejected samples per chosen comment");
        cmd->callback([pairs] { run_build_pairs(*pairs); });
    }

    auto train = std::make_shared<TrainOpts>();
    {
        CLI::App* cmd = app.add_subcommand("train", "Train a model on preference triples");
        add_common(cmd, train->common);
        cmd->add_option("--pairs", train->pairs, "Preference triples JSONL")->required();
        cmd->add_option("--init-model", train->init_model,
                        "Start from this model instead of a fresh one");
        cmd->add_option("--vocab-size", train->vocab_size, "Vocabulary cap for a fresh model");
        cmd->add_option("--layers", train->layers, "Transformer layers");
        cmd->add_option("--dim", train->dim, "Model width");
        cmd->add_option("--heads", train->heads, "Attention heads");
        cmd->add_option("--context", train->context, "Context window");
        cmd->add_option("--objective", train->objective, "Training objective: orpo or sft")
            ->check(CLI::IsMember({"orpo", "sft"}));
        cmd->add_option("--lambda", train->lambda, "Odds-ratio weight");
        cmd->add_option("--learning-rate", train->learning_rate, "Learning rate");
        cmd->add_option("--epochs", train->epochs, "Training epochs");
        cmd->add_option("--batch-size", train->batch_size, "Minibatch size");
        cmd->add_option("--optimizer", train->optimizer, "Optimizer: adam or sgd")
            ->check(CLI::IsMember({"adam", "sgd"}));
        cmd->add_option("--grad-clip-norm", train->grad_clip_norm,
                        "Global gradient-norm clip (0 disables)");
        cmd->callback([train] { run_train(*train); });
    }

    auto generate = std::make_shared<GenerateOpts>();
    {
        CLI::App* cmd = app.add_subcommand("generate", "Party-conditioned generation");
        add_common(cmd, generate->common);
        cmd->add_option("--model", generate->model, "Model JSON")->required();
        cmd->add_option("--party", generate->party, "Party label (single mode)");
        cmd->add_option("--question", generate->question, "Question text (single mode)");
        cmd->add_option("--language", generate->language, "Language: de, fr, or it")
            ->check(CLI::IsMember({"de", "fr", "it"}));
        cmd->add_option("--issues", generate->issues, "Issues JSONL (batch mode)");
        cmd->add_option("--parties", generate->parties,
                        "Comma-separated party labels (batch mode)");
        cmd->add_option("--tag", generate->tag, "model_tag for emitted records");
        cmd->add_option("--temperature", generate->temperature, "Sampling temperature (0=greedy)");
        cmd->add_option("--top-k", generate->top_k, "Top-k truncation (0=off)");
        cmd->add_option("--max-tokens", generate->max_tokens, "Maximum generated tokens");
        cmd->callback([generate] { run_generate(*generate); });
    }

    auto diversity = std::make_shared<EvalDiversityOpts>();
    {
        CLI::App* cmd = app.add_subcommand("eval-diversity", "Cross-party Jaccard diversity");
        add_common(cmd, diversity->common);
        cmd->add_option("--generations", diversity->generations, "Generations JSONL")->required();
        cmd->callback([diversity] { run_eval_diversity(*diversity); });
    }

    auto mauve = std::make_shared<EvalMauveOpts>();
    {
        CLI::App* cmd = app.add_subcommand("eval-mauve", "MAUVE against reference texts");
        add_common(cmd, mauve->common);
        cmd->add_option("--generations", mauve->generations, "Generations JSONL")->required();
        cmd->add_option("--refs", mauve->refs, "Reference JSONL (records with a text field)")
            ->required();
        cmd->add_option("--featurizer", mauve->featurizer,
                        "Featurizer: hashed_ngram or external_file")
            ->check(CLI::IsMember({"hashed_ngram", "external_file"}));
        cmd->add_option("--sidecar", mauve->sidecar, "Embedding sidecar for external_file");
        cmd->add_option("--runs", mauve->runs, "Resampling runs");
        cmd->callback([mauve] { run_eval_mauve(*mauve); });
    }

    auto kappa = std::make_shared<KappaOpts>();
    {
        CLI::App* cmd = app.add_subcommand("kappa", "Cohen's kappa from annotation records");
        add_common(cmd, kappa->common);
        cmd->add_option("--annotations", kappa->annotations, "Annotations JSONL")->required();
        cmd->add_flag("--discard-ties", kappa->discard_ties,
                      "Drop items labeled BOTH or NEITHER");
        cmd->callback([kappa] { run_kappa(*kappa); });
    }

    auto winrates = std::make_shared<WinRatesOpts>();
    {
        CLI::App* cmd = app.add_subcommand("win-rates", "Pairwise win rates");
        add_common(cmd, winrates->common);
        cmd->add_option("--comparisons", winrates->comparisons, "Comparisons JSONL")->required();
        cmd->add_option("--tie-policy", winrates->tie_policy, "Tie policy: half or discard")
            ->check(CLI::IsMember({"half", "discard"}));
        cmd->callback([winrates] { run_win_rates(*winrates); });
    }

    auto survey = std::make_shared<SurveyOpts>();
    {
        CLI::App* cmd = app.add_subcommand("survey", "Constrained four-option survey");
        add_common(cmd, survey->common);
        cmd->add_option("--model", survey->model, "Model JSON")->required();
        cmd->add_option("--questions", survey->questions, "Questions JSONL")->required();
        cmd->callback([survey] { run_survey(*survey); });
    }

    auto match = std::make_shared<MatchOpts>();
    {
        CLI::App* cmd = app.add_subcommand("match", "Rank candidates by answer overlap");
        add_common(cmd, match->common);
        cmd->add_option("--user", match->user, "User survey answers JSONL")->required();
        cmd->add_option("--candidates", match->candidates,
                        "Candidate answers JSONL (records carry candidate_id)")
            ->required();
        cmd->callback([match] { run_match(*match); });
    }

    auto overview = std::make_shared<OverviewOpts>();
    {
        CLI::App* cmd = app.add_subcommand("overview", "Balanced overview synthesis");
        add_common(cmd, overview->common);
        cmd->add_option("--summarizer-config", overview->summarizer_config,
                        "Summarizer config JSON file")
            ->required();
        cmd->add_option("--answers", overview->answers, "Party answer set JSON file");
        cmd->add_option("--model", overview->model, "Model JSON (to generate answers)");
        cmd->add_option("--question", overview->question, "Question text");
        cmd->add_option("--parties", overview->parties, "Comma-separated party labels");
        cmd->add_option("--language", overview->language, "Language: de, fr, or it")
            ->check(CLI::IsMember({"de", "fr", "it"}));
        cmd->add_option("--temperature", overview->temperature, "Sampling temperature");
        cmd->add_option("--top-k", overview->top_k, "Top-k truncation");
        cmd->add_option("--max-tokens", overview->max_tokens, "Maximum generated tokens");
        cmd->callback([overview] { run_overview(*overview); });
    }

    auto toy = std::make_shared<ToyStudyOpts>();
    {
        CLI::App* cmd = app.add_subcommand("run-toy-study",
                                           "Synthetic SFT-vs-ORPO directional experiment");
        add_common(cmd, toy->common);
        cmd->add_option("--epochs", toy->epochs, "Training epochs");
        cmd->add_option("--learning-rate", toy->learning_rate, "Learning rate");
        cmd->add_option("--lambda", toy->lambda, "Odds-ratio weight for the ORPO model");
        cmd->add_option("--batch-size", toy->batch_size, "Minibatch size");
        cmd->add_option("--pairs-per-chosen", toy->pairs_per_chosen,
                        "Rejected samples per chosen comment");
        cmd->add_option("--dim", toy->dim, "Model width");
        cmd->add_option("--layers", toy->layers, "Transformer layers");
        cmd->add_option("--heads", toy->heads, "Attention heads");
        cmd->add_option("--context", toy->context, "Context window");
        cmd->add_option("--max-tokens", toy->max_tokens, "Maximum generated tokens");
        cmd->add_option("--vocab-size", toy->vocab_size, "Vocabulary cap");
        cmd->add_option("--mauve-runs", toy->mauve_runs, "MAUVE resampling runs");
        cmd->callback([toy] { run_toy_study_cmd(*toy); });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const CliError& e) {
        std::cerr << "error: " << e.message << "\n";
        return e.code;
    }
    return 0;
}
