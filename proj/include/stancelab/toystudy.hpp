#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "stancelab/corpus.hpp"
#include "stancelab/eval.hpp"

namespace stancelab {

// Synthetic directional experiment: 3 parties x 10 issues x 2 languages with
// party-distinct stance vocabularies plus shared function words.  Trains an
// SFT-only and an ORPO model from the same initialization and compares both
// against the untrained baseline on cross-party Jaccard and MAUVE.
struct ToyStudyOptions {
    std::uint64_t seed = 1;
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
    std::string out_dir;  // when set, CSV/SVG/JSONL artifacts are written here

    void validate() const;
    nlohmann::json to_json() const;
    // Missing keys keep their defaults; unknown keys are rejected.
    static ToyStudyOptions from_json(const nlohmann::json& j);
};

inline constexpr const char* kToyPartyNames[3] = {"ALPHA", "BETA", "GAMMA"};
inline constexpr int kToyIssueCount = 10;

// Deterministic synthetic corpus (election year 2023 throughout).
std::vector<Comment> make_toy_corpus(std::uint64_t seed);
// Question text per toy issue id.
std::map<std::string, std::string> toy_issue_questions();

struct ToyModelRow {
    std::string tag;  // "baseline", "sft", "orpo"
    double mean_jaccard = 0.0;
    double mauve_mean = 0.0;
    double mauve_ci95 = 0.0;
};

struct ToyStudyResult {
    std::vector<ToyModelRow> rows;  // baseline, sft, orpo in that order
    double jaccard_gap = 0.0;       // baseline jaccard − orpo jaccard
    bool jaccard_gap_ok = false;    // gap >= 0.1
    bool mauve_order_ok = false;    // orpo mauve > baseline mauve

    const ToyModelRow& row(const std::string& tag) const;
    nlohmann::json to_json() const;
    std::string to_csv() const;
};

ToyStudyResult run_toy_study(const ToyStudyOptions& options);

}  // namespace stancelab
