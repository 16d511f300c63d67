#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "stancelab/corpus.hpp"

namespace stancelab {

// Large-model reference points from the original study, recorded for
// orientation in reports.  Desk-scale runs are not expected to reproduce
// them; nothing in this codebase asserts against them.
inline constexpr double kReferenceAlignedJaccard = 0.24;
inline constexpr double kReferenceZeroShotJaccard = 0.48;  // about twice the aligned model
inline constexpr double kReferenceAlignedMauveDev = 0.63;
inline constexpr double kReferenceAlignedMauveTest = 0.71;

// ---------------------------------------------------------------------------
// Generations
// ---------------------------------------------------------------------------
struct GenerationRecord {
    std::string issue_id;
    std::string party;
    Language language = Language::DE;
    std::string text;  // non-empty
    std::string model_tag;

    nlohmann::json to_json() const;
    static GenerationRecord from_json(const nlohmann::json& j, std::size_t record_no);
};

std::vector<GenerationRecord> load_generations_jsonl(const std::string& path);
void save_generations_jsonl(const std::vector<GenerationRecord>& records,
                            const std::string& path);

// ---------------------------------------------------------------------------
// Jaccard diversity
// ---------------------------------------------------------------------------

// Lowercases, strips punctuation, splits on whitespace, deduplicates.
std::set<std::string> tokenize_for_jaccard(std::string_view text);

// |a ∩ b| / |a ∪ b|; both empty → 1, exactly one empty → 0.
double jaccard(const std::set<std::string>& a, const std::set<std::string>& b);

struct DiversityReport {
    std::map<std::string, double> per_issue;  // issue_id → mean pairwise Jaccard
    double overall_mean = 0.0;                // unweighted mean over issues
    std::string model_tag;
    int skipped_issues = 0;  // issues without at least one cross-party pair

    nlohmann::json to_json() const;
    std::string to_csv() const;
};

// Mean pairwise Jaccard between generations of different parties, per issue.
// All records must carry the same model_tag.  Issues lacking a cross-party
// pair are excluded and counted in skipped_issues.
DiversityReport diversity_report(const std::vector<GenerationRecord>& records);

// ---------------------------------------------------------------------------
// Featurization and quantization
// ---------------------------------------------------------------------------
enum class FeaturizerKind { HASHED_NGRAM, EXTERNAL_FILE };

FeaturizerKind parse_featurizer(const std::string& name);
std::string featurizer_name(FeaturizerKind kind);

inline constexpr int kHashedNgramBuckets = 256;

// HASHED_NGRAM: character 3–5-gram counts hashed into 256 buckets, TF-IDF
// weighted over the given collection, L2-normalized.  EXTERNAL_FILE: vectors
// read verbatim from a JSONL sidecar of {"id": text, "vector": [...]}
// records; a text with no sidecar entry is an error naming the id.
std::vector<Eigen::VectorXd> embed(const std::vector<std::string>& texts, FeaturizerKind kind,
                                   const std::string& sidecar_path = "");

// k-means++ initialization followed by Lloyd iterations until the assignment
// fixpoint or max_iters.  Deterministic per seed.  Errors if k < 2 or k
// exceeds the number of distinct vectors.
std::vector<int> kmeans(const std::vector<Eigen::VectorXd>& vectors, int k, std::uint64_t seed,
                        int max_iters = 100);

// Normalized cluster-count histograms (model, reference).
std::pair<Eigen::VectorXd, Eigen::VectorXd> histogram_pair(
    const std::vector<int>& model_assignments, const std::vector<int>& ref_assignments, int k);

// ---------------------------------------------------------------------------
// MAUVE
// ---------------------------------------------------------------------------
struct DivergencePoint {
    double x = 0.0;  // exp(-c * KL(Q ‖ R_λ))
    double y = 0.0;  // exp(-c * KL(P ‖ R_λ))
    double lambda = 0.0;
};

struct MauveCurve {
    double score = 0.0;  // area under the divergence frontier
    std::vector<DivergencePoint> points;
};

inline constexpr double kMauveDefaultC = 5.0;
inline constexpr int kMauveDefaultGridSize = 1001;

MauveCurve mauve_score(const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                       double c = kMauveDefaultC, int grid_size = kMauveDefaultGridSize);

struct MauveReport {
    std::vector<double> runs;
    double mean = 0.0;
    double ci95_halfwidth = 0.0;
    double c = kMauveDefaultC;
    int k = 0;  // nominal cluster count for a full-size run
    int grid_size = kMauveDefaultGridSize;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
    std::string to_csv() const;
};

// Per run: subsample references without replacement to min(|refs|, |model|),
// embed the union, quantize with k = max(2, min(50, ⌊n/5⌋)) clamped to the
// number of distinct vectors, and score the histogram pair.  Fewer than two
// references is an error.
MauveReport mauve_report(const std::vector<std::string>& model_texts,
                         const std::vector<std::string>& ref_texts, FeaturizerKind featurizer,
                         int runs = 5, std::uint64_t seed = 0,
                         const std::string& sidecar_path = "", double c = kMauveDefaultC,
                         int grid_size = kMauveDefaultGridSize);

// ---------------------------------------------------------------------------
// Cohen's kappa
// ---------------------------------------------------------------------------

// κ = (p_o − p_e) / (1 − p_e); if p_e == 1, returns 1 when p_o == 1 else 0.
double cohens_kappa(const std::vector<std::string>& a, const std::vector<std::string>& b);

enum class PairLabel { A, B, BOTH, NEITHER };

PairLabel parse_pair_label(const std::string& name);
std::string pair_label_name(PairLabel label);

struct AnnotationRecord {
    std::string item_id;
    PairLabel label_a = PairLabel::A;
    PairLabel label_b = PairLabel::A;
    std::optional<int> familiarity;  // 1–5 when present

    nlohmann::json to_json() const;
    static AnnotationRecord from_json(const nlohmann::json& j, std::size_t record_no);
};

std::vector<AnnotationRecord> load_annotations_jsonl(const std::string& path);

struct KappaReport {
    double kappa = 0.0;
    int items_used = 0;
    int items_discarded = 0;
    bool discard_ties = false;

    nlohmann::json to_json() const;
};

// Agreement between the two annotators.  With discard_ties, items where
// either annotator chose BOTH or NEITHER are dropped first.
KappaReport kappa_from_annotations(const std::vector<AnnotationRecord>& records,
                                   bool discard_ties);

// ---------------------------------------------------------------------------
// Win rates
// ---------------------------------------------------------------------------
enum class Winner { X, Y, TIE };
enum class TiePolicy { HALF, DISCARD };

Winner parse_winner(const std::string& name);
std::string winner_name(Winner w);
TiePolicy parse_tie_policy(const std::string& name);
std::string tie_policy_name(TiePolicy p);

struct Comparison {
    std::string model_x;
    std::string model_y;
    Winner winner = Winner::TIE;

    nlohmann::json to_json() const;
    static Comparison from_json(const nlohmann::json& j, std::size_t record_no);
};

std::vector<Comparison> load_comparisons_jsonl(const std::string& path);

struct WinRateEntry {
    std::string model;
    double wins = 0.0;
    int comparisons = 0;
    std::optional<double> rate;  // empty when no comparisons survive the policy
};

struct WinRateReport {
    std::vector<WinRateEntry> entries;  // sorted by model tag
    TiePolicy policy = TiePolicy::HALF;

    nlohmann::json to_json() const;
    std::string to_csv() const;
};

WinRateReport win_rates(const std::vector<Comparison>& comparisons, TiePolicy policy);

}  // namespace stancelab
