#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "stancelab/objectives.hpp"
#include "stancelab/scores.hpp"

namespace stancelab {

// ---------------------------------------------------------------------------
// Vocabulary: whitespace word-level tokens plus five reserved specials.
// ---------------------------------------------------------------------------
class Vocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kSep = 3;
    static constexpr int kUnk = 4;
    static constexpr int kNumSpecials = 5;

    Vocab();  // specials only

    // Builds a vocabulary from whitespace tokens of the given texts, keeping
    // the most frequent words (ties broken lexicographically) up to max_size
    // entries including the specials.  max_size must be at least 8.
    static Vocab build(const std::vector<std::string>& texts, int max_size);

    int size() const { return static_cast<int>(tokens_.size()); }
    // Word id, or kUnk for unknown words.
    int id_of(std::string_view token) const;
    const std::string& token_of(int id) const;
    static bool is_special(int id) { return id >= 0 && id < kNumSpecials; }

    // Whitespace tokenization; unknown words map to kUnk.
    std::vector<int> encode(std::string_view text) const;
    // Joins non-special tokens with single spaces.
    std::string decode(std::span<const int> ids) const;

    nlohmann::json to_json() const;
    static Vocab from_json(const nlohmann::json& j);

private:
    std::vector<std::string> tokens_;                  // index == id
    std::map<std::string, int, std::less<>> ids_;
};

// ---------------------------------------------------------------------------
// Model shape.
// ---------------------------------------------------------------------------
struct ModelDims {
    int layers = 2;
    int dim = 64;
    int heads = 4;
    int context = 256;
    int vocab = 0;  // set from the Vocab when the model is created

    int head_dim() const { return dim / heads; }
    int ff_dim() const { return 4 * dim; }
    void validate() const;  // errors on non-positive fields or dim % heads != 0

    nlohmann::json to_json() const;
    static ModelDims from_json(const nlohmann::json& j);
    bool operator==(const ModelDims&) const = default;
};

// ---------------------------------------------------------------------------
// All weights in one flat double vector, with named Eigen views.
// Matrices are column-major maps into the flat storage.
// ---------------------------------------------------------------------------
class LMParams {
public:
    explicit LMParams(const ModelDims& dims);  // zero-initialized
    static LMParams random_init(const ModelDims& dims, std::uint64_t seed);

    const ModelDims& dims() const { return dims_; }
    Eigen::Index parameter_count() const { return flat_.size(); }
    Eigen::VectorXd& flat() { return flat_; }
    const Eigen::VectorXd& flat() const { return flat_; }

    using MatView = Eigen::Map<Eigen::MatrixXd>;
    using ConstMatView = Eigen::Map<const Eigen::MatrixXd>;
    using VecView = Eigen::Map<Eigen::VectorXd>;
    using ConstVecView = Eigen::Map<const Eigen::VectorXd>;

    // dim x vocab, one column per token id.
    MatView token_embedding();
    ConstMatView token_embedding() const;
    // dim x context, one column per position.
    MatView position_embedding();
    ConstMatView position_embedding() const;

    VecView ln1_gain(int layer);
    VecView ln1_bias(int layer);
    MatView qkv_weight(int layer);   // 3*dim x dim (query, key, value stacked)
    VecView qkv_bias(int layer);     // 3*dim
    MatView attn_out_weight(int layer);  // dim x dim
    VecView attn_out_bias(int layer);
    VecView ln2_gain(int layer);
    VecView ln2_bias(int layer);
    MatView ff1_weight(int layer);   // ff_dim x dim
    VecView ff1_bias(int layer);
    MatView ff2_weight(int layer);   // dim x ff_dim
    VecView ff2_bias(int layer);

    VecView final_ln_gain();
    VecView final_ln_bias();
    MatView out_weight();  // vocab x dim (untied from the token embedding)
    VecView out_bias();

    ConstVecView ln1_gain(int layer) const;
    ConstVecView ln1_bias(int layer) const;
    ConstMatView qkv_weight(int layer) const;
    ConstVecView qkv_bias(int layer) const;
    ConstMatView attn_out_weight(int layer) const;
    ConstVecView attn_out_bias(int layer) const;
    ConstVecView ln2_gain(int layer) const;
    ConstVecView ln2_bias(int layer) const;
    ConstMatView ff1_weight(int layer) const;
    ConstVecView ff1_bias(int layer) const;
    ConstMatView ff2_weight(int layer) const;
    ConstVecView ff2_bias(int layer) const;
    ConstVecView final_ln_gain() const;
    ConstVecView final_ln_bias() const;
    ConstMatView out_weight() const;
    ConstVecView out_bias() const;

    static Eigen::Index parameter_count_for(const ModelDims& dims);

private:
    double* at(std::size_t offset) { return flat_.data() + offset; }
    const double* at(std::size_t offset) const { return flat_.data() + offset; }
    std::size_t layer_base(int layer) const;

    ModelDims dims_;
    Eigen::VectorXd flat_;
};

// ---------------------------------------------------------------------------
// Model bundles the vocabulary with its parameters.
// ---------------------------------------------------------------------------
struct LMModel {
    Vocab vocab;
    ModelDims dims;
    LMParams params;

    LMModel(Vocab v, ModelDims d, LMParams p);
    static LMModel create(Vocab vocab, ModelDims dims, std::uint64_t seed);

    // JSON checkpoints; doubles survive the round trip bit-exactly.
    void save(const std::string& path) const;
    static LMModel load(const std::string& path);
    nlohmann::json to_json() const;
    static LMModel from_json(const nlohmann::json& j);
};

// ---------------------------------------------------------------------------
// Forward / scoring / generation.
// ---------------------------------------------------------------------------

// Log-probability columns: out.col(t) is the log next-token distribution
// after seeing tokens[0..t].  tokens must be non-empty and fit the context.
Eigen::MatrixXd next_token_log_probs(const LMParams& params, std::span<const int> tokens);

// Scores `target` as a continuation of `prompt`.  The prompt tokens are not
// scored.  Errors on an empty prompt or target, or if the combined length
// exceeds the context window.
SequenceScore score_sequence(const LMParams& params, std::span<const int> prompt,
                             std::span<const int> target);

struct GenerationConfig {
    double temperature = 1.0;  // 0 means greedy argmax
    int top_k = 0;             // 0 means no truncation
    int max_tokens = 64;
    std::uint64_t seed = 0;
    void validate() const;
    nlohmann::json to_json() const;
    // Missing keys keep their defaults; unknown keys are rejected.
    static GenerationConfig from_json(const nlohmann::json& j);
};

// Samples a continuation of `prompt` until EOS, max_tokens, or the context
// window is exhausted.  Returns generated token ids (without the prompt and
// without a trailing EOS).
std::vector<int> sample(const LMParams& params, std::span<const int> prompt,
                        const GenerationConfig& config);

// ---------------------------------------------------------------------------
// Loss and hand-coded gradients.
// ---------------------------------------------------------------------------
struct TokenizedTriple {
    std::vector<int> prompt;
    std::vector<int> chosen;
    std::vector<int> rejected;  // may be empty when training plain SFT
};

struct LossAndGrad {
    LossBreakdown loss;
    Eigen::VectorXd grad;  // same layout as LMParams::flat()
};

// Mean loss over the batch plus its exact gradient.  Pairs are processed one
// at a time so memory stays proportional to a single sequence.  Errors if the
// batch is empty, a sequence is malformed, or the loss is non-finite (the
// error names the offending batch element).
LossAndGrad loss_and_grad(const LMParams& params, const std::vector<TokenizedTriple>& batch,
                          Objective objective, double lambda);

// Loss only (no gradient); same batch semantics as loss_and_grad.
LossBreakdown batch_loss(const LMParams& params, const std::vector<TokenizedTriple>& batch,
                         Objective objective, double lambda);

}  // namespace stancelab
