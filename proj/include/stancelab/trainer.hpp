#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "stancelab/encoding.hpp"
#include "stancelab/objectives.hpp"
#include "stancelab/tinylm.hpp"

namespace stancelab {

enum class OptimizerKind { ADAM, SGD };

OptimizerKind parse_optimizer(const std::string& name);  // "adam" / "sgd", any case
std::string optimizer_name(OptimizerKind kind);

struct TrainConfig {
    Objective objective = Objective::ORPO;
    double lambda = 0.1;
    double learning_rate = 3e-3;
    int epochs = 10;
    int batch_size = 32;
    std::uint64_t seed = 0;
    OptimizerKind optimizer = OptimizerKind::ADAM;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip_norm = 1.0;   // 0 disables clipping
    std::string checkpoint_path;   // empty disables checkpointing
    void validate() const;
    nlohmann::json to_json() const;
    // Missing keys keep their defaults; unknown keys are rejected.
    static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainLogRecord {
    int step = 0;  // 1-based, strictly increasing across epochs
    LossBreakdown loss;
    std::int64_t wallclock_ms = 0;  // informational; kept out of canonical artifacts
};

struct TrainResult {
    LMParams params;
    std::vector<TrainLogRecord> log;
};

// Deterministic minibatch training.  Shuffles per epoch with a seed derived
// from (config.seed, epoch), applies the configured optimizer with gradient
// clipping, and when checkpoint_path is set saves the model there before the
// first step and again after every epoch.  A non-finite loss aborts with an
// error; the most recent checkpoint file is left in place.
TrainResult train(const std::vector<PreferenceTriple>& triples, const Vocab& vocab,
                  const LMParams& init, const TrainConfig& config);

// Forward-only mean loss over all triples; params are untouched.
LossBreakdown evaluate_loss(const LMParams& params, const Vocab& vocab,
                            const std::vector<PreferenceTriple>& triples, Objective objective,
                            double lambda);

// Canonical training-log serialization: one JSON object per step with the
// loss breakdown.  Wallclock timings are deliberately excluded so reruns with
// the same seed produce byte-identical files.
std::string train_log_to_jsonl(const std::vector<TrainLogRecord>& log);
void save_train_log(const std::vector<TrainLogRecord>& log, const std::string& path);

}  // namespace stancelab
