#pragma once

#include <string>
#include <utility>
#include <vector>

#include "stancelab/scores.hpp"

namespace stancelab {

// Which training objective a loss computation should use.
enum class Objective { SFT, ORPO };

Objective parse_objective(const std::string& name);  // "sft" / "orpo", any case
std::string objective_name(Objective objective);

// One loss evaluation, broken into its parts.
// total = sft + lambda * or_term; for plain SFT, or_term is 0.
struct LossBreakdown {
    double sft = 0.0;
    double or_term = 0.0;
    double total = 0.0;
    double lambda = 0.0;
};

// Numerically stable log(1 + exp(x)).
double softplus(double x);

// Numerically stable logistic sigmoid.
double sigmoid(double x);

// odds(p) = p / (1 - p).  Requires 0 <= p < 1.
double odds(double p);

// log odds of a sequence whose length-normalized probability is
// exp(mean_logprob).  The probability is clamped to at most 1 - 1e-12 so the
// result stays finite.
double log_odds_from_mean_logprob(double mean_logprob);

// d(log odds)/d(mean_logprob) = 1 / (1 - p), with the same clamp as above.
double log_odds_grad_from_mean_logprob(double mean_logprob);

// -log sigmoid(log_odds_chosen - log_odds_rejected), computed without
// overflow for large magnitudes.
double odds_ratio_loss(double log_odds_chosen, double log_odds_rejected);

// Negative mean token log-likelihood of the chosen sequence.
double sft_loss(const SequenceScore& chosen);

// Full ORPO objective for one preference pair.
LossBreakdown orpo_pair_loss(const SequenceScore& chosen, const SequenceScore& rejected,
                             double lambda);

// Mean ORPO objective over a batch of (chosen, rejected) score pairs.
// Errors if the batch is empty or lambda is negative.
LossBreakdown orpo_loss(const std::vector<std::pair<SequenceScore, SequenceScore>>& pairs,
                        double lambda);

}  // namespace stancelab
