#include "stancelab/objectives.hpp"

#include <cmath>
#include <string>

#include "stancelab/error.hpp"

namespace stancelab {

namespace {
constexpr double kMaxProb = 1.0 - 1e-12;

std::string ascii_lower(const std::string& s) {
    std::string out = s;
    for (char& c : out) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
}
}  // namespace

Objective parse_objective(const std::string& name) {
    const std::string n = ascii_lower(name);
    if (n == "sft") return Objective::SFT;
    if (n == "orpo") return Objective::ORPO;
    raise(ErrorKind::InvalidArgument, "unknown objective \"" + name + "\" (expected sft or orpo)");
}

std::string objective_name(Objective objective) {
    return objective == Objective::SFT ? "sft" : "orpo";
}

double softplus(double x) {
    // log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double odds(double p) {
    if (!(p >= 0.0) || p >= 1.0) {
        raise(ErrorKind::InvalidArgument,
              "odds: probability must lie in [0, 1), got " + std::to_string(p));
    }
    return p / (1.0 - p);
}

double log_odds_from_mean_logprob(double mean_logprob) {
    double p = std::exp(mean_logprob);
    if (p > kMaxProb) p = kMaxProb;
    // log(p / (1 - p)) with log p taken from the (clamped) input directly.
    const double lp = (p == kMaxProb) ? std::log(p) : mean_logprob;
    return lp - std::log1p(-p);
}

double log_odds_grad_from_mean_logprob(double mean_logprob) {
    double p = std::exp(mean_logprob);
    if (p > kMaxProb) p = kMaxProb;
    return 1.0 / (1.0 - p);
}

double odds_ratio_loss(double log_odds_chosen, double log_odds_rejected) {
    // -log sigmoid(z) = softplus(-z)
    return softplus(-(log_odds_chosen - log_odds_rejected));
}

double sft_loss(const SequenceScore& chosen) {
    if (chosen.length <= 0) {
        raise(ErrorKind::InvalidArgument, "sft_loss: sequence score has non-positive length");
    }
    return -chosen.mean_logprob;
}

LossBreakdown orpo_pair_loss(const SequenceScore& chosen, const SequenceScore& rejected,
                             double lambda) {
    if (lambda < 0.0) {
        raise(ErrorKind::InvalidArgument, "orpo_pair_loss: lambda must be non-negative");
    }
    if (chosen.length <= 0 || rejected.length <= 0) {
        raise(ErrorKind::InvalidArgument, "orpo_pair_loss: sequence scores need positive length");
    }
    LossBreakdown out;
    out.lambda = lambda;
    out.sft = sft_loss(chosen);
    out.or_term = odds_ratio_loss(log_odds_from_mean_logprob(chosen.mean_logprob),
                                  log_odds_from_mean_logprob(rejected.mean_logprob));
    out.total = out.sft + lambda * out.or_term;
    return out;
}

LossBreakdown orpo_loss(const std::vector<std::pair<SequenceScore, SequenceScore>>& pairs,
                        double lambda) {
    if (pairs.empty()) {
        raise(ErrorKind::InvalidArgument, "orpo_loss: empty batch");
    }
    LossBreakdown acc;
    acc.lambda = lambda;
    for (const auto& [chosen, rejected] : pairs) {
        const LossBreakdown one = orpo_pair_loss(chosen, rejected, lambda);
        acc.sft += one.sft;
        acc.or_term += one.or_term;
        acc.total += one.total;
    }
    const double n = static_cast<double>(pairs.size());
    acc.sft /= n;
    acc.or_term /= n;
    acc.total /= n;
    return acc;
}

}  // namespace stancelab
