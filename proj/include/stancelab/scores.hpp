#pragma once

namespace stancelab {

// Log-likelihood of a token sequence under the model, in nats.
// mean_logprob is always sum_logprob / length.
struct SequenceScore {
    double sum_logprob = 0.0;
    double mean_logprob = 0.0;
    int length = 0;
};

inline SequenceScore make_sequence_score(double sum_logprob, int length) {
    return SequenceScore{sum_logprob, sum_logprob / static_cast<double>(length), length};
}

}  // namespace stancelab
