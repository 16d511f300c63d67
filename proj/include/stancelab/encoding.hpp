#pragma once

#include <string_view>
#include <vector>

#include "stancelab/prompts.hpp"
#include "stancelab/tinylm.hpp"

namespace stancelab {

// [BOS] system-tokens [SEP] user-tokens [SEP]
std::vector<int> encode_prompt(const Vocab& vocab, const Instruction& instruction);

// text-tokens [EOS]
std::vector<int> encode_target(const Vocab& vocab, std::string_view text);

// Tokenizes one preference triple for training.  Continuations that would
// overflow the context window are truncated to fit, keeping the trailing EOS.
// When include_rejected is false the rejected text is never read and the
// rejected token list stays empty (SFT never touches it).  Errors if the
// prompt alone leaves no room for a continuation.
TokenizedTriple tokenize_triple(const Vocab& vocab, const PreferenceTriple& triple, int context,
                                bool include_rejected = true);

// Tokenizes a whole list of triples in order.
std::vector<TokenizedTriple> tokenize_triples(const Vocab& vocab,
                                              const std::vector<PreferenceTriple>& triples,
                                              int context, bool include_rejected = true);

}  // namespace stancelab
