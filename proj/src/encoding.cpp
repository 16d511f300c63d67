#include "stancelab/encoding.hpp"

#include <string>

#include "stancelab/error.hpp"

namespace stancelab {

std::vector<int> encode_prompt(const Vocab& vocab, const Instruction& instruction) {
    std::vector<int> out;
    out.push_back(Vocab::kBos);
    for (int id : vocab.encode(instruction.system_text)) out.push_back(id);
    out.push_back(Vocab::kSep);
    for (int id : vocab.encode(instruction.user_text)) out.push_back(id);
    out.push_back(Vocab::kSep);
    return out;
}

std::vector<int> encode_target(const Vocab& vocab, std::string_view text) {
    std::vector<int> out = vocab.encode(text);
    out.push_back(Vocab::kEos);
    return out;
}

namespace {

// Keeps the first tokens and the trailing EOS so the sequence still fits.
void truncate_target(std::vector<int>& target, int room) {
    if (static_cast<int>(target.size()) <= room) return;
    target.resize(static_cast<std::size_t>(room));
    target.back() = Vocab::kEos;
}

}  // namespace

TokenizedTriple tokenize_triple(const Vocab& vocab, const PreferenceTriple& triple, int context,
                                bool include_rejected) {
    if (context < 2) {
        raise(ErrorKind::InvalidArgument, "tokenize_triple: context must be >= 2");
    }
    TokenizedTriple out;
    out.prompt = encode_prompt(vocab, triple.instruction);
    const int room = context - static_cast<int>(out.prompt.size());
    if (room < 2) {
        raise(ErrorKind::InvalidArgument,
              "tokenize_triple: prompt of " + std::to_string(out.prompt.size()) +
                  " tokens leaves no room for a continuation in a context of " +
                  std::to_string(context));
    }
    out.chosen = encode_target(vocab, triple.chosen.text);
    truncate_target(out.chosen, room);
    if (include_rejected) {
        out.rejected = encode_target(vocab, triple.rejected.text);
        truncate_target(out.rejected, room);
    }
    return out;
}

std::vector<TokenizedTriple> tokenize_triples(const Vocab& vocab,
                                              const std::vector<PreferenceTriple>& triples,
                                              int context, bool include_rejected) {
    std::vector<TokenizedTriple> out;
    out.reserve(triples.size());
    for (const auto& t : triples) {
        out.push_back(tokenize_triple(vocab, t, context, include_rejected));
    }
    return out;
}

}  // namespace stancelab
