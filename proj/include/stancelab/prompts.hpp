#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "stancelab/corpus.hpp"

namespace stancelab {

struct Instruction {
    std::string system_text;
    std::string user_text;

    bool operator==(const Instruction&) const = default;
};

// Conditional-generation prompt: advisor persona conditioned on party and
// reply language, user turn carrying the policy question.
Instruction render_instruction(const std::string& party, Language language,
                               const std::string& question);

// Constrained survey prompt whose system turn pins the four allowed answers
// ("yes", "rather yes", "rather no", "no").
Instruction render_survey_instruction(const std::string& question);

// The alignment unit: an instruction with a preferred and a rejected
// completion. chosen/rejected always share issue and language and come from
// different parties.
struct PreferenceTriple {
    Instruction instruction;
    Comment chosen;
    Comment rejected;

    nlohmann::json to_json() const;
    static PreferenceTriple from_json(const nlohmann::json& j, std::size_t record_no);
};

struct PairBuildResult {
    std::vector<PreferenceTriple> triples;
    std::size_t skipped = 0;  // comments with no eligible rejected candidate
};

// For each comment, samples up to pairs_per_chosen rejected comments uniformly
// without replacement from the pool {same issue, same language, different
// party}. issue_questions maps issue_id to its question text; issues not in
// the map fall back to using the issue_id itself as the question.
PairBuildResult build_preference_triples(
    const std::vector<Comment>& comments,
    const std::map<std::string, std::string>& issue_questions, int pairs_per_chosen,
    std::uint64_t seed);

void save_triples_jsonl(const std::string& path,
                        const std::vector<PreferenceTriple>& triples);
std::vector<PreferenceTriple> load_triples_jsonl(const std::string& path);

}  // namespace stancelab
