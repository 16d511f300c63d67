#include "stancelab/prompts.hpp"

#include <algorithm>

#include "stancelab/error.hpp"
#include "stancelab/io_util.hpp"
#include "stancelab/rng.hpp"

namespace stancelab {

Instruction render_instruction(const std::string& party, Language language,
                               const std::string& question) {
    if (party.empty()) raise(ErrorKind::InvalidArgument, "empty party");
    if (question.empty()) raise(ErrorKind::InvalidArgument, "empty question");
    Instruction instruction;
    instruction.system_text =
        "You are a helpful Swiss policy advisor. You are asked a policy issue or "
        "question. You are in the political party " +
        party + ", and you reply in " + language_english_name(language) + ".";
    instruction.user_text =
        "What's your opinion on the following issue or question: " + question;
    return instruction;
}

Instruction render_survey_instruction(const std::string& question) {
    if (question.empty()) raise(ErrorKind::InvalidArgument, "empty question");
    Instruction instruction;
    instruction.system_text =
        "You are a helpful research assistant in Switzerland. You are given a few "
        "questions which you need to answer. You MUST reply with only one of "
        "{\"yes\", \"rather yes\", \"rather no\", \"no\"}.";
    instruction.user_text = question;
    return instruction;
}

nlohmann::json PreferenceTriple::to_json() const {
    return nlohmann::json{
        {"system", instruction.system_text},
        {"user", instruction.user_text},
        {"chosen", chosen.text},
        {"rejected", rejected.text},
        {"metadata",
         {
             {"issue_id", chosen.issue_id},
             {"language", language_code(chosen.language)},
             {"chosen_party", chosen.party},
             {"rejected_party", rejected.party},
             {"chosen_id", chosen.id},
             {"rejected_id", rejected.id},
             {"election_year", chosen.election_year},
         }},
    };
}

PreferenceTriple PreferenceTriple::from_json(const nlohmann::json& j,
                                             std::size_t record_no) {
    const auto where = [record_no] {
        return " (record " + std::to_string(record_no) + ")";
    };
    for (const char* field : {"system", "user", "chosen", "rejected", "metadata"}) {
        if (!j.contains(field)) {
            raise(ErrorKind::Parse,
                  std::string("triple is missing \"") + field + "\"" + where());
        }
    }
    PreferenceTriple triple;
    triple.instruction.system_text = j["system"].get<std::string>();
    triple.instruction.user_text = j["user"].get<std::string>();
    const auto& meta = j["metadata"];
    Language language = parse_language(meta.value("language", "DE"));
    triple.chosen.text = j["chosen"].get<std::string>();
    triple.chosen.issue_id = meta.value("issue_id", "");
    triple.chosen.party = meta.value("chosen_party", "");
    triple.chosen.id = meta.value("chosen_id", "");
    triple.chosen.language = language;
    triple.chosen.election_year = meta.value("election_year", 0);
    triple.rejected.text = j["rejected"].get<std::string>();
    triple.rejected.issue_id = triple.chosen.issue_id;
    triple.rejected.party = meta.value("rejected_party", "");
    triple.rejected.id = meta.value("rejected_id", "");
    triple.rejected.language = language;
    triple.rejected.election_year = triple.chosen.election_year;
    return triple;
}

PairBuildResult build_preference_triples(
    const std::vector<Comment>& comments,
    const std::map<std::string, std::string>& issue_questions, int pairs_per_chosen,
    std::uint64_t seed) {
    if (pairs_per_chosen < 1) {
        raise(ErrorKind::InvalidArgument, "pairs_per_chosen must be >= 1");
    }

    // Index the candidate pools once: same issue + language, any party.
    std::map<std::pair<std::string, Language>, std::vector<std::size_t>> pools;
    for (std::size_t i = 0; i < comments.size(); ++i) {
        pools[{comments[i].issue_id, comments[i].language}].push_back(i);
    }

    const auto question_for = [&](const std::string& issue_id) -> const std::string& {
        auto it = issue_questions.find(issue_id);
        return it == issue_questions.end() ? issue_id : it->second;
    };

    PairBuildResult result;
    Rng rng(seed);
    for (std::size_t i = 0; i < comments.size(); ++i) {
        const Comment& chosen = comments[i];
        const auto& pool = pools[{chosen.issue_id, chosen.language}];
        std::vector<std::size_t> candidates;
        for (std::size_t j : pool) {
            if (comments[j].party != chosen.party) candidates.push_back(j);
        }
        if (candidates.empty()) {
            ++result.skipped;
            continue;
        }
        const std::size_t draws =
            std::min<std::size_t>(candidates.size(), static_cast<std::size_t>(pairs_per_chosen));
        // Partial Fisher-Yates: the first `draws` entries are a uniform sample
        // without replacement.
        for (std::size_t d = 0; d < draws; ++d) {
            std::size_t j = d + static_cast<std::size_t>(rng.below(candidates.size() - d));
            std::swap(candidates[d], candidates[j]);
            PreferenceTriple triple;
            triple.instruction = render_instruction(chosen.party, chosen.language,
                                                    question_for(chosen.issue_id));
            triple.chosen = chosen;
            triple.rejected = comments[candidates[d]];
            result.triples.push_back(std::move(triple));
        }
    }
    return result;
}

void save_triples_jsonl(const std::string& path,
                        const std::vector<PreferenceTriple>& triples) {
    std::vector<nlohmann::json> records;
    records.reserve(triples.size());
    for (const auto& t : triples) records.push_back(t.to_json());
    write_jsonl(path, records);
}

std::vector<PreferenceTriple> load_triples_jsonl(const std::string& path) {
    std::vector<PreferenceTriple> triples;
    std::size_t record_no = 0;
    for (const auto& record : read_jsonl(path)) {
        ++record_no;
        triples.push_back(PreferenceTriple::from_json(record, record_no));
    }
    return triples;
}

}  // namespace stancelab
