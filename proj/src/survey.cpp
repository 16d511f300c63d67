#include "stancelab/survey.hpp"

#include <algorithm>
#include <cmath>

#include "stancelab/encoding.hpp"
#include "stancelab/error.hpp"
#include "stancelab/io_util.hpp"
#include "stancelab/prompts.hpp"

namespace stancelab {

namespace {

const std::array<std::string, kNumSurveyOptions> kOptionTexts = {"yes", "rather yes", "rather no",
                                                                 "no"};
const std::array<std::string, kNumSurveyOptions> kOptionNames = {"YES", "RATHER_YES", "RATHER_NO",
                                                                 "NO"};
const std::array<double, kNumSurveyOptions> kOptionValues = {1.0, 2.0 / 3.0, 1.0 / 3.0, 0.0};

int option_index(SurveyOption option) {
    const int i = static_cast<int>(option);
    if (i < 0 || i >= kNumSurveyOptions) {
        raise(ErrorKind::Internal, "survey option out of range");
    }
    return i;
}

}  // namespace

const std::string& survey_option_text(SurveyOption option) {
    return kOptionTexts[static_cast<std::size_t>(option_index(option))];
}

const std::string& survey_option_name(SurveyOption option) {
    return kOptionNames[static_cast<std::size_t>(option_index(option))];
}

SurveyOption parse_survey_option(const std::string& name) {
    for (int i = 0; i < kNumSurveyOptions; ++i) {
        if (name == kOptionNames[static_cast<std::size_t>(i)] ||
            name == kOptionTexts[static_cast<std::size_t>(i)]) {
            return static_cast<SurveyOption>(i);
        }
    }
    raise(ErrorKind::Parse, "unknown survey option \"" + name + "\"");
}

double survey_option_value(SurveyOption option) {
    return kOptionValues[static_cast<std::size_t>(option_index(option))];
}

std::vector<SurveyQuestion> load_survey_questions_jsonl(const std::string& path) {
    std::vector<SurveyQuestion> out;
    std::size_t n = 0;
    for (const auto& j : read_jsonl(path)) {
        ++n;
        const std::string where = "survey question record " + std::to_string(n);
        SurveyQuestion q;
        try {
            q.id = j.at("id").get<std::string>();
            q.text = j.at("text").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            raise(ErrorKind::Parse, where + ": " + e.what());
        }
        if (q.text.empty()) raise(ErrorKind::Parse, where + ": empty question text");
        out.push_back(std::move(q));
    }
    return out;
}

nlohmann::json SurveyAnswer::to_json() const {
    return nlohmann::json{{"question_id", question_id},
                          {"answer", survey_option_name(answer)},
                          {"option_scores", option_scores}};
}

SurveyAnswer SurveyAnswer::from_json(const nlohmann::json& j, std::size_t record_no) {
    const std::string where = "survey answer record " + std::to_string(record_no);
    if (!j.is_object()) raise(ErrorKind::Parse, where + ": not a JSON object");
    SurveyAnswer a;
    try {
        a.question_id = j.at("question_id").get<std::string>();
        a.answer = parse_survey_option(j.at("answer").get<std::string>());
        const auto scores = j.at("option_scores").get<std::vector<double>>();
        if (scores.size() != kNumSurveyOptions) {
            raise(ErrorKind::Parse, where + ": option_scores needs exactly " +
                                        std::to_string(kNumSurveyOptions) + " entries");
        }
        std::copy(scores.begin(), scores.end(), a.option_scores.begin());
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::Parse, where + ": " + e.what());
    }
    // The stored answer must be the arg-max under the canonical tie-break.
    int best = 0;
    for (int i = 1; i < kNumSurveyOptions; ++i) {
        if (a.option_scores[static_cast<std::size_t>(i)] >
            a.option_scores[static_cast<std::size_t>(best)]) {
            best = i;
        }
    }
    if (best != option_index(a.answer)) {
        raise(ErrorKind::Parse, where + ": answer is not the arg-max of option_scores");
    }
    return a;
}

std::vector<SurveyAnswer> load_survey_answers_jsonl(const std::string& path) {
    std::vector<SurveyAnswer> out;
    std::size_t n = 0;
    for (const auto& j : read_jsonl(path)) {
        out.push_back(SurveyAnswer::from_json(j, ++n));
    }
    return out;
}

void save_survey_answers_jsonl(const std::vector<SurveyAnswer>& answers,
                               const std::string& path) {
    std::vector<nlohmann::json> lines;
    lines.reserve(answers.size());
    for (const auto& a : answers) lines.push_back(a.to_json());
    write_jsonl(path, lines);
}

std::vector<SurveyAnswer> take_survey(const LMParams& params, const Vocab& vocab,
                                      const std::vector<SurveyQuestion>& questions) {
    if (questions.empty()) raise(ErrorKind::InvalidArgument, "take_survey: no questions");
    std::vector<SurveyAnswer> out;
    out.reserve(questions.size());
    for (const auto& q : questions) {
        const Instruction instruction = render_survey_instruction(q.text);
        const std::vector<int> prompt = encode_prompt(vocab, instruction);
        SurveyAnswer answer;
        answer.question_id = q.id;
        int best = 0;
        for (int i = 0; i < kNumSurveyOptions; ++i) {
            const std::vector<int> target =
                encode_target(vocab, kOptionTexts[static_cast<std::size_t>(i)]);
            answer.option_scores[static_cast<std::size_t>(i)] =
                score_sequence(params, prompt, target).mean_logprob;
            if (answer.option_scores[static_cast<std::size_t>(i)] >
                answer.option_scores[static_cast<std::size_t>(best)]) {
                best = i;
            }
        }
        answer.answer = static_cast<SurveyOption>(best);
        out.push_back(std::move(answer));
    }
    return out;
}

nlohmann::json MatchResult::to_json() const {
    nlohmann::json ranked_json = nlohmann::json::array();
    for (const auto& [id, overlap] : ranked) {
        ranked_json.push_back(nlohmann::json{{"candidate_id", id}, {"overlap", overlap}});
    }
    return nlohmann::json{{"ranked", ranked_json}, {"unranked", unranked}};
}

MatchResult match_candidates(const std::vector<SurveyAnswer>& user,
                             const std::map<std::string, std::vector<SurveyAnswer>>& candidates) {
    if (user.empty()) raise(ErrorKind::InvalidArgument, "match_candidates: no user answers");
    if (candidates.empty()) raise(ErrorKind::InvalidArgument, "match_candidates: no candidates");

    std::map<std::string, double> user_values;
    for (const auto& a : user) {
        if (!user_values.emplace(a.question_id, survey_option_value(a.answer)).second) {
            raise(ErrorKind::InvalidArgument,
                  "match_candidates: duplicate user answer for question \"" + a.question_id +
                      "\"");
        }
    }

    MatchResult result;
    for (const auto& [candidate_id, answers] : candidates) {
        double sum_sq = 0.0;
        int shared = 0;
        for (const auto& a : answers) {
            auto it = user_values.find(a.question_id);
            if (it == user_values.end()) continue;
            const double diff = it->second - survey_option_value(a.answer);
            sum_sq += diff * diff;
            ++shared;
        }
        if (shared == 0) {
            result.unranked.push_back(candidate_id);
            continue;
        }
        const double overlap = 1.0 - std::sqrt(sum_sq) / std::sqrt(static_cast<double>(shared));
        result.ranked.emplace_back(candidate_id, overlap);
    }
    std::sort(result.ranked.begin(), result.ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    return result;
}

}  // namespace stancelab
