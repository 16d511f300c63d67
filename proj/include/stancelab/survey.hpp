#pragma once

#include <array>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "stancelab/tinylm.hpp"

namespace stancelab {

// Canonical option order; ties are broken toward the earlier option.
enum class SurveyOption { YES = 0, RATHER_YES = 1, RATHER_NO = 2, NO = 3 };

inline constexpr int kNumSurveyOptions = 4;

// The literal answer strings the model is scored on.
const std::string& survey_option_text(SurveyOption option);   // "yes", "rather yes", ...
// Stable identifiers for serialization: "YES", "RATHER_YES", ...
const std::string& survey_option_name(SurveyOption option);
SurveyOption parse_survey_option(const std::string& name);
// Evenly spaced numeric scale: yes=1, rather yes=2/3, rather no=1/3, no=0.
double survey_option_value(SurveyOption option);

struct SurveyQuestion {
    std::string id;
    std::string text;
};

std::vector<SurveyQuestion> load_survey_questions_jsonl(const std::string& path);

struct SurveyAnswer {
    std::string question_id;
    SurveyOption answer = SurveyOption::YES;
    std::array<double, kNumSurveyOptions> option_scores{};  // mean log-probabilities

    nlohmann::json to_json() const;
    static SurveyAnswer from_json(const nlohmann::json& j, std::size_t record_no);
};

std::vector<SurveyAnswer> load_survey_answers_jsonl(const std::string& path);
void save_survey_answers_jsonl(const std::vector<SurveyAnswer>& answers,
                               const std::string& path);

// Constrained survey protocol: each question is answered by scoring the four
// option strings as continuations of the survey instruction and picking the
// highest mean log-probability (ties fall back to canonical option order).
// Never free-generates, so the answer is always one of the four options.
std::vector<SurveyAnswer> take_survey(const LMParams& params, const Vocab& vocab,
                                      const std::vector<SurveyQuestion>& questions);

struct MatchResult {
    std::vector<std::pair<std::string, double>> ranked;  // (candidate_id, overlap), best first
    std::vector<std::string> unranked;                   // no shared questions with the user

    nlohmann::json to_json() const;
};

// Overlap = 1 − (Euclidean distance over shared questions) / sqrt(shared
// count), on the numeric answer scale.  Ranking is descending by overlap with
// candidate-id tie-break; candidates sharing no questions are flagged
// unranked instead.
MatchResult match_candidates(const std::vector<SurveyAnswer>& user,
                             const std::map<std::string, std::vector<SurveyAnswer>>& candidates);

}  // namespace stancelab
