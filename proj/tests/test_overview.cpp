#include <cmath>
#include <cstdlib>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "stancelab/error.hpp"
#include "stancelab/overview.hpp"
#include "stancelab/survey.hpp"
#include "test_util.hpp"

using namespace stancelab;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    throw std::logic_error("expected an Error");
}

// Vocabulary that knows the survey option words plus some filler.
Vocab survey_vocab() {
    return Vocab::build({"yes rather no", "frage antwort partei politik links rechts"}, 32);
}

ModelDims survey_dims(int vocab_size) {
    ModelDims d;
    d.layers = 1;
    d.dim = 8;
    d.heads = 2;
    d.context = 64;
    d.vocab = vocab_size;
    return d;
}

SurveyAnswer make_answer(const std::string& question_id, SurveyOption option) {
    SurveyAnswer a;
    a.question_id = question_id;
    a.answer = option;
    // Scores consistent with the chosen answer (arg-max at the option index).
    for (int i = 0; i < kNumSurveyOptions; ++i) {
        a.option_scores[static_cast<std::size_t>(i)] =
            (i == static_cast<int>(option)) ? -1.0 : -2.0;
    }
    return a;
}

// Scripted transport: replays canned results and records every call.
struct ScriptedTransport final : ChatTransport {
    struct Call {
        std::string url;
        std::string bearer;
        nlohmann::json body;
        double timeout_s = 0.0;
    };
    std::vector<ChatResult> script;  // the last entry repeats
    std::vector<Call> calls;

    ChatResult post_chat(const std::string& url, const std::string& bearer_token,
                         const nlohmann::json& body, double timeout_s) override {
        calls.push_back(Call{url, bearer_token, body, timeout_s});
        const std::size_t i = std::min(calls.size() - 1, script.size() - 1);
        return script[i];
    }
};

std::string chat_ok_body(const std::string& content) {
    return nlohmann::json{
        {"choices",
         nlohmann::json::array(
             {nlohmann::json{{"message", nlohmann::json{{"content", content}}}}})}}
        .dump();
}

SummarizerConfig demo_config() {
    SummarizerConfig c;
    c.base_url = "http://summarizer.example/v1";
    c.model_name = "demo-chat";
    c.api_key_env = "";  // injected transports need no key
    c.timeout_s = 2.0;
    c.max_retries = 3;
    c.backoff_base_ms = 1;  // keep retry tests fast
    return c;
}

PartyAnswerSet demo_answers() {
    PartyAnswerSet set;
    set.question = "Braucht es die Vorlage?";
    set.language = Language::DE;
    set.answers = {{"ALPHA", "Wir sagen dazu klar ja."},
                   {"BETA", "Wir lehnen die Vorlage ab."}};
    return set;
}

}  // namespace

// ---------------------------------------------------------------------------
// Survey protocol
// ---------------------------------------------------------------------------

TEST_CASE("survey option tables") {
    CHECK(survey_option_text(SurveyOption::YES) == "yes");
    CHECK(survey_option_text(SurveyOption::RATHER_YES) == "rather yes");
    CHECK(survey_option_text(SurveyOption::RATHER_NO) == "rather no");
    CHECK(survey_option_text(SurveyOption::NO) == "no");
    CHECK(survey_option_name(SurveyOption::RATHER_NO) == "RATHER_NO");
    CHECK(parse_survey_option("RATHER_YES") == SurveyOption::RATHER_YES);
    CHECK(parse_survey_option("rather yes") == SurveyOption::RATHER_YES);
    CHECK_THROWS_AS(parse_survey_option("maybe"), Error);

    CHECK(survey_option_value(SurveyOption::YES) == 1.0);
    CHECK(survey_option_value(SurveyOption::RATHER_YES) ==
          doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(survey_option_value(SurveyOption::RATHER_NO) ==
          doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(survey_option_value(SurveyOption::NO) == 0.0);
}

TEST_CASE("survey questions load from the fixture") {
    const auto questions =
        load_survey_questions_jsonl(testutil::data_path("fixture_questions.jsonl"));
    REQUIRE(questions.size() == 3);
    CHECK(questions[0].id == "q1");
    CHECK(questions[0].text == "Soll die Schweiz das Rentenalter erhöhen?");

    testutil::TempDir tmp;
    testutil::write_file(tmp.file("bad.jsonl"), "{\"id\":\"q1\",\"text\":\"\"}\n");
    CHECK_THROWS_AS(load_survey_questions_jsonl(tmp.file("bad.jsonl")), Error);
}

TEST_CASE("a uniform model answers YES by the canonical tie-break") {
    const Vocab vocab = survey_vocab();
    const LMParams zero(survey_dims(vocab.size()));  // all-zero weights -> uniform
    const std::vector<SurveyQuestion> questions = {{"q1", "Frage eins?"},
                                                   {"q2", "Frage zwei?"}};
    const auto answers = take_survey(zero, vocab, questions);
    REQUIRE(answers.size() == 2);
    for (const auto& a : answers) {
        CHECK(a.answer == SurveyOption::YES);
        // Under the uniform distribution every option's mean log-probability
        // is exactly -log V.
        const double uniform = -std::log(static_cast<double>(vocab.size()));
        for (double s : a.option_scores) {
            CHECK(s == doctest::Approx(uniform).epsilon(1e-12));
        }
    }
    CHECK(answers[0].question_id == "q1");
    CHECK_THROWS_AS(take_survey(zero, vocab, {}), Error);
}

TEST_CASE("a model biased toward 'rather no' tokens answers RATHER_NO") {
    const Vocab vocab = survey_vocab();
    LMParams params(survey_dims(vocab.size()));
    // Static logits (zero weights elsewhere), so each option's mean
    // log-probability is its mean token bias minus a shared constant:
    //   yes        = (0 + 0) / 2        rather yes = (2 + 0 + 0) / 3
    //   rather no  = (2 + 2 + 0) / 3    no         = (2 + 0) / 2
    params.out_bias()[vocab.id_of("rather")] = 2.0;
    params.out_bias()[vocab.id_of("no")] = 2.0;

    const auto answers = take_survey(params, vocab, {{"q1", "Frage?"}});
    REQUIRE(answers.size() == 1);
    CHECK(answers[0].answer == SurveyOption::RATHER_NO);
    const auto& s = answers[0].option_scores;
    CHECK(s[2] > s[3]);  // rather no > no
    CHECK(s[3] > s[1]);  // no > rather yes
    CHECK(s[1] > s[0]);  // rather yes > yes
}

TEST_CASE("survey answers: jsonl round trip enforces arg-max consistency") {
    testutil::TempDir tmp;
    const std::vector<SurveyAnswer> answers = {make_answer("q1", SurveyOption::RATHER_NO),
                                               make_answer("q2", SurveyOption::YES)};
    const std::string path = tmp.file("answers.jsonl");
    save_survey_answers_jsonl(answers, path);
    const auto back = load_survey_answers_jsonl(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].question_id == "q1");
    CHECK(back[0].answer == SurveyOption::RATHER_NO);
    CHECK(back[0].option_scores == answers[0].option_scores);

    nlohmann::json j = answers[0].to_json();
    j["answer"] = "YES";  // no longer the arg-max of the stored scores
    try {
        SurveyAnswer::from_json(j, 7);
        FAIL("expected a parse error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Parse);
        CHECK(std::string(e.what()).find("record 7") != std::string::npos);
    }
    j = answers[0].to_json();
    j["option_scores"] = {1.0, 2.0};
    CHECK_THROWS_AS(SurveyAnswer::from_json(j, 1), Error);
}

TEST_CASE("candidate matching: overlap formula, ordering, unranked") {
    const std::vector<SurveyAnswer> user = {make_answer("q1", SurveyOption::YES),
                                            make_answer("q2", SurveyOption::NO)};
    std::map<std::string, std::vector<SurveyAnswer>> candidates;
    candidates["cand1"] = {make_answer("q1", SurveyOption::YES),
                           make_answer("q2", SurveyOption::NO)};
    candidates["cand2"] = {make_answer("q1", SurveyOption::NO),
                           make_answer("q2", SurveyOption::NO)};
    candidates["cand0"] = {make_answer("q1", SurveyOption::NO),   // same overlap as cand2,
                           make_answer("q2", SurveyOption::NO)};  // id breaks the tie
    candidates["cand3"] = {make_answer("q3", SurveyOption::YES)};

    const MatchResult result = match_candidates(user, candidates);
    REQUIRE(result.ranked.size() == 3);
    CHECK(result.ranked[0].first == "cand1");
    CHECK(result.ranked[0].second == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(result.ranked[1].first == "cand0");
    CHECK(result.ranked[2].first == "cand2");
    // One full-scale disagreement over two shared questions:
    // 1 - sqrt(1) / sqrt(2) = 0.29289...
    const double expected = 1.0 - 1.0 / std::sqrt(2.0);
    CHECK(result.ranked[1].second == doctest::Approx(expected).epsilon(1e-12));
    CHECK(result.ranked[2].second == doctest::Approx(expected).epsilon(1e-12));
    REQUIRE(result.unranked.size() == 1);
    CHECK(result.unranked[0] == "cand3");

    const nlohmann::json j = result.to_json();
    CHECK(j.at("ranked")[0].at("candidate_id") == "cand1");
    CHECK(j.at("ranked")[0].at("overlap") == 1.0);
    CHECK(j.at("unranked")[0] == "cand3");

    const std::vector<SurveyAnswer> dup = {make_answer("q1", SurveyOption::YES),
                                           make_answer("q1", SurveyOption::NO)};
    CHECK_THROWS_AS(match_candidates(dup, candidates), Error);
    CHECK_THROWS_AS(match_candidates({}, candidates), Error);
    CHECK_THROWS_AS(match_candidates(user, {}), Error);
}

// ---------------------------------------------------------------------------
// Overview synthesis
// ---------------------------------------------------------------------------

TEST_CASE("party answer sets validate and round trip") {
    PartyAnswerSet set = demo_answers();
    CHECK_NOTHROW(set.validate());
    const PartyAnswerSet back = PartyAnswerSet::from_json(set.to_json());
    CHECK(back.question == set.question);
    CHECK(back.language == Language::DE);
    REQUIRE(back.answers.size() == 2);
    CHECK(back.answers[1].party == "BETA");
    CHECK(back.answers[1].text == "Wir lehnen die Vorlage ab.");

    PartyAnswerSet bad = set;
    bad.question.clear();
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = set;
    bad.answers.clear();
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = set;
    bad.answers.push_back({"ALPHA", "doppelt"});
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = set;
    bad.answers[0].party.clear();
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("summarizer config: validation, round trip, stable hash") {
    SummarizerConfig cfg = demo_config();
    CHECK_NOTHROW(cfg.validate());

    SummarizerConfig bad = cfg;
    bad.base_url.clear();
    CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::Config);
    bad = cfg;
    bad.max_retries = -1;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = cfg;
    bad.timeout_s = 0.0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = cfg;
    bad.backoff_base_ms = -5;
    CHECK_THROWS_AS(bad.validate(), Error);

    const SummarizerConfig back = SummarizerConfig::from_json(cfg.to_json());
    CHECK(back.base_url == cfg.base_url);
    CHECK(back.model_name == cfg.model_name);
    CHECK(back.api_key_env == cfg.api_key_env);
    CHECK(back.timeout_s == cfg.timeout_s);
    CHECK(back.max_retries == cfg.max_retries);
    CHECK(back.backoff_base_ms == cfg.backoff_base_ms);
    // Missing optional keys keep defaults; base_url stays mandatory.
    const SummarizerConfig minimal =
        SummarizerConfig::from_json({{"base_url", "http://s.example"}});
    CHECK(minimal.timeout_s == 30.0);
    CHECK(minimal.max_retries == 3);
    CHECK(minimal.backoff_base_ms == 1000);
    CHECK_THROWS_AS(SummarizerConfig::from_json(nlohmann::json::object()), Error);

    CHECK(summarizer_config_hash(cfg) == summarizer_config_hash(cfg));
    SummarizerConfig other = cfg;
    other.model_name = "different-model";
    CHECK(summarizer_config_hash(other) != summarizer_config_hash(cfg));
    CHECK(summarizer_config_hash(cfg).size() == 16);  // 64-bit hex
}

TEST_CASE("overview request substitutes the question and lists each party") {
    const nlohmann::json body = build_overview_request(demo_config(), demo_answers());
    CHECK(body.at("model") == "demo-chat");
    REQUIRE(body.at("messages").size() == 1);
    CHECK(body.at("messages")[0].at("role") == "user");
    const std::string content = body.at("messages")[0].at("content").get<std::string>();
    CHECK(content.find("'Braucht es die Vorlage?'") != std::string::npos);
    CHECK(content.find("{Q}") == std::string::npos);
    CHECK(content.find("\n- ALPHA: Wir sagen dazu klar ja.") != std::string::npos);
    CHECK(content.find("\n- BETA: Wir lehnen die Vorlage ab.") != std::string::npos);
    // The balanced-overview contract is stated to the summarizer.
    CHECK(content.find("balanced overview") != std::string::npos);
}

TEST_CASE("overview synthesis: success path hits the chat endpoint once") {
    ScriptedTransport transport;
    transport.script = {ChatResult{200, chat_ok_body("Ein ausgewogener Überblick.")}};
    const std::string overview =
        synthesize_overview(demo_config(), demo_answers(), &transport);
    CHECK(overview == "Ein ausgewogener Überblick.");
    REQUIRE(transport.calls.size() == 1);
    CHECK(transport.calls[0].url == "http://summarizer.example/v1/chat/completions");
    CHECK(transport.calls[0].bearer.empty());
    CHECK(transport.calls[0].timeout_s == 2.0);
    CHECK(transport.calls[0].body == build_overview_request(demo_config(), demo_answers()));

    // A trailing slash on the base URL does not double up.
    SummarizerConfig slashed = demo_config();
    slashed.base_url = "http://summarizer.example/v1/";
    ScriptedTransport transport2;
    transport2.script = transport.script;
    synthesize_overview(slashed, demo_answers(), &transport2);
    CHECK(transport2.calls[0].url == "http://summarizer.example/v1/chat/completions");
}

TEST_CASE("overview synthesis retries transient failures with backoff") {
    ScriptedTransport transport;
    transport.script = {ChatResult{500, "server burp"},
                        ChatResult{0, "transport failure: connection refused"},
                        ChatResult{200, chat_ok_body("Endlich da.")}};
    const std::string overview =
        synthesize_overview(demo_config(), demo_answers(), &transport);
    CHECK(overview == "Endlich da.");
    CHECK(transport.calls.size() == 3);
}

TEST_CASE("overview synthesis fails fast on non-transient statuses") {
    ScriptedTransport transport;
    transport.script = {ChatResult{400, "bad request"}};
    try {
        synthesize_overview(demo_config(), demo_answers(), &transport);
        FAIL("expected a transport error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Transport);
        CHECK(std::string(e.what()).find("400") != std::string::npos);
    }
    CHECK(transport.calls.size() == 1);  // no retries on a 400
}

TEST_CASE("overview synthesis gives up after max_retries") {
    ScriptedTransport transport;
    transport.script = {ChatResult{503, "unavailable"}};
    SummarizerConfig cfg = demo_config();
    cfg.max_retries = 2;
    try {
        synthesize_overview(cfg, demo_answers(), &transport);
        FAIL("expected exhausted retries");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Transport);
        CHECK(std::string(e.what()).find("retries exhausted") != std::string::npos);
    }
    CHECK(transport.calls.size() == 3);  // 1 + 2 retries
}

TEST_CASE("overview synthesis rejects malformed success bodies") {
    ScriptedTransport transport;
    transport.script = {ChatResult{200, "{\"unexpected\":true}"}};
    CHECK(kind_of([&] { synthesize_overview(demo_config(), demo_answers(), &transport); }) ==
          ErrorKind::Parse);
}

TEST_CASE("overview synthesis checks inputs and keys before any network use") {
    ScriptedTransport transport;
    transport.script = {ChatResult{200, chat_ok_body("nie erreicht")}};
    PartyAnswerSet empty = demo_answers();
    empty.answers.clear();
    CHECK(kind_of([&] { synthesize_overview(demo_config(), empty, &transport); }) ==
          ErrorKind::InvalidArgument);
    CHECK(transport.calls.empty());

    // Without an injected transport the API key environment variable must be
    // configured and present.
    SummarizerConfig keyless = demo_config();
    keyless.api_key_env = "";
    CHECK(kind_of([&] { synthesize_overview(keyless, demo_answers(), nullptr); }) ==
          ErrorKind::Config);
    SummarizerConfig unset = demo_config();
    unset.api_key_env = "STANCELAB_TEST_NO_SUCH_KEY";
    ::unsetenv("STANCELAB_TEST_NO_SUCH_KEY");
    CHECK(kind_of([&] { synthesize_overview(unset, demo_answers(), nullptr); }) ==
          ErrorKind::Config);
}

TEST_CASE("an injected transport picks up the bearer token from the environment") {
    SummarizerConfig cfg = demo_config();
    cfg.api_key_env = "STANCELAB_TEST_API_KEY";
    ::setenv("STANCELAB_TEST_API_KEY", "sekrit-token", 1);
    ScriptedTransport transport;
    transport.script = {ChatResult{200, chat_ok_body("ok")}};
    synthesize_overview(cfg, demo_answers(), &transport);
    REQUIRE(transport.calls.size() == 1);
    CHECK(transport.calls[0].bearer == "sekrit-token");

    // Config serialization names the variable but never leaks its value.
    const std::string dumped = cfg.to_json().dump();
    CHECK(dumped.find("STANCELAB_TEST_API_KEY") != std::string::npos);
    CHECK(dumped.find("sekrit-token") == std::string::npos);
    ::unsetenv("STANCELAB_TEST_API_KEY");
}

TEST_CASE("overview provenance records the inputs and hashes") {
    const SummarizerConfig cfg = demo_config();
    const PartyAnswerSet answers = demo_answers();
    const nlohmann::json j = overview_provenance(cfg, answers, "Der Überblick.");
    CHECK(j.at("question") == answers.question);
    CHECK(j.at("language") == "de");
    CHECK(j.at("parties") == nlohmann::json::array({"ALPHA", "BETA"}));
    CHECK(j.at("answers").size() == 2);
    CHECK(j.at("summarizer").at("base_url") == cfg.base_url);
    CHECK(j.at("summarizer_config_hash") == summarizer_config_hash(cfg));
    CHECK(j.at("overview_hash").get<std::string>().size() == 16);
}

TEST_CASE("party answers generate deterministically per party") {
    const Vocab vocab = survey_vocab();
    const ModelDims dims = survey_dims(vocab.size());
    const LMParams params = LMParams::random_init(dims, 3);

    GenerationConfig gen;
    gen.temperature = 0.0;
    gen.max_tokens = 6;
    const std::vector<std::string> parties = {"ALPHA", "BETA"};
    const PartyAnswerSet a =
        generate_party_answers(params, vocab, "Frage?", parties, Language::DE, gen);
    const PartyAnswerSet b =
        generate_party_answers(params, vocab, "Frage?", parties, Language::DE, gen);
    REQUIRE(a.answers.size() == 2);
    CHECK(a.answers[0].party == "ALPHA");
    CHECK(a.answers[1].party == "BETA");
    CHECK(a.question == "Frage?");
    CHECK(a.language == Language::DE);
    for (std::size_t i = 0; i < a.answers.size(); ++i) {
        CHECK(a.answers[i].text == b.answers[i].text);
        CHECK_FALSE(a.answers[i].text.empty());
    }

    // A model that immediately emits EOS produces the placeholder text.
    LMParams eos_lover(dims);
    eos_lover.out_bias()[Vocab::kEos] = 10.0;
    const PartyAnswerSet silent =
        generate_party_answers(eos_lover, vocab, "Frage?", parties, Language::DE, gen);
    for (const auto& ans : silent.answers) CHECK(ans.text == "(empty)");

    CHECK_THROWS_AS(
        generate_party_answers(params, vocab, "Frage?", {}, Language::DE, gen), Error);
    CHECK_THROWS_AS(generate_party_answers(params, vocab, "Frage?", {"ALPHA", "ALPHA"},
                                           Language::DE, gen),
                    Error);
}
