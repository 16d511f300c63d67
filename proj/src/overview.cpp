#include "stancelab/overview.hpp"

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <set>
#include <thread>

#include "httplib.h"
#include "stancelab/encoding.hpp"
#include "stancelab/error.hpp"
#include "stancelab/prompts.hpp"
#include "stancelab/rng.hpp"
#include "stancelab/text.hpp"

namespace stancelab {

namespace {

constexpr const char* kSynthesisInstruction =
    "Summarize the following party positions on the question '{Q}' into one balanced overview "
    "paragraph that attributes no position to a wrong party and covers every distinct stance.";

std::string clip_for_message(const std::string& s) {
    if (s.size() <= 200) return s;
    return s.substr(0, 200) + "...";
}

}  // namespace

void PartyAnswerSet::validate() const {
    if (question.empty()) raise(ErrorKind::InvalidArgument, "PartyAnswerSet: empty question");
    if (answers.empty()) raise(ErrorKind::InvalidArgument, "PartyAnswerSet: no answers");
    std::set<std::string> seen;
    for (const auto& a : answers) {
        if (a.party.empty()) raise(ErrorKind::InvalidArgument, "PartyAnswerSet: empty party name");
        if (!seen.insert(a.party).second) {
            raise(ErrorKind::InvalidArgument,
                  "PartyAnswerSet: duplicate party \"" + a.party + "\"");
        }
    }
}

nlohmann::json PartyAnswerSet::to_json() const {
    nlohmann::json answers_json = nlohmann::json::array();
    for (const auto& a : answers) {
        answers_json.push_back(nlohmann::json{{"party", a.party}, {"text", a.text}});
    }
    return nlohmann::json{{"question", question},
                          {"language", language_code(language)},
                          {"answers", answers_json}};
}

PartyAnswerSet PartyAnswerSet::from_json(const nlohmann::json& j) {
    PartyAnswerSet set;
    try {
        set.question = j.at("question").get<std::string>();
        set.language = parse_language(j.at("language").get<std::string>());
        for (const auto& a : j.at("answers")) {
            set.answers.push_back(PartyAnswer{a.at("party").get<std::string>(),
                                              a.at("text").get<std::string>()});
        }
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::Parse, std::string("PartyAnswerSet::from_json: ") + e.what());
    }
    set.validate();
    return set;
}

void SummarizerConfig::validate() const {
    if (base_url.empty()) raise(ErrorKind::Config, "SummarizerConfig: base_url must be non-empty");
    if (max_retries < 0) raise(ErrorKind::Config, "SummarizerConfig: max_retries must be >= 0");
    if (!(timeout_s > 0.0)) raise(ErrorKind::Config, "SummarizerConfig: timeout_s must be > 0");
    if (backoff_base_ms < 0) {
        raise(ErrorKind::Config, "SummarizerConfig: backoff_base_ms must be >= 0");
    }
}

nlohmann::json SummarizerConfig::to_json() const {
    return nlohmann::json{{"base_url", base_url},
                          {"model_name", model_name},
                          {"api_key_env", api_key_env},
                          {"timeout_s", timeout_s},
                          {"max_retries", max_retries},
                          {"backoff_base_ms", backoff_base_ms}};
}

SummarizerConfig SummarizerConfig::from_json(const nlohmann::json& j) {
    SummarizerConfig c;
    try {
        c.base_url = j.at("base_url").get<std::string>();
        c.model_name = j.value("model_name", c.model_name);
        c.api_key_env = j.value("api_key_env", c.api_key_env);
        c.timeout_s = j.value("timeout_s", c.timeout_s);
        c.max_retries = j.value("max_retries", c.max_retries);
        c.backoff_base_ms = j.value("backoff_base_ms", c.backoff_base_ms);
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::Parse, std::string("SummarizerConfig::from_json: ") + e.what());
    }
    c.validate();
    return c;
}

std::string summarizer_config_hash(const SummarizerConfig& config) {
    return fnv1a64_hex(config.to_json().dump());
}

namespace {

class HttpChatTransport final : public ChatTransport {
public:
    ChatResult post_chat(const std::string& url, const std::string& bearer_token,
                         const nlohmann::json& body, double timeout_s) override {
        const auto scheme_end = url.find("://");
        if (scheme_end == std::string::npos) {
            return ChatResult{0, "invalid URL (missing scheme): " + url};
        }
        const auto path_start = url.find('/', scheme_end + 3);
        const std::string root = path_start == std::string::npos ? url : url.substr(0, path_start);
        const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

        httplib::Client client(root);
        const auto sec = static_cast<time_t>(timeout_s);
        const auto usec = static_cast<time_t>((timeout_s - static_cast<double>(sec)) * 1e6);
        client.set_connection_timeout(sec, usec);
        client.set_read_timeout(sec, usec);
        client.set_write_timeout(sec, usec);

        httplib::Headers headers;
        if (!bearer_token.empty()) {
            headers.emplace("Authorization", "Bearer " + bearer_token);
        }
        auto res = client.Post(path, headers, body.dump(), "application/json");
        if (!res) {
            return ChatResult{0, "transport failure: " + httplib::to_string(res.error())};
        }
        return ChatResult{res->status, res->body};
    }
};

bool is_transient(const ChatResult& r) {
    return r.status <= 0 || r.status == 408 || r.status == 429 ||
           (r.status >= 500 && r.status <= 599);
}

std::string describe(const ChatResult& r) {
    if (r.status <= 0) return r.body;
    return "HTTP " + std::to_string(r.status);
}

std::string extract_message_content(const std::string& body) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(body);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::Parse, std::string("summarizer response not in chat-completions form: ") +
                                    e.what() + "; body: " + clip_for_message(body));
    }
}

}  // namespace

std::unique_ptr<ChatTransport> make_http_transport() {
    return std::make_unique<HttpChatTransport>();
}

nlohmann::json build_overview_request(const SummarizerConfig& config,
                                      const PartyAnswerSet& answers) {
    config.validate();
    answers.validate();
    std::string instruction = kSynthesisInstruction;
    const std::string marker = "{Q}";
    instruction.replace(instruction.find(marker), marker.size(), answers.question);

    std::string content = instruction;
    content += "\n";
    for (const auto& a : answers.answers) {
        content += "\n- " + a.party + ": " + a.text;
    }
    return nlohmann::json{
        {"model", config.model_name},
        {"messages", nlohmann::json::array({nlohmann::json{{"role", "user"},
                                                           {"content", content}}})}};
}

std::string synthesize_overview(const SummarizerConfig& config, const PartyAnswerSet& answers,
                                ChatTransport* transport) {
    config.validate();
    answers.validate();
    const nlohmann::json body = build_overview_request(config, answers);

    std::string bearer;
    std::unique_ptr<ChatTransport> owned;
    if (transport == nullptr) {
        if (config.api_key_env.empty()) {
            raise(ErrorKind::Config, "synthesize_overview: api_key_env is not configured");
        }
        const char* key = std::getenv(config.api_key_env.c_str());
        if (key == nullptr || *key == '\0') {
            raise(ErrorKind::Config, "synthesize_overview: environment variable " +
                                         config.api_key_env + " is not set");
        }
        bearer = key;
        owned = make_http_transport();
        transport = owned.get();
    } else if (!config.api_key_env.empty()) {
        if (const char* key = std::getenv(config.api_key_env.c_str())) bearer = key;
    }

    std::string url = config.base_url;
    while (!url.empty() && url.back() == '/') url.pop_back();
    url += "/chat/completions";

    const int attempts = config.max_retries + 1;
    ChatResult last;
    for (int attempt = 1; attempt <= attempts; ++attempt) {
        last = transport->post_chat(url, bearer, body, config.timeout_s);
        if (last.status == 200) {
            return extract_message_content(last.body);
        }
        if (!is_transient(last)) {
            raise(ErrorKind::Transport, "summarizer request failed with " + describe(last) +
                                            ": " + clip_for_message(last.body));
        }
        if (attempt < attempts) {
            const long delay_ms = static_cast<long>(config.backoff_base_ms) << (attempt - 1);
            std::cerr << "[stancelab] summarizer request failed (" << describe(last)
                      << "); retry " << attempt << "/" << config.max_retries << " in " << delay_ms
                      << " ms" << std::endl;
            std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
        }
    }
    raise(ErrorKind::Transport,
          "summarizer retries exhausted after " + std::to_string(attempts) +
              " attempts; last failure: " + describe(last));
}

nlohmann::json overview_provenance(const SummarizerConfig& config, const PartyAnswerSet& answers,
                                   const std::string& overview) {
    std::vector<std::string> parties;
    parties.reserve(answers.answers.size());
    for (const auto& a : answers.answers) parties.push_back(a.party);
    return nlohmann::json{{"question", answers.question},
                          {"language", language_code(answers.language)},
                          {"parties", parties},
                          {"answers", answers.to_json().at("answers")},
                          {"summarizer", config.to_json()},
                          {"summarizer_config_hash", summarizer_config_hash(config)},
                          {"overview_hash", fnv1a64_hex(overview)}};
}

PartyAnswerSet generate_party_answers(const LMParams& params, const Vocab& vocab,
                                      const std::string& question,
                                      const std::vector<std::string>& parties, Language language,
                                      const GenerationConfig& gen_config) {
    if (parties.empty()) raise(ErrorKind::InvalidArgument, "generate_party_answers: no parties");
    gen_config.validate();

    PartyAnswerSet set;
    set.question = question;
    set.language = language;
    for (std::size_t i = 0; i < parties.size(); ++i) {
        const std::string& party = parties[i];
        try {
            const Instruction instruction = render_instruction(party, language, question);
            const std::vector<int> prompt = encode_prompt(vocab, instruction);
            GenerationConfig per_party = gen_config;
            per_party.seed = mix_seed(gen_config.seed, static_cast<std::uint64_t>(i));
            const std::vector<int> ids = sample(params, prompt, per_party);
            std::string text = vocab.decode(ids);
            if (text.empty()) text = "(empty)";
            set.answers.push_back(PartyAnswer{party, std::move(text)});
        } catch (const Error& e) {
            raise(e.kind(), "generate_party_answers: party \"" + party + "\": " + e.what());
        }
    }
    set.validate();
    return set;
}

}  // namespace stancelab
