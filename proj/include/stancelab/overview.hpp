#pragma once

#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "stancelab/corpus.hpp"
#include "stancelab/tinylm.hpp"

namespace stancelab {

struct PartyAnswer {
    std::string party;
    std::string text;
};

struct PartyAnswerSet {
    std::string question;
    Language language = Language::DE;
    std::vector<PartyAnswer> answers;  // non-empty, parties unique

    void validate() const;
    nlohmann::json to_json() const;
    static PartyAnswerSet from_json(const nlohmann::json& j);
};

struct SummarizerConfig {
    std::string base_url;
    std::string model_name;
    std::string api_key_env;     // name of the environment variable, never the key
    double timeout_s = 30.0;
    int max_retries = 3;
    int backoff_base_ms = 1000;  // doubles per retry

    void validate() const;
    nlohmann::json to_json() const;  // key material never appears here
    static SummarizerConfig from_json(const nlohmann::json& j);
};

// FNV-1a hash (hex) of the canonical config JSON, for provenance records.
std::string summarizer_config_hash(const SummarizerConfig& config);

// One chat-completions call.  status <= 0 means the request never produced an
// HTTP response (body carries a description); otherwise status is the HTTP
// status and body the raw response body.
struct ChatResult {
    int status = 0;
    std::string body;
};

class ChatTransport {
public:
    virtual ~ChatTransport() = default;
    virtual ChatResult post_chat(const std::string& url, const std::string& bearer_token,
                                 const nlohmann::json& body, double timeout_s) = 0;
};

// Real HTTP transport over httplib.
std::unique_ptr<ChatTransport> make_http_transport();

// Pure function of (config, answers): the chat-completions request body whose
// single user message contains the synthesis instruction (with the question
// substituted) followed by one "- PARTY: answer" line per party.
nlohmann::json build_overview_request(const SummarizerConfig& config,
                                      const PartyAnswerSet& answers);

// Sends the request, retrying transient failures (connect errors, 408, 429,
// 5xx) with exponential backoff, and returns the summarizer's message text.
// With transport == nullptr the real HTTP transport is used and the API key
// must be present in the environment variable named by the config.
std::string synthesize_overview(const SummarizerConfig& config, const PartyAnswerSet& answers,
                                ChatTransport* transport = nullptr);

// Provenance record written alongside an overview: question, parties,
// per-party answers, and the summarizer config hash.
nlohmann::json overview_provenance(const SummarizerConfig& config, const PartyAnswerSet& answers,
                                   const std::string& overview);

// Renders the party-conditioned instruction for each party in order and
// samples one response each.  Per-party sampling seeds are derived from
// gen_config.seed, so temperature-0 runs and fixed-seed runs are
// deterministic.  An empty decode becomes the placeholder "(empty)".
PartyAnswerSet generate_party_answers(const LMParams& params, const Vocab& vocab,
                                      const std::string& question,
                                      const std::vector<std::string>& parties, Language language,
                                      const GenerationConfig& gen_config);

}  // namespace stancelab
