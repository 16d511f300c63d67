#include "stancelab/toystudy.hpp"

#include <array>
#include <cstdio>
#include <filesystem>
#include <utility>

#include "stancelab/encoding.hpp"
#include "stancelab/error.hpp"
#include "stancelab/io_util.hpp"
#include "stancelab/prompts.hpp"
#include "stancelab/rng.hpp"
#include "stancelab/svg.hpp"
#include "stancelab/trainer.hpp"

namespace stancelab {

namespace {

// Disjoint per-party syllable pools; stance words are two syllables plus a
// per-language suffix, so no stance word is shared between parties or
// languages.  Function and filler words are shared by every party.
const std::array<std::array<const char*, 5>, 3> kSyllables = {{
    {"bra", "dul", "fim", "gro", "kel"},
    {"mon", "pra", "sti", "vul", "zet"},
    {"hax", "jor", "lin", "quo", "rud"},
}};
const std::array<std::pair<int, int>, 8> kWordPairs = {{
    {0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 0}, {0, 2}, {1, 3}, {2, 4},
}};
const std::array<const char*, 2> kLangSuffix = {"ung", "eau"};
const std::array<Language, 2> kToyLanguages = {Language::DE, Language::FR};
const std::array<std::array<const char*, 8>, 2> kFunctionWords = {{
    {"die", "wir", "das", "und", "mehr", "ist", "gut", "hier"},
    {"la", "nous", "le", "et", "plus", "est", "bon", "ici"},
}};
const std::array<std::array<const char*, 4>, 2> kFillerWords = {{
    {"politik", "zukunft", "land", "alle"},
    {"politique", "avenir", "pays", "tous"},
}};

std::string toy_issue_id(int issue) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "toy%02d", issue + 1);
    return buf;
}

std::string stance_word(int party, int lang, int w) {
    const auto& [a, b] = kWordPairs[static_cast<std::size_t>(w)];
    const auto& syl = kSyllables[static_cast<std::size_t>(party)];
    return std::string(syl[static_cast<std::size_t>(a)]) + syl[static_cast<std::size_t>(b)] +
           kLangSuffix[static_cast<std::size_t>(lang)];
}

std::string make_stance_text(int party, int lang, Rng& rng) {
    const auto& fn = kFunctionWords[static_cast<std::size_t>(lang)];
    const auto& fill = kFillerWords[static_cast<std::size_t>(lang)];
    std::string out = fn[rng.below(8)];
    out += ' ';
    out += fn[rng.below(8)];
    out += ' ' + stance_word(party, lang, static_cast<int>(rng.below(8)));
    out += ' ' + stance_word(party, lang, static_cast<int>(rng.below(8)));
    out += ' ';
    out += fn[rng.below(8)];
    out += ' ' + stance_word(party, lang, static_cast<int>(rng.below(8)));
    out += ' ';
    out += fill[rng.below(4)];
    return out;
}

// Party-free text; the same string is placed in every party's pool so that
// alignment sees it both as a chosen and as a rejected continuation.
std::string make_generic_text(int lang, Rng& rng) {
    const auto& fn = kFunctionWords[static_cast<std::size_t>(lang)];
    const auto& fill = kFillerWords[static_cast<std::size_t>(lang)];
    std::string out = fn[rng.below(8)];
    out += ' ';
    out += fill[rng.below(4)];
    out += ' ';
    out += fn[rng.below(8)];
    out += ' ';
    out += fn[rng.below(8)];
    out += ' ';
    out += fill[rng.below(4)];
    out += ' ';
    out += fn[rng.below(8)];
    return out;
}

constexpr int kStancePerCell = 4;   // per (party, issue, language)
constexpr int kGenericPerCell = 2;  // identical across parties within (issue, language)

}  // namespace

void ToyStudyOptions::validate() const {
    if (epochs < 1) raise(ErrorKind::InvalidArgument, "toy study: epochs must be >= 1");
    if (batch_size < 1) raise(ErrorKind::InvalidArgument, "toy study: batch_size must be >= 1");
    if (pairs_per_chosen < 1) {
        raise(ErrorKind::InvalidArgument, "toy study: pairs_per_chosen must be >= 1");
    }
    if (max_tokens < 1) raise(ErrorKind::InvalidArgument, "toy study: max_tokens must be >= 1");
    if (vocab_size < 8) raise(ErrorKind::InvalidArgument, "toy study: vocab_size must be >= 8");
    if (mauve_runs < 1) raise(ErrorKind::InvalidArgument, "toy study: mauve_runs must be >= 1");
    ModelDims dims{layers, dim, heads, context, Vocab::kNumSpecials};
    dims.validate();
}

nlohmann::json ToyStudyOptions::to_json() const {
    return nlohmann::json{{"seed", seed},
                          {"epochs", epochs},
                          {"learning_rate", learning_rate},
                          {"lambda", lambda},
                          {"batch_size", batch_size},
                          {"pairs_per_chosen", pairs_per_chosen},
                          {"dim", dim},
                          {"layers", layers},
                          {"heads", heads},
                          {"context", context},
                          {"max_tokens", max_tokens},
                          {"vocab_size", vocab_size},
                          {"mauve_runs", mauve_runs},
                          {"out_dir", out_dir}};
}

ToyStudyOptions ToyStudyOptions::from_json(const nlohmann::json& j) {
    if (!j.is_object()) raise(ErrorKind::Parse, "ToyStudyOptions: expected a JSON object");
    ToyStudyOptions opt;
    for (const auto& [key, value] : j.items()) {
        if (key == "seed") {
            opt.seed = value.get<std::uint64_t>();
        } else if (key == "epochs") {
            opt.epochs = value.get<int>();
        } else if (key == "learning_rate") {
            opt.learning_rate = value.get<double>();
        } else if (key == "lambda") {
            opt.lambda = value.get<double>();
        } else if (key == "batch_size") {
            opt.batch_size = value.get<int>();
        } else if (key == "pairs_per_chosen") {
            opt.pairs_per_chosen = value.get<int>();
        } else if (key == "dim") {
            opt.dim = value.get<int>();
        } else if (key == "layers") {
            opt.layers = value.get<int>();
        } else if (key == "heads") {
            opt.heads = value.get<int>();
        } else if (key == "context") {
            opt.context = value.get<int>();
        } else if (key == "max_tokens") {
            opt.max_tokens = value.get<int>();
        } else if (key == "vocab_size") {
            opt.vocab_size = value.get<int>();
        } else if (key == "mauve_runs") {
            opt.mauve_runs = value.get<int>();
        } else if (key == "out_dir") {
            opt.out_dir = value.get<std::string>();
        } else {
            raise(ErrorKind::Parse, "ToyStudyOptions: unknown key \"" + key + "\"");
        }
    }
    opt.validate();
    return opt;
}

std::vector<Comment> make_toy_corpus(std::uint64_t seed) {
    Rng rng(mix_seed(seed, 7));
    std::vector<Comment> comments;
    comments.reserve(kToyIssueCount * 2 * 3 * (kStancePerCell + kGenericPerCell));
    for (int issue = 0; issue < kToyIssueCount; ++issue) {
        const std::string issue_id = toy_issue_id(issue);
        for (int lang = 0; lang < 2; ++lang) {
            std::array<std::string, kGenericPerCell> generic;
            for (int g = 0; g < kGenericPerCell; ++g) generic[g] = make_generic_text(lang, rng);
            for (int party = 0; party < 3; ++party) {
                for (int v = 0; v < kStancePerCell + kGenericPerCell; ++v) {
                    Comment c;
                    c.issue_id = issue_id;
                    c.party = kToyPartyNames[party];
                    c.language = kToyLanguages[static_cast<std::size_t>(lang)];
                    c.election_year = 2023;
                    c.text = v < kStancePerCell
                                 ? make_stance_text(party, lang, rng)
                                 : generic[static_cast<std::size_t>(v - kStancePerCell)];
                    c.id = issue_id + "-" + language_code(c.language) + "-" + c.party + "-" +
                           std::to_string(v);
                    comments.push_back(std::move(c));
                }
            }
        }
    }
    return comments;
}

std::map<std::string, std::string> toy_issue_questions() {
    std::map<std::string, std::string> out;
    for (int issue = 0; issue < kToyIssueCount; ++issue) {
        const std::string id = toy_issue_id(issue);
        out[id] = "Wie stehen Sie zu " + id + "?";
    }
    return out;
}

namespace {

std::vector<GenerationRecord> generate_all(const LMParams& params, const Vocab& vocab,
                                           const std::map<std::string, std::string>& questions,
                                           const std::string& tag, int max_tokens) {
    GenerationConfig cfg;
    cfg.temperature = 0.0;  // greedy: the baseline repeats itself across parties
    cfg.max_tokens = max_tokens;
    std::vector<GenerationRecord> records;
    for (const auto& [issue_id, question] : questions) {
        for (const char* party : kToyPartyNames) {
            const Instruction instruction = render_instruction(party, Language::DE, question);
            const std::vector<int> prompt = encode_prompt(vocab, instruction);
            std::string text = vocab.decode(sample(params, prompt, cfg));
            if (text.empty()) text = "(empty)";
            records.push_back(GenerationRecord{issue_id, party, Language::DE, text, tag});
        }
    }
    return records;
}

}  // namespace

const ToyModelRow& ToyStudyResult::row(const std::string& tag) const {
    for (const auto& r : rows) {
        if (r.tag == tag) return r;
    }
    raise(ErrorKind::InvalidArgument, "toy study result has no row \"" + tag + "\"");
}

nlohmann::json ToyStudyResult::to_json() const {
    nlohmann::json rows_json = nlohmann::json::array();
    for (const auto& r : rows) {
        rows_json.push_back(nlohmann::json{{"model", r.tag},
                                           {"mean_jaccard", r.mean_jaccard},
                                           {"mauve_mean", r.mauve_mean},
                                           {"mauve_ci95", r.mauve_ci95}});
    }
    return nlohmann::json{{"rows", rows_json},
                          {"jaccard_gap", jaccard_gap},
                          {"jaccard_gap_ok", jaccard_gap_ok},
                          {"mauve_order_ok", mauve_order_ok}};
}

std::string ToyStudyResult::to_csv() const {
    CsvTable table;
    table.header = {"model", "mean_jaccard", "mauve_mean", "mauve_ci95"};
    char buf[64];
    for (const auto& r : rows) {
        std::vector<std::string> row{r.tag};
        std::snprintf(buf, sizeof(buf), "%.6f", r.mean_jaccard);
        row.push_back(buf);
        std::snprintf(buf, sizeof(buf), "%.6f", r.mauve_mean);
        row.push_back(buf);
        std::snprintf(buf, sizeof(buf), "%.6f", r.mauve_ci95);
        row.push_back(buf);
        table.rows.push_back(std::move(row));
    }
    return format_csv(table);
}

ToyStudyResult run_toy_study(const ToyStudyOptions& options) {
    options.validate();

    const std::vector<Comment> corpus = make_toy_corpus(options.seed);
    const std::map<std::string, std::string> questions = toy_issue_questions();
    const SplitAssignment split = split_by_issue(corpus, 0.2, 0.2, mix_seed(options.seed, 11));
    const std::vector<Comment> train_comments = filter_by_split(corpus, split, "train");

    const PairBuildResult pairs = build_preference_triples(
        train_comments, questions, options.pairs_per_chosen, mix_seed(options.seed, 21));

    // The vocabulary covers the training texts and every instruction it will
    // be prompted with (the party token must not collapse to UNK).
    std::vector<std::string> vocab_texts;
    for (const auto& c : train_comments) vocab_texts.push_back(c.text);
    for (const char* party : kToyPartyNames) {
        for (Language lang : kToyLanguages) {
            for (const auto& [issue_id, question] : questions) {
                const Instruction ins = render_instruction(party, lang, question);
                vocab_texts.push_back(ins.system_text);
                vocab_texts.push_back(ins.user_text);
            }
        }
    }
    const Vocab vocab = Vocab::build(vocab_texts, options.vocab_size);

    ModelDims dims{options.layers, options.dim, options.heads, options.context, vocab.size()};
    dims.validate();
    const LMParams init = LMParams::random_init(dims, mix_seed(options.seed, 100));

    TrainConfig base_config;
    base_config.learning_rate = options.learning_rate;
    base_config.epochs = options.epochs;
    base_config.batch_size = options.batch_size;
    base_config.seed = mix_seed(options.seed, 200);

    TrainConfig sft_config = base_config;
    sft_config.objective = Objective::SFT;
    sft_config.lambda = 0.0;
    TrainConfig orpo_config = base_config;
    orpo_config.objective = Objective::ORPO;
    orpo_config.lambda = options.lambda;

    const TrainResult sft = train(pairs.triples, vocab, init, sft_config);
    const TrainResult orpo = train(pairs.triples, vocab, init, orpo_config);

    struct Candidate {
        std::string tag;
        const LMParams* params;
    };
    const std::array<Candidate, 3> candidates = {{
        {"baseline", &init},
        {"sft", &sft.params},
        {"orpo", &orpo.params},
    }};

    // References: held-out (dev + test) German comments.
    std::vector<std::string> refs;
    for (const auto& c : corpus) {
        if (c.language != Language::DE) continue;
        if (split.train.count(c.issue_id)) continue;
        refs.push_back(c.text);
    }

    ToyStudyResult result;
    std::vector<std::vector<GenerationRecord>> all_generations;
    for (const auto& cand : candidates) {
        const std::vector<GenerationRecord> generations =
            generate_all(*cand.params, vocab, questions, cand.tag, options.max_tokens);
        const DiversityReport diversity = diversity_report(generations);
        std::vector<std::string> gen_texts;
        gen_texts.reserve(generations.size());
        for (const auto& g : generations) gen_texts.push_back(g.text);
        const MauveReport mauve =
            mauve_report(gen_texts, refs, FeaturizerKind::HASHED_NGRAM, options.mauve_runs,
                         mix_seed(options.seed, 300));
        result.rows.push_back(
            ToyModelRow{cand.tag, diversity.overall_mean, mauve.mean, mauve.ci95_halfwidth});
        all_generations.push_back(generations);
    }

    const ToyModelRow& baseline = result.row("baseline");
    const ToyModelRow& orpo_row = result.row("orpo");
    result.jaccard_gap = baseline.mean_jaccard - orpo_row.mean_jaccard;
    result.jaccard_gap_ok = result.jaccard_gap >= 0.1;
    result.mauve_order_ok = orpo_row.mauve_mean > baseline.mauve_mean;

    if (!options.out_dir.empty()) {
        namespace fs = std::filesystem;
        fs::create_directories(options.out_dir);
        const fs::path out(options.out_dir);
        write_file((out / "toy_study.csv").string(), result.to_csv());
        write_file((out / "toy_study.json").string(), result.to_json().dump(2) + "\n");
        std::vector<std::pair<std::string, double>> jaccard_bars, mauve_bars;
        for (const auto& r : result.rows) {
            jaccard_bars.emplace_back(r.tag, r.mean_jaccard);
            mauve_bars.emplace_back(r.tag, r.mauve_mean);
        }
        write_bar_chart_svg((out / "jaccard.svg").string(),
                            "Cross-party mean Jaccard (lower = more diverse)", jaccard_bars);
        write_bar_chart_svg((out / "mauve.svg").string(), "MAUVE vs held-out references",
                            mauve_bars);
        for (std::size_t i = 0; i < all_generations.size(); ++i) {
            save_generations_jsonl(all_generations[i],
                                   (out / ("generations_" + result.rows[i].tag + ".jsonl"))
                                       .string());
        }
    }

    return result;
}

}  // namespace stancelab
