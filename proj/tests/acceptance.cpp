// Acceptance harness: one numbered criterion per check, each printing exactly
// one "[PASS] n: ..." or "[FAIL] n: ..." line.  Run with no arguments to
// execute every criterion, or with a single number to run just that one.
// Exits non-zero if any executed criterion fails.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stancelab/corpus.hpp"
#include "stancelab/encoding.hpp"
#include "stancelab/error.hpp"
#include "stancelab/eval.hpp"
#include "stancelab/objectives.hpp"
#include "stancelab/prompts.hpp"
#include "stancelab/rng.hpp"
#include "stancelab/scores.hpp"
#include "stancelab/survey.hpp"
#include "stancelab/tinylm.hpp"
#include "stancelab/toystudy.hpp"
#include "stancelab/trainer.hpp"

namespace {

using namespace stancelab;

struct CheckFailure {
    std::string message;
};

void require(bool condition, const std::string& message) {
    if (!condition) throw CheckFailure{message};
}

std::string data_path(const std::string& name) {
    return std::string(STANCELAB_TEST_DATA_DIR) + "/" + name;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(double value) {
    std::ostringstream out;
    out.precision(6);
    out << value;
    return out.str();
}

// --------------------------------------------------------------------------
// Shared helpers
// --------------------------------------------------------------------------

std::vector<TokenizedTriple> random_batch(const ModelDims& dims, Rng& rng, int count) {
    const auto token = [&] {
        return static_cast<int>(rng.below(static_cast<std::uint64_t>(dims.vocab)));
    };
    std::vector<TokenizedTriple> batch;
    for (int b = 0; b < count; ++b) {
        TokenizedTriple t;
        const int prompt_len = 2 + static_cast<int>(rng.below(2));
        const int chosen_len = 2 + static_cast<int>(rng.below(3));
        const int rejected_len = 2 + static_cast<int>(rng.below(3));
        for (int i = 0; i < prompt_len; ++i) t.prompt.push_back(token());
        for (int i = 0; i < chosen_len; ++i) t.chosen.push_back(token());
        for (int i = 0; i < rejected_len; ++i) t.rejected.push_back(token());
        batch.push_back(std::move(t));
    }
    return batch;
}

std::vector<PreferenceTriple> fixture_triples() {
    const auto comments =
        ingest_comments(data_path("fixture_corpus.jsonl"), CorpusFormat::Jsonl).comments;
    std::map<std::string, std::string> questions;
    for (const Issue& issue : read_issues_jsonl(data_path("fixture_issues.jsonl"))) {
        questions[issue.issue_id] = issue.question_text;
    }
    return build_preference_triples(comments, questions, 2, 9).triples;
}

Vocab vocab_for(const std::vector<PreferenceTriple>& triples, int max_size) {
    std::vector<std::string> texts;
    for (const auto& t : triples) {
        texts.push_back(t.instruction.system_text);
        texts.push_back(t.instruction.user_text);
        texts.push_back(t.chosen.text);
        texts.push_back(t.rejected.text);
    }
    return Vocab::build(texts, max_size);
}

// --------------------------------------------------------------------------
// 1. Finite-difference gradient check
// --------------------------------------------------------------------------

void criterion_gradients(std::string& detail) {
    const auto start = std::chrono::steady_clock::now();
    const double h = 1e-5;
    double max_rel = 0.0;
    const int model_count = 20;
    for (int m = 0; m < model_count; ++m) {
        // Alternate between two small architectures, both well under 5,000
        // parameters, with fresh random weights each round.
        const ModelDims dims = (m % 2 == 0) ? ModelDims{1, 8, 2, 12, 13}
                                            : ModelDims{1, 12, 3, 12, 11};
        LMParams params = LMParams::random_init(dims, mix_seed(9090, m));
        require(params.parameter_count() <= 5000,
                "model exceeds the 5,000-parameter budget");
        Rng rng(mix_seed(4321, m));
        const std::vector<TokenizedTriple> batch = random_batch(dims, rng, 2);

        for (const Objective objective : {Objective::ORPO, Objective::SFT}) {
            const double lambda = objective == Objective::ORPO ? 0.25 : 0.0;
            const LossAndGrad lg = loss_and_grad(params, batch, objective, lambda);
            for (Eigen::Index i = 0; i < params.parameter_count(); ++i) {
                const double saved = params.flat()[i];
                params.flat()[i] = saved + h;
                const double up = batch_loss(params, batch, objective, lambda).total;
                params.flat()[i] = saved - h;
                const double down = batch_loss(params, batch, objective, lambda).total;
                params.flat()[i] = saved;
                const double fd = (up - down) / (2.0 * h);
                const double an = lg.grad[i];
                const double rel = std::abs(fd - an) / std::max(1e-6, std::abs(fd) + std::abs(an));
                if (rel > max_rel) max_rel = rel;
            }
        }
    }
    const double elapsed = seconds_since(start);
    require(max_rel < 1e-4, "max relative FD error " + fmt(max_rel) + " >= 1e-4");
    require(elapsed < 60.0, "gradient check took " + fmt(elapsed) + " s (budget 60 s)");
    detail = "20 models, max rel err " + fmt(max_rel) + ", " + fmt(elapsed) + " s";
}

// --------------------------------------------------------------------------
// 2. Closed-form odds-ratio losses
// --------------------------------------------------------------------------

void criterion_closed_forms(std::string& detail) {
    const double equal = odds_ratio_loss(log_odds_from_mean_logprob(std::log(0.5)),
                                         log_odds_from_mean_logprob(std::log(0.5)));
    require(std::abs(equal - std::log(2.0)) <= 1e-12,
            "equal-probability loss " + fmt(equal) + " differs from ln 2");

    const double skewed = odds_ratio_loss(log_odds_from_mean_logprob(std::log(0.8)),
                                          log_odds_from_mean_logprob(std::log(0.2)));
    const double expected = std::log(17.0 / 16.0);
    require(std::abs(skewed - expected) <= 1e-9,
            "(0.8, 0.2) loss " + fmt(skewed) + " differs from ln(17/16)");

    // The same values must surface through the pairwise loss breakdown.
    const LossBreakdown pair = orpo_pair_loss(make_sequence_score(std::log(0.8), 1),
                                              make_sequence_score(std::log(0.2), 1), 1.0);
    require(std::abs(pair.or_term - expected) <= 1e-9,
            "pair breakdown or_term disagrees with the closed form");
    detail = "ln 2 within 1e-12, ln(17/16) within 1e-9";
}

// --------------------------------------------------------------------------
// 3. Objective structure in lambda
// --------------------------------------------------------------------------

void criterion_lambda_structure(std::string& detail) {
    const ModelDims dims{1, 8, 2, 12, 13};
    const LMParams params = LMParams::random_init(dims, 555);
    Rng rng(777);
    const std::vector<TokenizedTriple> batch = random_batch(dims, rng, 3);

    const LossAndGrad orpo0 = loss_and_grad(params, batch, Objective::ORPO, 0.0);
    const LossAndGrad sft = loss_and_grad(params, batch, Objective::SFT, 0.0);
    require(orpo0.loss.total == sft.loss.total,
            "lambda=0 total is not bit-identical to the SFT loss");
    require((orpo0.grad - sft.grad).cwiseAbs().maxCoeff() == 0.0,
            "lambda=0 gradient is not bit-identical to the SFT gradient");

    const LossBreakdown l0 = batch_loss(params, batch, Objective::ORPO, 0.0);
    const LossBreakdown lmid = batch_loss(params, batch, Objective::ORPO, 0.35);
    const LossBreakdown l1 = batch_loss(params, batch, Objective::ORPO, 0.7);
    require(std::abs((l0.total + l1.total) / 2.0 - lmid.total) <= 1e-12,
            "total is not affine in lambda");
    require(std::abs(l1.total - (l1.sft + 0.7 * l1.or_term)) <= 1e-12,
            "total does not decompose as sft + lambda * or_term");
    detail = "bitwise SFT match at lambda=0; affine within 1e-12";
}

// --------------------------------------------------------------------------
// 4. MAUVE oracles
// --------------------------------------------------------------------------

void criterion_mauve(std::string& detail) {
    Eigen::VectorXd same(3);
    same << 0.2, 0.3, 0.5;
    const double self_score = mauve_score(same, same).score;
    require(std::abs(self_score - 1.0) <= 1e-9,
            "identical histograms score " + fmt(self_score));

    Eigen::VectorXd p(2), q(2);
    p << 1.0, 0.0;
    q << 0.0, 1.0;
    const double c = 5.0;
    const double disjoint = mauve_score(p, q, c, 1001).score;
    const double closed_form =
        std::exp(std::log(c) + std::lgamma(c) + std::lgamma(c + 1.0) - std::lgamma(2.0 * c + 1.0));
    require(std::abs(disjoint - closed_form) <= 0.002,
            "disjoint score " + fmt(disjoint) + " vs closed form " + fmt(closed_form));

    Eigen::VectorXd a(3), b(3);
    a << 0.6, 0.3, 0.1;
    b << 0.2, 0.2, 0.6;
    const double forward = mauve_score(a, b).score;
    const double backward = mauve_score(b, a).score;
    require(std::abs(forward - backward) <= 1e-9, "mauve_score is not symmetric");
    detail = "self=1, disjoint=" + fmt(disjoint) + " (closed form " + fmt(closed_form) +
             "), symmetric";
}

// --------------------------------------------------------------------------
// 5. Jaccard unit suite
// --------------------------------------------------------------------------

void criterion_jaccard(std::string& detail) {
    const std::set<std::string> ab{"a", "b"};
    const std::set<std::string> bc{"b", "c"};
    const std::set<std::string> cd{"c", "d"};
    require(jaccard(ab, ab) == 1.0, "identical sets must score exactly 1");
    require(jaccard(ab, cd) == 0.0, "disjoint sets must score exactly 0");
    require(jaccard(ab, bc) == 1.0 / 3.0, "{a,b} vs {b,c} must score exactly 1/3");
    require(jaccard(std::set<std::string>{}, std::set<std::string>{}) == 1.0,
            "two empty sets are identical");
    detail = "identical=1, disjoint=0, {a,b}/{b,c}=1/3, all exact";
}

// --------------------------------------------------------------------------
// 6. Pair-builder property suite
// --------------------------------------------------------------------------

void criterion_pair_builder(std::string& detail) {
    const std::vector<std::string> parties{"ALPHA", "BETA", "GAMMA"};
    const std::vector<Language> languages{Language::DE, Language::FR};
    long long total_triples = 0;
    long long violations = 0;
    for (int k = 0; k < 10000; ++k) {
        Rng rng(mix_seed(24242, k));
        const int n_issues = 1 + static_cast<int>(rng.below(4));
        const int n_comments = 2 + static_cast<int>(rng.below(11));
        std::vector<Comment> comments;
        for (int i = 0; i < n_comments; ++i) {
            Comment c;
            c.id = "c" + std::to_string(k) + "-" + std::to_string(i);
            c.issue_id = "i" + std::to_string(rng.below(static_cast<std::uint64_t>(n_issues)));
            c.party = parties[rng.below(parties.size())];
            c.language = languages[rng.below(languages.size())];
            c.election_year = 2023;
            c.text = "wort eins zwei drei vier nummer " + std::to_string(rng.below(1000));
            comments.push_back(std::move(c));
        }
        const int pairs = 1 + static_cast<int>(rng.below(3));
        const PairBuildResult result =
            build_preference_triples(comments, {}, pairs, mix_seed(515, k));
        for (const PreferenceTriple& t : result.triples) {
            ++total_triples;
            if (t.chosen.issue_id != t.rejected.issue_id ||
                t.chosen.language != t.rejected.language ||
                t.chosen.party == t.rejected.party) {
                ++violations;
            }
        }
    }
    require(violations == 0,
            std::to_string(violations) + " constraint violations in " +
                std::to_string(total_triples) + " triples");
    detail = "10,000 corpora, " + std::to_string(total_triples) + " triples, 0 violations";
}

// --------------------------------------------------------------------------
// 7. Toy-study directional reproduction
// --------------------------------------------------------------------------

void criterion_toy_study(std::string& detail) {
    const auto start = std::chrono::steady_clock::now();
    ToyStudyOptions options;  // defaults, seed 1
    const ToyStudyResult result = run_toy_study(options);
    const double elapsed = seconds_since(start);
    const ToyModelRow& baseline = result.row("baseline");
    const ToyModelRow& orpo = result.row("orpo");
    require(result.jaccard_gap_ok,
            "jaccard gap " + fmt(result.jaccard_gap) + " < 0.1 (baseline " +
                fmt(baseline.mean_jaccard) + ", orpo " + fmt(orpo.mean_jaccard) + ")");
    require(result.mauve_order_ok,
            "MAUVE(orpo)=" + fmt(orpo.mauve_mean) + " not above MAUVE(baseline)=" +
                fmt(baseline.mauve_mean));
    require(elapsed < 600.0, "toy study took " + fmt(elapsed) + " s (budget 600 s)");
    detail = "jaccard gap " + fmt(result.jaccard_gap) + ", MAUVE orpo " +
             fmt(orpo.mauve_mean) + " > baseline " + fmt(baseline.mauve_mean) + ", " +
             fmt(elapsed) + " s";
}

// --------------------------------------------------------------------------
// 8. Kappa fixtures
// --------------------------------------------------------------------------

void criterion_kappa(std::string& detail) {
    const auto fixture = load_annotations_jsonl(data_path("fixture_annotations.jsonl"));
    const KappaReport plain = kappa_from_annotations(fixture, false);
    require(plain.kappa == 0.0, "4-item contingency fixture kappa is " + fmt(plain.kappa));

    const std::vector<std::string> labels{"A", "B", "A", "B", "A"};
    require(cohens_kappa(labels, labels) == 1.0, "identical label lists must score 1");

    const auto ties = load_annotations_jsonl(data_path("fixture_annotations_ties.jsonl"));
    const KappaReport keep = kappa_from_annotations(ties, false);
    const KappaReport drop = kappa_from_annotations(ties, true);
    require(drop.items_discarded > 0, "ties fixture discarded no items");
    require(drop.kappa != keep.kappa, "tie-discard left kappa unchanged");
    require(drop.kappa > keep.kappa,
            "tie-discard moved kappa downward (" + fmt(keep.kappa) + " -> " + fmt(drop.kappa) +
                ")");
    detail = "fixture kappa 0 exact; ties " + fmt(keep.kappa) + " -> " + fmt(drop.kappa) +
             " with discard";
}

// --------------------------------------------------------------------------
// 9. Survey constraint
// --------------------------------------------------------------------------

void criterion_survey(std::string& detail) {
    const Vocab vocab = Vocab::build(
        {"yes rather no", "frage antwort partei politik links rechts umwelt steuer rente arbeit"},
        40);
    const ModelDims dims{1, 8, 2, 48, vocab.size()};

    // Words the random questions are built from (specials excluded).
    std::vector<std::string> words;
    for (int id = Vocab::kNumSpecials; id < vocab.size(); ++id) {
        words.push_back(vocab.token_of(id));
    }

    Rng rng(13131);
    for (int i = 0; i < 1000; ++i) {
        const LMParams params = LMParams::random_init(dims, mix_seed(888, i));
        std::string question;
        const int len = 3 + static_cast<int>(rng.below(5));
        for (int w = 0; w < len; ++w) {
            if (w > 0) question += ' ';
            question += words[rng.below(words.size())];
        }
        question += "?";
        const auto answers =
            take_survey(params, vocab, {SurveyQuestion{"q" + std::to_string(i), question}});
        require(answers.size() == 1, "expected exactly one answer");
        const int option = static_cast<int>(answers[0].answer);
        require(option >= 0 && option <= 3,
                "answer outside the four-option scale at iteration " + std::to_string(i));
        require(answers[0].option_scores.size() == 4, "expected four option scores");
    }

    // A zero-parameter model is exactly uniform, so every option's
    // length-normalised log-likelihood must sit at -ln(vocab) up to rounding
    // in the per-option mean, and the reported answer must be their arg-max.
    const LMParams uniform(dims);
    const double expected = -std::log(static_cast<double>(vocab.size()));
    for (const char* question : {"frage eins?", "politik umwelt steuer?", "links rechts?"}) {
        const auto answers = take_survey(uniform, vocab, {SurveyQuestion{"u", question}});
        int best = 0;
        for (int i = 0; i < 4; ++i) {
            const double score = answers[0].option_scores[static_cast<std::size_t>(i)];
            require(std::abs(score - expected) <= 1e-12,
                    "uniform model option score strays from -ln(vocab) for \"" +
                        std::string(question) + "\"");
            if (score > answers[0].option_scores[static_cast<std::size_t>(best)]) best = i;
        }
        require(static_cast<int>(answers[0].answer) == best,
                "uniform model answer is not the arg-max of its option scores");
    }
    detail =
        "1,000 random models stayed on the four-option scale; uniform model scores -ln(vocab)";
}

// --------------------------------------------------------------------------
// 10. Determinism of every pipeline stage
// --------------------------------------------------------------------------

void criterion_determinism(std::string& detail) {
    const auto comments =
        ingest_comments(data_path("fixture_corpus.jsonl"), CorpusFormat::Jsonl).comments;

    const std::string split_a = split_by_issue(comments, 0.34, 0.33, 77).to_json().dump();
    const std::string split_b = split_by_issue(comments, 0.34, 0.33, 77).to_json().dump();
    require(split_a == split_b, "split_by_issue is not deterministic");

    const auto dump_triples = [](const std::vector<PreferenceTriple>& ts) {
        std::string out;
        for (const auto& t : ts) out += t.to_json().dump() + "\n";
        return out;
    };
    const std::string triples_a = dump_triples(build_preference_triples(comments, {}, 2, 123).triples);
    const std::string triples_b = dump_triples(build_preference_triples(comments, {}, 2, 123).triples);
    require(triples_a == triples_b, "build_preference_triples is not deterministic");

    const std::vector<PreferenceTriple> triples = fixture_triples();
    const Vocab vocab = vocab_for(triples, 64);
    const ModelDims dims{1, 16, 2, 64, vocab.size()};
    const LMParams init = LMParams::random_init(dims, 31);
    TrainConfig config;
    config.epochs = 2;
    config.batch_size = 4;
    config.learning_rate = 1e-3;
    config.seed = 9;
    const TrainResult run_a = train(triples, vocab, init, config);
    const TrainResult run_b = train(triples, vocab, init, config);
    require((run_a.params.flat() - run_b.params.flat()).cwiseAbs().maxCoeff() == 0.0,
            "training is not bit-deterministic");
    require(train_log_to_jsonl(run_a.log) == train_log_to_jsonl(run_b.log),
            "training logs differ between reruns");

    const Instruction instruction =
        render_instruction("ALPHA", Language::DE, "Soll die Vorlage angenommen werden?");
    const std::vector<int> prompt = encode_prompt(vocab, instruction);
    GenerationConfig gen;
    gen.temperature = 0.9;
    gen.max_tokens = 12;
    gen.seed = 5;
    const std::vector<int> sample_a = sample(run_a.params, prompt, gen);
    const std::vector<int> sample_b = sample(run_b.params, prompt, gen);
    require(sample_a == sample_b, "sampling is not deterministic");

    const std::vector<std::string> model_texts{"alpha sagt ja zur vorlage",
                                               "beta lehnt die vorlage ab",
                                               "gamma ist unentschlossen heute"};
    const std::vector<std::string> ref_texts{"die vorlage wird diskutiert",
                                             "das parlament debattiert lange",
                                             "die abstimmung kommt bald"};
    const MauveReport mauve_a =
        mauve_report(model_texts, ref_texts, FeaturizerKind::HASHED_NGRAM, 3, 5);
    const MauveReport mauve_b =
        mauve_report(model_texts, ref_texts, FeaturizerKind::HASHED_NGRAM, 3, 5);
    require(mauve_a.to_json().dump() == mauve_b.to_json().dump(),
            "mauve_report is not deterministic");
    detail = "split, triples, training, sampling, and MAUVE rerun bit-identically";
}

// --------------------------------------------------------------------------
// 11. Real-data calibration (optional dataset)
// --------------------------------------------------------------------------

void criterion_real_data(std::string& detail) {
    const char* env = std::getenv("STANCELAB_SMARTVOTE");
    if (env == nullptr || *env == '\0') {
        detail = "skipped: STANCELAB_SMARTVOTE is not set";
        return;
    }
    const std::string path(env);
    const CorpusFormat format = path.size() >= 4 && path.substr(path.size() - 4) == ".csv"
                                    ? CorpusFormat::Csv
                                    : CorpusFormat::Jsonl;
    const IngestResult ingested = ingest_comments(path, format);

    std::size_t fdp = 0;
    for (const Comment& c : ingested.comments) {
        if (c.party == "FDP") ++fdp;
    }
    require(fdp == 15589, "FDP comment count " + std::to_string(fdp) + " != 15,589");

    std::uint64_t seed = 2023;
    if (const char* seed_env = std::getenv("STANCELAB_SMARTVOTE_SEED")) {
        seed = std::strtoull(seed_env, nullptr, 10);
    }
    const SplitAssignment split = split_by_issue(ingested.comments, 0.10, 0.10, seed);
    const StatsReport stats = corpus_stats(ingested.comments, split);
    const auto counts = [&](const std::string& part) {
        const auto it = stats.splits.find(part);
        require(it != stats.splits.end(), "missing split " + part);
        return std::make_pair(it->second.comments, it->second.issues);
    };
    const auto [train_comments, train_issues] = counts("train");
    const auto [dev_comments, dev_issues] = counts("dev");
    const auto [test_comments, test_issues] = counts("test");
    require(train_comments == 92986 && train_issues == 203,
            "train split is " + std::to_string(train_comments) + " comments / " +
                std::to_string(train_issues) + " issues (expected 92,986 / 203)");
    require(dev_comments == 4262 && dev_issues == 7,
            "dev split is " + std::to_string(dev_comments) + " comments / " +
                std::to_string(dev_issues) + " issues (expected 4,262 / 7)");
    require(test_comments == 5488 && test_issues == 7,
            "test split is " + std::to_string(test_comments) + " comments / " +
                std::to_string(test_issues) + " issues (expected 5,488 / 7)");
    detail = "train 92,986/203, dev 4,262/7, test 5,488/7, FDP 15,589";
}

// --------------------------------------------------------------------------

struct Criterion {
    int id;
    const char* summary;
    std::function<void(std::string&)> body;
};

const std::vector<Criterion>& criteria() {
    static const std::vector<Criterion> all{
        {1, "finite-difference gradient check", criterion_gradients},
        {2, "closed-form odds-ratio losses", criterion_closed_forms},
        {3, "objective structure in lambda", criterion_lambda_structure},
        {4, "MAUVE oracles", criterion_mauve},
        {5, "Jaccard unit suite", criterion_jaccard},
        {6, "pair-builder property suite", criterion_pair_builder},
        {7, "toy-study directional reproduction", criterion_toy_study},
        {8, "kappa fixtures", criterion_kappa},
        {9, "survey output constraint", criterion_survey},
        {10, "pipeline determinism", criterion_determinism},
        {11, "real-data calibration", criterion_real_data},
    };
    return all;
}

int run_one(const Criterion& c) {
    std::string detail;
    try {
        c.body(detail);
        std::cout << "[PASS] " << c.id << ": " << c.summary;
        if (!detail.empty()) std::cout << " — " << detail;
        std::cout << "\n";
        return 0;
    } catch (const CheckFailure& f) {
        std::cout << "[FAIL] " << c.id << ": " << c.summary << " — " << f.message << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cout << "[FAIL] " << c.id << ": " << c.summary << " — unexpected error: " << e.what()
                  << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    if (argc > 2) {
        std::cerr << "usage: " << argv[0] << " [criterion-number]\n";
        return 2;
    }
    int failures = 0;
    if (argc == 2) {
        const int wanted = std::atoi(argv[1]);
        for (const Criterion& c : criteria()) {
            if (c.id == wanted) return run_one(c);
        }
        std::cerr << "unknown criterion " << argv[1] << " (valid: 1.."
                  << criteria().back().id << ")\n";
        return 2;
    }
    for (const Criterion& c : criteria()) failures += run_one(c);
    return failures == 0 ? 0 : 1;
}
