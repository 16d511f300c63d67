#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "doctest.h"
#include "stancelab/encoding.hpp"
#include "stancelab/error.hpp"
#include "stancelab/tinylm.hpp"
#include "test_util.hpp"

using namespace stancelab;

namespace {

// Small training-free fixture shared by several cases.
Vocab tiny_vocab() {
    return Vocab::build({"die katze jagt die maus", "die maus rennt weg",
                         "der hund jagt die katze", "eins zwei drei vier"},
                        24);
}

ModelDims tiny_dims(int vocab_size) {
    ModelDims d;
    d.layers = 1;
    d.dim = 8;
    d.heads = 2;
    d.context = 16;
    d.vocab = vocab_size;
    return d;
}

}  // namespace

TEST_CASE("vocab: specials, frequency order, unknown words") {
    Vocab empty;
    CHECK(empty.size() == Vocab::kNumSpecials);
    CHECK(empty.id_of("<pad>") == Vocab::kPad);
    CHECK(empty.id_of("<eos>") == Vocab::kEos);
    CHECK(Vocab::is_special(Vocab::kSep));
    CHECK_FALSE(Vocab::is_special(Vocab::kNumSpecials));

    // Frequencies: die x3, katze x2, hund x1, maus x1 -> with room for three
    // content words the tie between "hund" and "maus" resolves alphabetically.
    Vocab v = Vocab::build({"die katze die hund", "die katze maus"}, 8);
    CHECK(v.size() == 8);
    CHECK(v.id_of("die") == Vocab::kNumSpecials);
    CHECK(v.id_of("katze") == Vocab::kNumSpecials + 1);
    CHECK(v.id_of("hund") == Vocab::kNumSpecials + 2);
    CHECK(v.id_of("maus") == Vocab::kUnk);
    CHECK(v.token_of(Vocab::kNumSpecials) == "die");

    const std::vector<int> ids = v.encode("katze  frisst\tdie");
    CHECK(ids == std::vector<int>{6, Vocab::kUnk, 5});
    CHECK(v.decode(ids) == "katze die");  // kUnk is a special and is dropped

    CHECK_THROWS_AS(Vocab::build({}, 3), Error);
    CHECK_THROWS_AS(v.token_of(99), Error);
}

TEST_CASE("vocab: decode drops special tokens") {
    Vocab v = tiny_vocab();
    std::vector<int> ids = {Vocab::kBos, v.id_of("die"), Vocab::kSep, v.id_of("katze"),
                            Vocab::kEos};
    CHECK(v.decode(ids) == "die katze");
    CHECK_THROWS_AS(v.decode(std::vector<int>{v.size()}), Error);
}

TEST_CASE("vocab: json round trip and validation") {
    Vocab v = tiny_vocab();
    Vocab back = Vocab::from_json(v.to_json());
    CHECK(back.size() == v.size());
    for (int i = 0; i < v.size(); ++i) CHECK(back.token_of(i) == v.token_of(i));

    nlohmann::json bad = v.to_json();
    bad["tokens"][0] = "<PAD>";
    CHECK_THROWS_AS(Vocab::from_json(bad), Error);
    nlohmann::json dup = v.to_json();
    dup["tokens"].push_back("die");
    CHECK_THROWS_AS(Vocab::from_json(dup), Error);
}

TEST_CASE("model dims validation") {
    ModelDims d = tiny_dims(10);
    CHECK_NOTHROW(d.validate());
    d.heads = 3;  // 8 % 3 != 0
    CHECK_THROWS_AS(d.validate(), Error);
    d = tiny_dims(10);
    d.context = 1;
    CHECK_THROWS_AS(d.validate(), Error);
    d = tiny_dims(2);  // fewer than the reserved specials
    CHECK_THROWS_AS(d.validate(), Error);
}

TEST_CASE("parameter views tile the flat vector exactly once") {
    const ModelDims d = tiny_dims(13);
    LMParams p(d);

    // Independently derived size: embeddings + per-layer block + head.
    const long dim = d.dim, vocab = d.vocab, ctx = d.context, ff = 4 * d.dim;
    const long per_layer = 2 * dim                 // ln1
                           + 3 * dim * dim + 3 * dim  // qkv
                           + dim * dim + dim          // attn out
                           + 2 * dim                  // ln2
                           + ff * dim + ff            // ff1
                           + dim * ff + dim;          // ff2
    const long expected =
        dim * vocab + dim * ctx + d.layers * per_layer + 2 * dim + vocab * dim + vocab;
    CHECK(expected == 1237);
    CHECK(p.parameter_count() == expected);
    CHECK(LMParams::parameter_count_for(d) == expected);

    // Add one through every named view; afterwards every flat entry must be
    // exactly 1 (no gaps, no overlaps between views).
    p.token_embedding().array() += 1.0;
    p.position_embedding().array() += 1.0;
    for (int l = 0; l < d.layers; ++l) {
        p.ln1_gain(l).array() += 1.0;
        p.ln1_bias(l).array() += 1.0;
        p.qkv_weight(l).array() += 1.0;
        p.qkv_bias(l).array() += 1.0;
        p.attn_out_weight(l).array() += 1.0;
        p.attn_out_bias(l).array() += 1.0;
        p.ln2_gain(l).array() += 1.0;
        p.ln2_bias(l).array() += 1.0;
        p.ff1_weight(l).array() += 1.0;
        p.ff1_bias(l).array() += 1.0;
        p.ff2_weight(l).array() += 1.0;
        p.ff2_bias(l).array() += 1.0;
    }
    p.final_ln_gain().array() += 1.0;
    p.final_ln_bias().array() += 1.0;
    p.out_weight().array() += 1.0;
    p.out_bias().array() += 1.0;
    CHECK((p.flat().array() == 1.0).all());
}

TEST_CASE("random init is deterministic per seed") {
    const ModelDims d = tiny_dims(13);
    LMParams a = LMParams::random_init(d, 7);
    LMParams b = LMParams::random_init(d, 7);
    LMParams c = LMParams::random_init(d, 8);
    CHECK((a.flat().array() == b.flat().array()).all());
    CHECK_FALSE((a.flat().array() == c.flat().array()).all());
    CHECK(a.flat().allFinite());
}

TEST_CASE("zero parameters give an exactly uniform next-token distribution") {
    const ModelDims d = tiny_dims(13);
    const LMParams zero(d);
    const std::vector<int> tokens = {1, 5, 6, 7};
    const Eigen::MatrixXd lp = next_token_log_probs(zero, tokens);
    REQUIRE(lp.rows() == d.vocab);
    REQUIRE(lp.cols() == static_cast<Eigen::Index>(tokens.size()));
    const double uniform = -std::log(static_cast<double>(d.vocab));
    for (Eigen::Index c = 0; c < lp.cols(); ++c) {
        for (Eigen::Index r = 0; r < lp.rows(); ++r) {
            CHECK(lp(r, c) == doctest::Approx(uniform).epsilon(1e-12));
        }
    }
}

TEST_CASE("log-prob columns are normalized") {
    const ModelDims d = tiny_dims(13);
    const LMParams p = LMParams::random_init(d, 3);
    const std::vector<int> tokens = {1, 5, 9, 6, 2};
    const Eigen::MatrixXd lp = next_token_log_probs(p, tokens);
    for (Eigen::Index c = 0; c < lp.cols(); ++c) {
        CHECK(lp.col(c).array().exp().sum() == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("causal mask: a later token cannot change earlier predictions") {
    const ModelDims d = tiny_dims(13);
    const LMParams p = LMParams::random_init(d, 11);
    const std::vector<int> a = {1, 5, 6, 7, 8};
    const std::vector<int> b = {1, 5, 6, 9, 10};  // differs from position 3 on
    const Eigen::MatrixXd la = next_token_log_probs(p, a);
    const Eigen::MatrixXd lb = next_token_log_probs(p, b);
    for (Eigen::Index c = 0; c < 3; ++c) {
        CHECK((la.col(c) - lb.col(c)).cwiseAbs().maxCoeff() < 1e-9);
    }
    // ... and the changed position does feel the difference.
    CHECK((la.col(3) - lb.col(3)).cwiseAbs().maxCoeff() > 1e-9);
}

TEST_CASE("sequence scoring matches the forward log-probs") {
    const ModelDims d = tiny_dims(13);
    const LMParams p = LMParams::random_init(d, 5);
    const std::vector<int> prompt = {1, 5, 6};
    const std::vector<int> target = {7, 8, 2};

    std::vector<int> full = prompt;
    full.insert(full.end(), target.begin(), target.end());
    const Eigen::MatrixXd lp = next_token_log_probs(p, full);
    // Position P-1+t predicts target[t].
    double expected = 0.0;
    for (std::size_t t = 0; t < target.size(); ++t) {
        expected += lp(target[t], static_cast<Eigen::Index>(prompt.size() + t - 1));
    }

    const SequenceScore s = score_sequence(p, prompt, target);
    CHECK(s.length == 3);
    CHECK(s.sum_logprob == doctest::Approx(expected).epsilon(1e-12));
    CHECK(s.mean_logprob == doctest::Approx(expected / 3.0).epsilon(1e-12));

    CHECK_THROWS_AS(score_sequence(p, {}, target), Error);
    CHECK_THROWS_AS(score_sequence(p, prompt, {}), Error);
    const std::vector<int> too_long(20, 5);
    CHECK_THROWS_AS(score_sequence(p, prompt, too_long), Error);
}

TEST_CASE("greedy sampling is the argmax rollout and ignores the seed") {
    const ModelDims d = tiny_dims(13);
    const LMParams p = LMParams::random_init(d, 17);
    const std::vector<int> prompt = {1, 5};

    GenerationConfig greedy;
    greedy.temperature = 0.0;
    greedy.max_tokens = 4;
    greedy.seed = 1;
    const std::vector<int> got = sample(p, prompt, greedy);

    // Manual argmax rollout with the same stopping rules.
    std::vector<int> seq = prompt;
    std::vector<int> manual;
    while (static_cast<int>(manual.size()) < greedy.max_tokens &&
           static_cast<int>(seq.size()) < d.context) {
        const Eigen::MatrixXd lp = next_token_log_probs(p, seq);
        Eigen::Index next = 0;
        lp.col(lp.cols() - 1).maxCoeff(&next);
        if (next == Vocab::kEos) break;
        manual.push_back(static_cast<int>(next));
        seq.push_back(static_cast<int>(next));
    }
    CHECK(got == manual);

    greedy.seed = 999;  // greedy decoding must not depend on the RNG stream
    CHECK(sample(p, prompt, greedy) == manual);
}

TEST_CASE("sampling: determinism, top-k=1, eos stop, validation") {
    const ModelDims d = tiny_dims(13);
    const LMParams p = LMParams::random_init(d, 23);
    const std::vector<int> prompt = {1, 6, 7};

    GenerationConfig cfg;
    cfg.temperature = 0.8;
    cfg.top_k = 3;
    cfg.max_tokens = 6;
    cfg.seed = 42;
    const auto first = sample(p, prompt, cfg);
    CHECK(sample(p, prompt, cfg) == first);
    CHECK(static_cast<int>(first.size()) <= cfg.max_tokens);
    for (int id : first) CHECK(id != Vocab::kEos);

    // top_k = 1 collapses to greedy no matter the temperature.
    GenerationConfig topk1 = cfg;
    topk1.temperature = 5.0;
    topk1.top_k = 1;
    GenerationConfig greedy = cfg;
    greedy.temperature = 0.0;
    CHECK(sample(p, prompt, topk1) == sample(p, prompt, greedy));

    // A model whose only preference is EOS stops immediately.
    LMParams eos_lover(d);
    eos_lover.out_bias()[Vocab::kEos] = 10.0;
    CHECK(sample(eos_lover, prompt, greedy).empty());

    GenerationConfig bad = cfg;
    bad.temperature = -1.0;
    CHECK_THROWS_AS(sample(p, prompt, bad), Error);
    bad = cfg;
    bad.max_tokens = 0;
    CHECK_THROWS_AS(sample(p, prompt, bad), Error);
    bad = cfg;
    bad.top_k = -2;
    CHECK_THROWS_AS(sample(p, prompt, bad), Error);
}

TEST_CASE("generation config json round trip") {
    GenerationConfig cfg;
    cfg.temperature = 0.5;
    cfg.top_k = 7;
    cfg.max_tokens = 9;
    cfg.seed = 1234567890123ULL;
    const GenerationConfig back = GenerationConfig::from_json(cfg.to_json());
    CHECK(back.temperature == cfg.temperature);
    CHECK(back.top_k == cfg.top_k);
    CHECK(back.max_tokens == cfg.max_tokens);
    CHECK(back.seed == cfg.seed);

    // Missing keys keep defaults; unknown keys are rejected.
    const GenerationConfig partial = GenerationConfig::from_json({{"top_k", 2}});
    CHECK(partial.top_k == 2);
    CHECK(partial.temperature == 1.0);
    CHECK_THROWS_AS(GenerationConfig::from_json({{"beam_width", 2}}), Error);
}

TEST_CASE("checkpoint round trip is bit exact") {
    Vocab v = tiny_vocab();
    LMModel model = LMModel::create(v, tiny_dims(v.size()), 99);

    testutil::TempDir tmp;
    const std::string path = tmp.file("model.json");
    model.save(path);
    LMModel back = LMModel::load(path);
    CHECK(back.dims == model.dims);
    CHECK(back.vocab.size() == model.vocab.size());
    CHECK((back.params.flat().array() == model.params.flat().array()).all());

    nlohmann::json j = model.to_json();
    j["dims"]["vocab"] = model.dims.vocab + 1;
    CHECK_THROWS_AS(LMModel::from_json(j), Error);
    CHECK_THROWS_AS(LMModel::load(tmp.file("absent.json")), Error);
}

TEST_CASE("prompt and target encodings") {
    Vocab v = tiny_vocab();
    const Instruction ins{"die katze", "der hund"};
    const std::vector<int> prompt = encode_prompt(v, ins);
    std::vector<int> expected = {Vocab::kBos, v.id_of("die"), v.id_of("katze"), Vocab::kSep,
                                 v.id_of("der"), v.id_of("hund"), Vocab::kSep};
    CHECK(prompt == expected);

    const std::vector<int> target = encode_target(v, "die maus");
    CHECK(target == std::vector<int>{v.id_of("die"), v.id_of("maus"), Vocab::kEos});
}

TEST_CASE("triple tokenization truncates to the context and can skip rejected") {
    Vocab v = tiny_vocab();
    PreferenceTriple t;
    t.instruction = {"die katze", "der hund"};  // 7 prompt tokens once framed
    t.chosen.text = "die maus rennt weg die maus rennt weg die maus rennt weg";
    t.rejected.text = "eins zwei drei";

    const TokenizedTriple full = tokenize_triple(v, t, /*context=*/16);
    CHECK(full.prompt.size() == 7);
    // 16 - 7 = 9 slots: 8 words plus the kept trailing EOS.
    CHECK(full.chosen.size() == 9);
    CHECK(full.chosen.back() == Vocab::kEos);
    CHECK(full.rejected == std::vector<int>{v.id_of("eins"), v.id_of("zwei"), v.id_of("drei"),
                                            Vocab::kEos});

    const TokenizedTriple sft = tokenize_triple(v, t, 16, /*include_rejected=*/false);
    CHECK(sft.rejected.empty());

    // Prompt that fills the whole window leaves no room to continue.
    PreferenceTriple cramped = t;
    cramped.instruction.user_text =
        "der hund der hund der hund der hund der hund der hund der hund";
    CHECK_THROWS_AS(tokenize_triple(v, cramped, 16), Error);
}

TEST_CASE("batch loss agrees with loss_and_grad and with the sft special case") {
    Vocab v = tiny_vocab();
    const ModelDims d = tiny_dims(v.size());
    const LMParams p = LMParams::random_init(d, 31);

    PreferenceTriple t1;
    t1.instruction = {"die katze", "der hund"};
    t1.chosen.text = "die maus rennt weg";
    t1.rejected.text = "eins zwei drei";
    PreferenceTriple t2;
    t2.instruction = {"der hund", "die maus"};
    t2.chosen.text = "die katze jagt";
    t2.rejected.text = "vier eins";
    const std::vector<TokenizedTriple> batch = tokenize_triples(v, {t1, t2}, d.context);

    const LossBreakdown lb = batch_loss(p, batch, Objective::ORPO, 0.4);
    const LossAndGrad lg = loss_and_grad(p, batch, Objective::ORPO, 0.4);
    CHECK(lg.loss.total == doctest::Approx(lb.total).epsilon(1e-14));
    CHECK(lg.loss.sft == doctest::Approx(lb.sft).epsilon(1e-14));
    CHECK(lg.loss.or_term == doctest::Approx(lb.or_term).epsilon(1e-14));
    CHECK(lb.total == doctest::Approx(lb.sft + 0.4 * lb.or_term).epsilon(1e-14));

    // ORPO with lambda 0 degenerates to SFT: identical loss and gradient.
    const LossAndGrad sft = loss_and_grad(p, batch, Objective::SFT, 0.0);
    const LossAndGrad orpo0 = loss_and_grad(p, batch, Objective::ORPO, 0.0);
    CHECK(orpo0.loss.total == sft.loss.total);
    CHECK((orpo0.grad - sft.grad).cwiseAbs().maxCoeff() == 0.0);

    CHECK_THROWS_AS(batch_loss(p, {}, Objective::SFT, 0.0), Error);
    CHECK_THROWS_AS(loss_and_grad(p, batch, Objective::ORPO, -0.5), Error);
    TokenizedTriple no_rejected = batch[0];
    no_rejected.rejected.clear();
    CHECK_THROWS_AS(loss_and_grad(p, {no_rejected}, Objective::ORPO, 0.1), Error);
}

TEST_CASE("analytic gradient matches central differences on sampled coordinates") {
    Vocab v = tiny_vocab();
    const ModelDims d = tiny_dims(v.size());
    LMParams p = LMParams::random_init(d, 41);

    PreferenceTriple t;
    t.instruction = {"die katze", "der hund"};
    t.chosen.text = "die maus rennt";
    t.rejected.text = "eins zwei";
    const std::vector<TokenizedTriple> batch = tokenize_triples(v, {t}, d.context);

    const LossAndGrad lg = loss_and_grad(p, batch, Objective::ORPO, 0.7);
    const Eigen::Index n = p.parameter_count();
    const double h = 1e-5;
    // Probe a deterministic spread of coordinates across the layout.
    for (Eigen::Index k = 0; k < 40; ++k) {
        const Eigen::Index i = (k * n) / 40 + (k % 3);
        const double saved = p.flat()[i];
        p.flat()[i] = saved + h;
        const double up = batch_loss(p, batch, Objective::ORPO, 0.7).total;
        p.flat()[i] = saved - h;
        const double down = batch_loss(p, batch, Objective::ORPO, 0.7).total;
        p.flat()[i] = saved;
        const double fd = (up - down) / (2 * h);
        const double an = lg.grad[i];
        const double rel = std::abs(fd - an) / std::max(1e-6, std::abs(fd) + std::abs(an));
        CAPTURE(i);
        CHECK(rel < 1e-4);
    }
}
