#include "stancelab/tinylm.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <utility>

#include "stancelab/error.hpp"
#include "stancelab/io_util.hpp"
#include "stancelab/rng.hpp"
#include "stancelab/text.hpp"

namespace stancelab {

using Eigen::ArrayXd;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

namespace {

const char* kSpecialTokens[Vocab::kNumSpecials] = {"<pad>", "<bos>", "<eos>", "<sep>", "<unk>"};

constexpr double kLnEps = 1e-5;
constexpr double kInitStd = 0.02;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    const double pdf = std::exp(-0.5 * x * x) * kInvSqrt2Pi;
    return cdf + x * pdf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocab
// ---------------------------------------------------------------------------

Vocab::Vocab() {
    tokens_.reserve(kNumSpecials);
    for (int i = 0; i < kNumSpecials; ++i) {
        tokens_.emplace_back(kSpecialTokens[i]);
        ids_.emplace(kSpecialTokens[i], i);
    }
}

Vocab Vocab::build(const std::vector<std::string>& texts, int max_size) {
    if (max_size < kNumSpecials + 3) {
        raise(ErrorKind::InvalidArgument,
              "Vocab::build: max_size must be at least " + std::to_string(kNumSpecials + 3));
    }
    std::map<std::string, long long> counts;
    for (const auto& text : texts) {
        for (auto& word : split_whitespace(text)) {
            ++counts[std::move(word)];
        }
    }
    std::vector<std::pair<std::string, long long>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocab v;
    for (const auto& [word, count] : ranked) {
        if (v.size() >= max_size) break;
        if (v.ids_.count(word)) continue;  // a literal special marker in the text
        v.ids_.emplace(word, v.size());
        v.tokens_.push_back(word);
    }
    return v;
}

int Vocab::id_of(std::string_view token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocab::token_of(int id) const {
    if (id < 0 || id >= size()) {
        raise(ErrorKind::InvalidArgument, "Vocab::token_of: id " + std::to_string(id) +
                                              " outside [0, " + std::to_string(size()) + ")");
    }
    return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(std::string_view text) const {
    std::vector<int> out;
    for (const auto& word : split_whitespace(text)) {
        out.push_back(id_of(word));
    }
    return out;
}

std::string Vocab::decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) {
        if (id < 0 || id >= size()) {
            raise(ErrorKind::InvalidArgument,
                  "Vocab::decode: id " + std::to_string(id) + " outside [0, " +
                      std::to_string(size()) + ")");
        }
        if (is_special(id)) continue;
        if (!out.empty()) out += ' ';
        out += tokens_[static_cast<std::size_t>(id)];
    }
    return out;
}

nlohmann::json Vocab::to_json() const { return nlohmann::json{{"tokens", tokens_}}; }

Vocab Vocab::from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("tokens") || !j.at("tokens").is_array()) {
        raise(ErrorKind::Parse, "Vocab::from_json: expected an object with a \"tokens\" array");
    }
    std::vector<std::string> tokens;
    try {
        tokens = j.at("tokens").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::Parse, std::string("Vocab::from_json: ") + e.what());
    }
    if (tokens.size() < static_cast<std::size_t>(kNumSpecials)) {
        raise(ErrorKind::Parse, "Vocab::from_json: fewer tokens than the reserved specials");
    }
    for (int i = 0; i < kNumSpecials; ++i) {
        if (tokens[static_cast<std::size_t>(i)] != kSpecialTokens[i]) {
            raise(ErrorKind::Parse, "Vocab::from_json: token " + std::to_string(i) +
                                        " is not the expected special " + kSpecialTokens[i]);
        }
    }
    Vocab v;
    v.tokens_.clear();
    v.ids_.clear();
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        auto [it, inserted] = v.ids_.emplace(tokens[i], static_cast<int>(i));
        if (!inserted) {
            raise(ErrorKind::Parse, "Vocab::from_json: duplicate token \"" + tokens[i] + "\"");
        }
        v.tokens_.push_back(tokens[i]);
    }
    return v;
}

// ---------------------------------------------------------------------------
// ModelDims
// ---------------------------------------------------------------------------

void ModelDims::validate() const {
    if (layers < 1) raise(ErrorKind::InvalidArgument, "ModelDims: layers must be >= 1");
    if (dim < 1) raise(ErrorKind::InvalidArgument, "ModelDims: dim must be >= 1");
    if (heads < 1) raise(ErrorKind::InvalidArgument, "ModelDims: heads must be >= 1");
    if (dim % heads != 0) {
        raise(ErrorKind::InvalidArgument, "ModelDims: dim (" + std::to_string(dim) +
                                              ") must be divisible by heads (" +
                                              std::to_string(heads) + ")");
    }
    if (context < 2) raise(ErrorKind::InvalidArgument, "ModelDims: context must be >= 2");
    if (vocab < Vocab::kNumSpecials) {
        raise(ErrorKind::InvalidArgument, "ModelDims: vocab must cover the reserved specials");
    }
}

nlohmann::json ModelDims::to_json() const {
    return nlohmann::json{
        {"layers", layers}, {"dim", dim}, {"heads", heads}, {"context", context}, {"vocab", vocab}};
}

ModelDims ModelDims::from_json(const nlohmann::json& j) {
    ModelDims d;
    try {
        d.layers = j.at("layers").get<int>();
        d.dim = j.at("dim").get<int>();
        d.heads = j.at("heads").get<int>();
        d.context = j.at("context").get<int>();
        d.vocab = j.at("vocab").get<int>();
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::Parse, std::string("ModelDims::from_json: ") + e.what());
    }
    d.validate();
    return d;
}

// ---------------------------------------------------------------------------
// LMParams layout
// ---------------------------------------------------------------------------

namespace {

struct Layout {
    std::size_t emb = 0, pos = 0, layers = 0;
    // offsets within one layer block
    std::size_t ln1_g = 0, ln1_b = 0, qkv_w = 0, qkv_b = 0, attn_w = 0, attn_b = 0;
    std::size_t ln2_g = 0, ln2_b = 0, ff1_w = 0, ff1_b = 0, ff2_w = 0, ff2_b = 0;
    std::size_t layer_stride = 0;
    std::size_t lnf_g = 0, lnf_b = 0, out_w = 0, out_b = 0, total = 0;
};

Layout make_layout(const ModelDims& dims) {
    const std::size_t d = static_cast<std::size_t>(dims.dim);
    const std::size_t v = static_cast<std::size_t>(dims.vocab);
    const std::size_t c = static_cast<std::size_t>(dims.context);
    const std::size_t f = static_cast<std::size_t>(dims.ff_dim());
    Layout L;
    std::size_t off = 0;
    L.emb = off;
    off += d * v;
    L.pos = off;
    off += d * c;
    L.layers = off;
    std::size_t lo = 0;
    L.ln1_g = lo;
    lo += d;
    L.ln1_b = lo;
    lo += d;
    L.qkv_w = lo;
    lo += 3 * d * d;
    L.qkv_b = lo;
    lo += 3 * d;
    L.attn_w = lo;
    lo += d * d;
    L.attn_b = lo;
    lo += d;
    L.ln2_g = lo;
    lo += d;
    L.ln2_b = lo;
    lo += d;
    L.ff1_w = lo;
    lo += f * d;
    L.ff1_b = lo;
    lo += f;
    L.ff2_w = lo;
    lo += d * f;
    L.ff2_b = lo;
    lo += d;
    L.layer_stride = lo;
    off += static_cast<std::size_t>(dims.layers) * L.layer_stride;
    L.lnf_g = off;
    off += d;
    L.lnf_b = off;
    off += d;
    L.out_w = off;
    off += v * d;
    L.out_b = off;
    off += v;
    L.total = off;
    return L;
}

}  // namespace

LMParams::LMParams(const ModelDims& dims) : dims_(dims) {
    dims_.validate();
    flat_ = VectorXd::Zero(static_cast<Eigen::Index>(make_layout(dims_).total));
}

Eigen::Index LMParams::parameter_count_for(const ModelDims& dims) {
    dims.validate();
    return static_cast<Eigen::Index>(make_layout(dims).total);
}

LMParams LMParams::random_init(const ModelDims& dims, std::uint64_t seed) {
    LMParams p(dims);
    Rng rng(seed);
    for (Eigen::Index i = 0; i < p.flat_.size(); ++i) {
        p.flat_[i] = kInitStd * rng.normal();
    }
    for (int l = 0; l < dims.layers; ++l) {
        p.ln1_gain(l).setOnes();
        p.ln1_bias(l).setZero();
        p.qkv_bias(l).setZero();
        p.attn_out_bias(l).setZero();
        p.ln2_gain(l).setOnes();
        p.ln2_bias(l).setZero();
        p.ff1_bias(l).setZero();
        p.ff2_bias(l).setZero();
    }
    p.final_ln_gain().setOnes();
    p.final_ln_bias().setZero();
    p.out_bias().setZero();
    return p;
}

std::size_t LMParams::layer_base(int layer) const {
    if (layer < 0 || layer >= dims_.layers) {
        raise(ErrorKind::InvalidArgument, "LMParams: layer index out of range");
    }
    const Layout L = make_layout(dims_);
    return L.layers + static_cast<std::size_t>(layer) * L.layer_stride;
}

#define STANCELAB_PARAM_MAT(NAME, OFFSET_EXPR, ROWS, COLS)                        \
    LMParams::MatView LMParams::NAME {                                            \
        const Layout L = make_layout(dims_);                                      \
        (void)L;                                                                  \
        return MatView(at(OFFSET_EXPR), (ROWS), (COLS));                          \
    }                                                                             \
    LMParams::ConstMatView LMParams::NAME const {                                 \
        const Layout L = make_layout(dims_);                                      \
        (void)L;                                                                  \
        return ConstMatView(at(OFFSET_EXPR), (ROWS), (COLS));                     \
    }

#define STANCELAB_PARAM_VEC(NAME, OFFSET_EXPR, SIZE)                              \
    LMParams::VecView LMParams::NAME {                                            \
        const Layout L = make_layout(dims_);                                      \
        (void)L;                                                                  \
        return VecView(at(OFFSET_EXPR), (SIZE));                                  \
    }                                                                             \
    LMParams::ConstVecView LMParams::NAME const {                                 \
        const Layout L = make_layout(dims_);                                      \
        (void)L;                                                                  \
        return ConstVecView(at(OFFSET_EXPR), (SIZE));                             \
    }

STANCELAB_PARAM_MAT(token_embedding(), L.emb, dims_.dim, dims_.vocab)
STANCELAB_PARAM_MAT(position_embedding(), L.pos, dims_.dim, dims_.context)
STANCELAB_PARAM_VEC(ln1_gain(int layer), layer_base(layer) + L.ln1_g, dims_.dim)
STANCELAB_PARAM_VEC(ln1_bias(int layer), layer_base(layer) + L.ln1_b, dims_.dim)
STANCELAB_PARAM_MAT(qkv_weight(int layer), layer_base(layer) + L.qkv_w, 3 * dims_.dim, dims_.dim)
STANCELAB_PARAM_VEC(qkv_bias(int layer), layer_base(layer) + L.qkv_b, 3 * dims_.dim)
STANCELAB_PARAM_MAT(attn_out_weight(int layer), layer_base(layer) + L.attn_w, dims_.dim, dims_.dim)
STANCELAB_PARAM_VEC(attn_out_bias(int layer), layer_base(layer) + L.attn_b, dims_.dim)
STANCELAB_PARAM_VEC(ln2_gain(int layer), layer_base(layer) + L.ln2_g, dims_.dim)
STANCELAB_PARAM_VEC(ln2_bias(int layer), layer_base(layer) + L.ln2_b, dims_.dim)
STANCELAB_PARAM_MAT(ff1_weight(int layer), layer_base(layer) + L.ff1_w, dims_.ff_dim(), dims_.dim)
STANCELAB_PARAM_VEC(ff1_bias(int layer), layer_base(layer) + L.ff1_b, dims_.ff_dim())
STANCELAB_PARAM_MAT(ff2_weight(int layer), layer_base(layer) + L.ff2_w, dims_.dim, dims_.ff_dim())
STANCELAB_PARAM_VEC(ff2_bias(int layer), layer_base(layer) + L.ff2_b, dims_.dim)
STANCELAB_PARAM_VEC(final_ln_gain(), L.lnf_g, dims_.dim)
STANCELAB_PARAM_VEC(final_ln_bias(), L.lnf_b, dims_.dim)
STANCELAB_PARAM_MAT(out_weight(), L.out_w, dims_.vocab, dims_.dim)
STANCELAB_PARAM_VEC(out_bias(), L.out_b, dims_.vocab)

#undef STANCELAB_PARAM_MAT
#undef STANCELAB_PARAM_VEC

// ---------------------------------------------------------------------------
// LMModel
// ---------------------------------------------------------------------------

LMModel::LMModel(Vocab v, ModelDims d, LMParams p)
    : vocab(std::move(v)), dims(d), params(std::move(p)) {
    if (params.dims() != dims) {
        raise(ErrorKind::InvalidArgument, "LMModel: parameter dims disagree with model dims");
    }
    if (vocab.size() != dims.vocab) {
        raise(ErrorKind::InvalidArgument, "LMModel: vocab size " + std::to_string(vocab.size()) +
                                              " disagrees with dims.vocab " +
                                              std::to_string(dims.vocab));
    }
}

LMModel LMModel::create(Vocab vocab, ModelDims dims, std::uint64_t seed) {
    dims.vocab = vocab.size();
    dims.validate();
    LMParams params = LMParams::random_init(dims, seed);
    return LMModel(std::move(vocab), dims, std::move(params));
}

nlohmann::json LMModel::to_json() const {
    std::vector<double> values(params.flat().data(), params.flat().data() + params.flat().size());
    return nlohmann::json{{"format", "stancelab-model"},
                          {"version", 1},
                          {"dims", dims.to_json()},
                          {"vocab", vocab.to_json()},
                          {"params", std::move(values)}};
}

LMModel LMModel::from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.value("format", "") != std::string("stancelab-model")) {
        raise(ErrorKind::Parse, "model checkpoint: missing or wrong \"format\" marker");
    }
    if (j.value("version", 0) != 1) {
        raise(ErrorKind::Parse, "model checkpoint: unsupported version");
    }
    ModelDims dims = ModelDims::from_json(j.at("dims"));
    Vocab vocab = Vocab::from_json(j.at("vocab"));
    if (vocab.size() != dims.vocab) {
        raise(ErrorKind::Parse, "model checkpoint: vocab size disagrees with dims.vocab");
    }
    std::vector<double> values;
    try {
        values = j.at("params").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::Parse, std::string("model checkpoint: bad params array: ") + e.what());
    }
    const Eigen::Index expected = LMParams::parameter_count_for(dims);
    if (static_cast<Eigen::Index>(values.size()) != expected) {
        raise(ErrorKind::Parse, "model checkpoint: expected " + std::to_string(expected) +
                                    " parameters, found " + std::to_string(values.size()));
    }
    LMParams params(dims);
    std::copy(values.begin(), values.end(), params.flat().data());
    return LMModel(std::move(vocab), dims, std::move(params));
}

void LMModel::save(const std::string& path) const { write_file(path, to_json().dump()); }

LMModel LMModel::load(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::Parse, "model checkpoint " + path + ": " + e.what());
    }
    return from_json(j);
}

// ---------------------------------------------------------------------------
// Forward pass with caches
// ---------------------------------------------------------------------------

namespace {

struct LnCache {
    MatrixXd x_hat;    // normalized values before gain/bias
    ArrayXd inv_std;   // one entry per column
    MatrixXd out;      // gain * x_hat + bias
};

void layer_norm_forward(const MatrixXd& x, LMParams::ConstVecView gain,
                        LMParams::ConstVecView bias, LnCache& c) {
    const RowVectorXd mu = x.colwise().mean();
    const MatrixXd xc = x.rowwise() - mu;
    const ArrayXd var = xc.array().square().colwise().mean().transpose();
    c.inv_std = (var + kLnEps).rsqrt();
    c.x_hat = (xc.array().rowwise() * c.inv_std.transpose()).matrix();
    c.out = ((c.x_hat.array().colwise() * gain.array()).colwise() + bias.array()).matrix();
}

// Returns d(loss)/d(x) and accumulates the gain/bias gradients.
MatrixXd layer_norm_backward(const MatrixXd& d_out, const LnCache& c, LMParams::ConstVecView gain,
                             LMParams::VecView d_gain, LMParams::VecView d_bias) {
    d_gain += (d_out.array() * c.x_hat.array()).rowwise().sum().matrix();
    d_bias += d_out.rowwise().sum();
    const MatrixXd d_hat = (d_out.array().colwise() * gain.array()).matrix();
    const RowVectorXd m1 = d_hat.colwise().mean();
    const RowVectorXd m2 = (d_hat.array() * c.x_hat.array()).colwise().mean();
    return (((d_hat.rowwise() - m1).array() - c.x_hat.array().rowwise() * m2.array())
                .rowwise() *
            c.inv_std.transpose())
        .matrix();
}

struct LayerCache {
    MatrixXd x_in;                  // d x T
    LnCache ln1;
    MatrixXd qkv;                   // 3d x T
    std::vector<MatrixXd> attn;     // per head: T x T, column j sums to 1 over rows <= j
    MatrixXd concat;                // d x T, heads stacked
    MatrixXd x_mid;                 // after the attention residual
    LnCache ln2;
    MatrixXd ff_pre;                // ff x T
    MatrixXd ff_act;                // gelu(ff_pre)
};

struct ForwardCache {
    std::vector<int> tokens;
    std::vector<LayerCache> layers;
    MatrixXd x_out;                 // input to the final layer norm
    LnCache lnf;
    MatrixXd logits;                // vocab x T
};

void check_tokens(const ModelDims& dims, std::span<const int> tokens, const char* what) {
    if (tokens.empty()) {
        raise(ErrorKind::InvalidArgument, std::string(what) + ": empty token sequence");
    }
    if (static_cast<int>(tokens.size()) > dims.context) {
        raise(ErrorKind::InvalidArgument,
              std::string(what) + ": sequence length " + std::to_string(tokens.size()) +
                  " exceeds the context window " + std::to_string(dims.context));
    }
    for (int id : tokens) {
        if (id < 0 || id >= dims.vocab) {
            raise(ErrorKind::InvalidArgument, std::string(what) + ": token id " +
                                                  std::to_string(id) + " outside [0, " +
                                                  std::to_string(dims.vocab) + ")");
        }
    }
}

void forward(const LMParams& p, std::span<const int> tokens, ForwardCache& cache) {
    const ModelDims& dims = p.dims();
    check_tokens(dims, tokens, "forward");
    const int T = static_cast<int>(tokens.size());
    const int d = dims.dim;
    const int dh = dims.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    cache.tokens.assign(tokens.begin(), tokens.end());
    cache.layers.assign(static_cast<std::size_t>(dims.layers), LayerCache{});

    MatrixXd x(d, T);
    const auto emb = p.token_embedding();
    const auto pos = p.position_embedding();
    for (int t = 0; t < T; ++t) {
        x.col(t) = emb.col(tokens[static_cast<std::size_t>(t)]) + pos.col(t);
    }

    for (int l = 0; l < dims.layers; ++l) {
        LayerCache& lc = cache.layers[static_cast<std::size_t>(l)];
        lc.x_in = x;
        layer_norm_forward(lc.x_in, p.ln1_gain(l), p.ln1_bias(l), lc.ln1);

        lc.qkv = p.qkv_weight(l) * lc.ln1.out;
        lc.qkv.colwise() += p.qkv_bias(l);

        lc.attn.assign(static_cast<std::size_t>(dims.heads), MatrixXd());
        lc.concat.resize(d, T);
        for (int h = 0; h < dims.heads; ++h) {
            const auto q = lc.qkv.middleRows(h * dh, dh);
            const auto k = lc.qkv.middleRows(d + h * dh, dh);
            const auto v = lc.qkv.middleRows(2 * d + h * dh, dh);
            const MatrixXd scores = (k.transpose() * q) * scale;  // (i, j) = k_i . q_j
            MatrixXd& a = lc.attn[static_cast<std::size_t>(h)];
            a = MatrixXd::Zero(T, T);
            for (int j = 0; j < T; ++j) {
                const auto col = scores.col(j).head(j + 1);
                const double mx = col.maxCoeff();
                const ArrayXd e = (col.array() - mx).exp();
                a.col(j).head(j + 1) = (e / e.sum()).matrix();
            }
            lc.concat.middleRows(h * dh, dh) = v * a;
        }

        MatrixXd attn_out = p.attn_out_weight(l) * lc.concat;
        attn_out.colwise() += p.attn_out_bias(l);
        lc.x_mid = lc.x_in + attn_out;

        layer_norm_forward(lc.x_mid, p.ln2_gain(l), p.ln2_bias(l), lc.ln2);
        lc.ff_pre = p.ff1_weight(l) * lc.ln2.out;
        lc.ff_pre.colwise() += p.ff1_bias(l);
        lc.ff_act = lc.ff_pre.unaryExpr([](double u) { return gelu(u); });
        MatrixXd ff_out = p.ff2_weight(l) * lc.ff_act;
        ff_out.colwise() += p.ff2_bias(l);
        x = lc.x_mid + ff_out;
    }

    cache.x_out = x;
    layer_norm_forward(cache.x_out, p.final_ln_gain(), p.final_ln_bias(), cache.lnf);
    cache.logits = p.out_weight() * cache.lnf.out;
    cache.logits.colwise() += p.out_bias();
}

double column_logsumexp(const MatrixXd& logits, int col) {
    const double mx = logits.col(col).maxCoeff();
    return mx + std::log((logits.col(col).array() - mx).exp().sum());
}

// Backpropagates d(loss)/d(logits) through the cached forward pass,
// accumulating parameter gradients into `grad`.
void backward(const LMParams& p, const ForwardCache& cache, const MatrixXd& d_logits,
              LMParams& grad) {
    const ModelDims& dims = p.dims();
    const int T = static_cast<int>(cache.tokens.size());
    const int d = dims.dim;
    const int dh = dims.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    grad.out_weight() += d_logits * cache.lnf.out.transpose();
    grad.out_bias() += d_logits.rowwise().sum();
    const MatrixXd d_nf = p.out_weight().transpose() * d_logits;
    MatrixXd dx = layer_norm_backward(d_nf, cache.lnf, p.final_ln_gain(), grad.final_ln_gain(),
                                      grad.final_ln_bias());

    for (int l = dims.layers - 1; l >= 0; --l) {
        const LayerCache& lc = cache.layers[static_cast<std::size_t>(l)];

        // Feed-forward branch: x = x_mid + ff2(gelu(ff1(ln2(x_mid))))
        const MatrixXd& d_x2 = dx;
        grad.ff2_weight(l) += d_x2 * lc.ff_act.transpose();
        grad.ff2_bias(l) += d_x2.rowwise().sum();
        const MatrixXd d_act = p.ff2_weight(l).transpose() * d_x2;
        const MatrixXd d_pre =
            (d_act.array() * lc.ff_pre.unaryExpr([](double u) { return gelu_grad(u); }).array())
                .matrix();
        grad.ff1_weight(l) += d_pre * lc.ln2.out.transpose();
        grad.ff1_bias(l) += d_pre.rowwise().sum();
        const MatrixXd d_n2 = p.ff1_weight(l).transpose() * d_pre;
        const MatrixXd d_x_mid =
            d_x2 + layer_norm_backward(d_n2, lc.ln2, p.ln2_gain(l), grad.ln2_gain(l),
                                       grad.ln2_bias(l));

        // Attention branch: x_mid = x_in + attn_out(concat)
        grad.attn_out_weight(l) += d_x_mid * lc.concat.transpose();
        grad.attn_out_bias(l) += d_x_mid.rowwise().sum();
        const MatrixXd d_concat = p.attn_out_weight(l).transpose() * d_x_mid;

        MatrixXd d_qkv = MatrixXd::Zero(3 * d, T);
        for (int h = 0; h < dims.heads; ++h) {
            const auto q = lc.qkv.middleRows(h * dh, dh);
            const auto k = lc.qkv.middleRows(d + h * dh, dh);
            const auto v = lc.qkv.middleRows(2 * d + h * dh, dh);
            const MatrixXd& a = lc.attn[static_cast<std::size_t>(h)];
            const auto d_out_h = d_concat.middleRows(h * dh, dh);
            d_qkv.middleRows(2 * d + h * dh, dh) = d_out_h * a.transpose();
            const MatrixXd d_a = v.transpose() * d_out_h;
            MatrixXd d_scores(T, T);
            for (int j = 0; j < T; ++j) {
                const double dot = a.col(j).dot(d_a.col(j));
                d_scores.col(j) = (a.col(j).array() * (d_a.col(j).array() - dot)).matrix();
            }
            d_qkv.middleRows(h * dh, dh) = (k * d_scores) * scale;
            d_qkv.middleRows(d + h * dh, dh) = (q * d_scores.transpose()) * scale;
        }
        grad.qkv_weight(l) += d_qkv * lc.ln1.out.transpose();
        grad.qkv_bias(l) += d_qkv.rowwise().sum();
        const MatrixXd d_n1 = p.qkv_weight(l).transpose() * d_qkv;
        dx = d_x_mid + layer_norm_backward(d_n1, lc.ln1, p.ln1_gain(l), grad.ln1_gain(l),
                                           grad.ln1_bias(l));
    }

    auto d_emb = grad.token_embedding();
    auto d_pos = grad.position_embedding();
    for (int t = 0; t < T; ++t) {
        d_emb.col(cache.tokens[static_cast<std::size_t>(t)]) += dx.col(t);
        d_pos.col(t) += dx.col(t);
    }
}

// Sum of target-token log-probabilities read off cached logits.
double scored_sum_logprob(const ForwardCache& cache, int prompt_len, int target_len) {
    double sum = 0.0;
    for (int i = 0; i < target_len; ++i) {
        const int t = prompt_len - 1 + i;
        const int y = cache.tokens[static_cast<std::size_t>(t + 1)];
        sum += cache.logits(y, t) - column_logsumexp(cache.logits, t);
    }
    return sum;
}

// d(loss)/d(logits) when the loss depends on the sequence only through
// coef * mean_logprob.
MatrixXd scored_d_logits(const ForwardCache& cache, int prompt_len, int target_len, double coef) {
    const double per_token = coef / static_cast<double>(target_len);
    MatrixXd d_logits = MatrixXd::Zero(cache.logits.rows(), cache.logits.cols());
    for (int i = 0; i < target_len; ++i) {
        const int t = prompt_len - 1 + i;
        const int y = cache.tokens[static_cast<std::size_t>(t + 1)];
        const double mx = cache.logits.col(t).maxCoeff();
        ArrayXd probs = (cache.logits.col(t).array() - mx).exp();
        probs /= probs.sum();
        d_logits.col(t) = (-per_token) * probs.matrix();
        d_logits(y, t) += per_token;
    }
    return d_logits;
}

std::vector<int> concat_tokens(std::span<const int> prompt, std::span<const int> target) {
    std::vector<int> seq;
    seq.reserve(prompt.size() + target.size());
    seq.insert(seq.end(), prompt.begin(), prompt.end());
    seq.insert(seq.end(), target.begin(), target.end());
    return seq;
}

void check_prompt_target(const ModelDims& dims, std::span<const int> prompt,
                         std::span<const int> target, const char* what) {
    if (prompt.empty()) raise(ErrorKind::InvalidArgument, std::string(what) + ": empty prompt");
    if (target.empty()) raise(ErrorKind::InvalidArgument, std::string(what) + ": empty target");
    if (static_cast<int>(prompt.size() + target.size()) > dims.context) {
        raise(ErrorKind::InvalidArgument,
              std::string(what) + ": prompt (" + std::to_string(prompt.size()) + ") + target (" +
                  std::to_string(target.size()) + ") exceeds the context window " +
                  std::to_string(dims.context));
    }
}

}  // namespace

Eigen::MatrixXd next_token_log_probs(const LMParams& params, std::span<const int> tokens) {
    ForwardCache cache;
    forward(params, tokens, cache);
    MatrixXd out = cache.logits;
    for (int t = 0; t < out.cols(); ++t) {
        out.col(t).array() -= column_logsumexp(cache.logits, t);
    }
    return out;
}

SequenceScore score_sequence(const LMParams& params, std::span<const int> prompt,
                             std::span<const int> target) {
    check_prompt_target(params.dims(), prompt, target, "score_sequence");
    const std::vector<int> seq = concat_tokens(prompt, target);
    ForwardCache cache;
    forward(params, seq, cache);
    const double sum =
        scored_sum_logprob(cache, static_cast<int>(prompt.size()), static_cast<int>(target.size()));
    return make_sequence_score(sum, static_cast<int>(target.size()));
}

void GenerationConfig::validate() const {
    if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
        raise(ErrorKind::InvalidArgument, "GenerationConfig: temperature must be finite and >= 0");
    }
    if (top_k < 0) raise(ErrorKind::InvalidArgument, "GenerationConfig: top_k must be >= 0");
    if (max_tokens < 1) raise(ErrorKind::InvalidArgument, "GenerationConfig: max_tokens must be >= 1");
}

nlohmann::json GenerationConfig::to_json() const {
    return nlohmann::json{{"temperature", temperature},
                          {"top_k", top_k},
                          {"max_tokens", max_tokens},
                          {"seed", seed}};
}

GenerationConfig GenerationConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) raise(ErrorKind::Parse, "GenerationConfig: expected a JSON object");
    GenerationConfig cfg;
    for (const auto& [key, value] : j.items()) {
        if (key == "temperature") {
            cfg.temperature = value.get<double>();
        } else if (key == "top_k") {
            cfg.top_k = value.get<int>();
        } else if (key == "max_tokens") {
            cfg.max_tokens = value.get<int>();
        } else if (key == "seed") {
            cfg.seed = value.get<std::uint64_t>();
        } else {
            raise(ErrorKind::Parse, "GenerationConfig: unknown key \"" + key + "\"");
        }
    }
    cfg.validate();
    return cfg;
}

std::vector<int> sample(const LMParams& params, std::span<const int> prompt,
                        const GenerationConfig& config) {
    config.validate();
    const ModelDims& dims = params.dims();
    check_tokens(dims, prompt, "sample");
    Rng rng(config.seed);

    std::vector<int> seq(prompt.begin(), prompt.end());
    std::vector<int> out;
    while (static_cast<int>(out.size()) < config.max_tokens &&
           static_cast<int>(seq.size()) < dims.context) {
        ForwardCache cache;
        forward(params, seq, cache);
        const VectorXd logits = cache.logits.col(cache.logits.cols() - 1);

        int next = 0;
        if (config.temperature == 0.0) {
            for (int i = 1; i < logits.size(); ++i) {
                if (logits[i] > logits[next]) next = i;
            }
        } else {
            std::vector<int> kept(static_cast<std::size_t>(logits.size()));
            std::iota(kept.begin(), kept.end(), 0);
            if (config.top_k > 0 && config.top_k < logits.size()) {
                std::sort(kept.begin(), kept.end(), [&](int a, int b) {
                    if (logits[a] != logits[b]) return logits[a] > logits[b];
                    return a < b;
                });
                kept.resize(static_cast<std::size_t>(config.top_k));
                std::sort(kept.begin(), kept.end());
            }
            double mx = logits[kept[0]];
            for (int id : kept) mx = std::max(mx, logits[id]);
            std::vector<double> weights(kept.size());
            double total = 0.0;
            for (std::size_t i = 0; i < kept.size(); ++i) {
                weights[i] = std::exp((logits[kept[i]] - mx) / config.temperature);
                total += weights[i];
            }
            const double r = rng.next_double() * total;
            double cum = 0.0;
            next = kept.back();
            for (std::size_t i = 0; i < kept.size(); ++i) {
                cum += weights[i];
                if (cum > r) {
                    next = kept[i];
                    break;
                }
            }
        }

        if (next == Vocab::kEos) break;
        out.push_back(next);
        seq.push_back(next);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Loss and gradients
// ---------------------------------------------------------------------------

namespace {

void check_triple(const ModelDims& dims, const TokenizedTriple& triple, Objective objective,
                  std::size_t index) {
    const std::string where = "batch element " + std::to_string(index);
    check_prompt_target(dims, triple.prompt, triple.chosen, where.c_str());
    if (objective == Objective::ORPO) {
        if (triple.rejected.empty()) {
            raise(ErrorKind::InvalidArgument, where + ": ORPO needs a rejected continuation");
        }
        check_prompt_target(dims, triple.prompt, triple.rejected, where.c_str());
    }
}

}  // namespace

LossBreakdown batch_loss(const LMParams& params, const std::vector<TokenizedTriple>& batch,
                         Objective objective, double lambda) {
    if (batch.empty()) raise(ErrorKind::InvalidArgument, "batch_loss: empty batch");
    if (lambda < 0.0) raise(ErrorKind::InvalidArgument, "batch_loss: lambda must be >= 0");
    LossBreakdown acc;
    acc.lambda = lambda;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const TokenizedTriple& triple = batch[i];
        check_triple(params.dims(), triple, objective, i);
        const SequenceScore chosen = score_sequence(params, triple.prompt, triple.chosen);
        LossBreakdown one;
        if (objective == Objective::SFT) {
            one.sft = sft_loss(chosen);
            one.total = one.sft;
            one.lambda = lambda;
        } else {
            const SequenceScore rejected = score_sequence(params, triple.prompt, triple.rejected);
            one = orpo_pair_loss(chosen, rejected, lambda);
        }
        if (!std::isfinite(one.total)) {
            raise(ErrorKind::Domain,
                  "batch_loss: non-finite loss at batch element " + std::to_string(i));
        }
        acc.sft += one.sft;
        acc.or_term += one.or_term;
        acc.total += one.total;
    }
    const double n = static_cast<double>(batch.size());
    acc.sft /= n;
    acc.or_term /= n;
    acc.total /= n;
    return acc;
}

LossAndGrad loss_and_grad(const LMParams& params, const std::vector<TokenizedTriple>& batch,
                          Objective objective, double lambda) {
    if (batch.empty()) raise(ErrorKind::InvalidArgument, "loss_and_grad: empty batch");
    if (lambda < 0.0) raise(ErrorKind::InvalidArgument, "loss_and_grad: lambda must be >= 0");

    const double inv_b = 1.0 / static_cast<double>(batch.size());
    LMParams grad(params.dims());
    LossBreakdown acc;
    acc.lambda = lambda;

    // One pair at a time: forward both sequences, derive the scalar
    // coefficients on each mean log-probability, then backpropagate.
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const TokenizedTriple& triple = batch[i];
        check_triple(params.dims(), triple, objective, i);
        const int prompt_len = static_cast<int>(triple.prompt.size());
        const int chosen_len = static_cast<int>(triple.chosen.size());

        ForwardCache cache_w;
        forward(params, concat_tokens(triple.prompt, triple.chosen), cache_w);
        const SequenceScore chosen =
            make_sequence_score(scored_sum_logprob(cache_w, prompt_len, chosen_len), chosen_len);

        if (objective == Objective::SFT) {
            const double total = sft_loss(chosen);
            if (!std::isfinite(total)) {
                raise(ErrorKind::Domain,
                      "loss_and_grad: non-finite loss at batch element " + std::to_string(i));
            }
            acc.sft += total;
            acc.total += total;
            backward(params, cache_w,
                     scored_d_logits(cache_w, prompt_len, chosen_len, -inv_b), grad);
            continue;
        }

        const int rejected_len = static_cast<int>(triple.rejected.size());
        ForwardCache cache_l;
        forward(params, concat_tokens(triple.prompt, triple.rejected), cache_l);
        const SequenceScore rejected = make_sequence_score(
            scored_sum_logprob(cache_l, prompt_len, rejected_len), rejected_len);

        const LossBreakdown one = orpo_pair_loss(chosen, rejected, lambda);
        if (!std::isfinite(one.total)) {
            raise(ErrorKind::Domain,
                  "loss_and_grad: non-finite loss at batch element " + std::to_string(i));
        }
        acc.sft += one.sft;
        acc.or_term += one.or_term;
        acc.total += one.total;

        // z = log_odds(chosen) - log_odds(rejected); d(or_term)/dz = -sigmoid(-z).
        const double z = log_odds_from_mean_logprob(chosen.mean_logprob) -
                         log_odds_from_mean_logprob(rejected.mean_logprob);
        const double sig = sigmoid(-z);
        const double coef_w =
            inv_b * (-1.0 - lambda * sig * log_odds_grad_from_mean_logprob(chosen.mean_logprob));
        const double coef_l =
            inv_b * (lambda * sig * log_odds_grad_from_mean_logprob(rejected.mean_logprob));

        backward(params, cache_w, scored_d_logits(cache_w, prompt_len, chosen_len, coef_w), grad);
        backward(params, cache_l, scored_d_logits(cache_l, prompt_len, rejected_len, coef_l),
                 grad);
    }

    acc.sft *= inv_b;
    acc.or_term *= inv_b;
    acc.total *= inv_b;
    return LossAndGrad{acc, std::move(grad.flat())};
}

}  // namespace stancelab
