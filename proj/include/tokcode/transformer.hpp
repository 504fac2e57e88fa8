#pragma once

#include <map>
#include <type_traits>
#include <string>
#include <vector>

#include "tokcode/tensor.hpp"
#include "tokcode/vocab.hpp"

namespace tokcode {

struct TransformerConfig {
    int layers = 2;
    int d_model = 64;
    int heads = 4;
    int d_ff = 128;
    int max_len = 32;
    int vocab_total = 0;
    uint64_t seed = 0;

    void validate() const {
        if (layers < 1 || d_model < 1 || heads < 1 || d_ff < 1 || max_len < 2 ||
            vocab_total < 2) {
            throw ConfigError("transformer: all dimensions must be positive");
        }
        if (d_model % heads != 0) {
            throw ConfigError("transformer: d_model " + std::to_string(d_model) +
                              " not divisible by heads " + std::to_string(heads));
        }
    }

    bool operator==(const TransformerConfig&) const = default;
};

template <class Real>
struct NamedTensor {
    int rows = 0;
    int cols = 0;
    std::vector<Real> value;

    size_t numel() const { return value.size(); }
};

template <class Real>
using WeightMap = std::map<std::string, NamedTensor<Real>>;

// ---------------------------------------------------------------------------
// LoRA adapters. The frozen weight W maps [d_in -> d_out]; the adapter adds
// x*A*B with A [d_in, r] (small random init) and B [r, d_out] (zero init), so
// a fresh adapter leaves the model exactly unchanged.
// ---------------------------------------------------------------------------

template <class Real>
struct LoraAdapter {
    std::string target;
    int rank = 0;
    NamedTensor<Real> a;
    NamedTensor<Real> b;

    long trainable_count() const { return static_cast<long>(a.numel() + b.numel()); }
};

template <class Real>
struct LoraSet {
    int rank = 0;
    std::vector<LoraAdapter<Real>> adapters;
    uint64_t base_hash = 0;

    const LoraAdapter<Real>* find(const std::string& target) const {
        for (const auto& ad : adapters) {
            if (ad.target == target) return &ad;
        }
        return nullptr;
    }
};

struct LoraParamCount {
    long trainable = 0;
    long frozen = 0;
    double fraction = 0.0;
};

// ---------------------------------------------------------------------------
// The toy encoder-decoder. Pre-LN blocks, learned positional embeddings,
// untied output head, no biases on linear projections.
// ---------------------------------------------------------------------------

template <class Real>
struct Transformer {
    TransformerConfig cfg;
    WeightMap<Real> weights;

    static Transformer<Real> init(const TransformerConfig& cfg);
    uint64_t content_hash() const;
};

namespace detail {

inline std::vector<std::string> matrix_weight_names(const TransformerConfig& cfg) {
    std::vector<std::string> names = {"tok_emb", "pos_emb", "head"};
    for (int i = 0; i < cfg.layers; ++i) {
        const std::string e = "enc." + std::to_string(i);
        for (const char* w : {".attn.Wq", ".attn.Wk", ".attn.Wv", ".attn.Wo", ".ff.W1", ".ff.W2"})
            names.push_back(e + w);
        const std::string d = "dec." + std::to_string(i);
        for (const char* w : {".self.Wq", ".self.Wk", ".self.Wv", ".self.Wo", ".cross.Wq",
                              ".cross.Wk", ".cross.Wv", ".cross.Wo", ".ff.W1", ".ff.W2"})
            names.push_back(d + w);
    }
    return names;
}

inline std::vector<std::string> norm_weight_names(const TransformerConfig& cfg) {
    std::vector<std::string> names;
    for (int i = 0; i < cfg.layers; ++i) {
        const std::string e = "enc." + std::to_string(i);
        for (const char* w : {".ln1.g", ".ln1.b", ".ln2.g", ".ln2.b"}) names.push_back(e + w);
        const std::string d = "dec." + std::to_string(i);
        for (const char* w : {".ln1.g", ".ln1.b", ".ln2.g", ".ln2.b", ".ln3.g", ".ln3.b"})
            names.push_back(d + w);
    }
    names.push_back("enc.lnf.g");
    names.push_back("enc.lnf.b");
    names.push_back("dec.lnf.g");
    names.push_back("dec.lnf.b");
    return names;
}

inline std::pair<int, int> weight_shape(const TransformerConfig& cfg, const std::string& name) {
    if (name == "tok_emb") return {cfg.vocab_total, cfg.d_model};
    if (name == "pos_emb") return {cfg.max_len, cfg.d_model};
    if (name == "head") return {cfg.d_model, cfg.vocab_total};
    if (name.find(".ff.W1") != std::string::npos) return {cfg.d_model, cfg.d_ff};
    if (name.find(".ff.W2") != std::string::npos) return {cfg.d_ff, cfg.d_model};
    if (name.find(".ln") != std::string::npos) return {1, cfg.d_model};
    return {cfg.d_model, cfg.d_model};  // attention projections
}

}  // namespace detail

template <class Real>
Transformer<Real> Transformer<Real>::init(const TransformerConfig& cfg) {
    cfg.validate();
    Transformer<Real> model;
    model.cfg = cfg;
    for (const auto& name : detail::matrix_weight_names(cfg)) {
        const auto [rows, cols] = detail::weight_shape(cfg, name);
        NamedTensor<Real> t;
        t.rows = rows;
        t.cols = cols;
        t.value.resize(static_cast<size_t>(rows) * cols);
        Rng rng(stage_seed(cfg.seed, name));
        const double std_dev =
            (name == "tok_emb" || name == "pos_emb") ? 0.1 : 1.0 / std::sqrt(double(rows));
        for (auto& v : t.value) v = static_cast<Real>(std_dev * rng.next_gauss());
        model.weights.emplace(name, std::move(t));
    }
    for (const auto& name : detail::norm_weight_names(cfg)) {
        NamedTensor<Real> t;
        t.rows = 1;
        t.cols = cfg.d_model;
        t.value.assign(static_cast<size_t>(cfg.d_model),
                       name.back() == 'g' ? Real(1) : Real(0));
        model.weights.emplace(name, std::move(t));
    }
    return model;
}

// Hash over the float32 serialization of every weight, in name order. Bases
// and adapters trained in double hash identically after a save/load cycle.
template <class Real>
uint64_t Transformer<Real>::content_hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [name, t] : weights) {
        h = fnv1a64(name, h);
        h = fnv1a64(&t.rows, sizeof(t.rows), h);
        h = fnv1a64(&t.cols, sizeof(t.cols), h);
        for (Real v : t.value) {
            const float f = static_cast<float>(v);
            h = fnv1a64(&f, sizeof(f), h);
        }
    }
    return h;
}

inline std::vector<std::string> default_lora_targets(const TransformerConfig& cfg) {
    std::vector<std::string> targets;
    for (int i = 0; i < cfg.layers; ++i) {
        const std::string d = "dec." + std::to_string(i);
        targets.push_back(d + ".self.Wq");
        targets.push_back(d + ".self.Wv");
        targets.push_back(d + ".cross.Wq");
        targets.push_back(d + ".cross.Wv");
    }
    return targets;
}

template <class Real>
LoraSet<Real> lora_inject(const Transformer<Real>& base, int rank,
                          const std::vector<std::string>& targets, uint64_t seed) {
    if (rank < 1) throw ConfigError("lora_inject: rank must be >= 1");
    LoraSet<Real> set;
    set.rank = rank;
    set.base_hash = base.content_hash();
    for (const auto& target : targets) {
        auto it = base.weights.find(target);
        if (it == base.weights.end()) {
            throw ConfigError("lora_inject: unknown target weight '" + target + "'");
        }
        const int d_in = it->second.rows;
        const int d_out = it->second.cols;
        LoraAdapter<Real> ad;
        ad.target = target;
        ad.rank = rank;
        ad.a.rows = d_in;
        ad.a.cols = rank;
        ad.a.value.resize(static_cast<size_t>(d_in) * rank);
        Rng rng(stage_seed(seed, "lora." + target));
        for (auto& v : ad.a.value) v = static_cast<Real>(0.05 * rng.next_gauss());
        ad.b.rows = rank;
        ad.b.cols = d_out;
        ad.b.value.assign(static_cast<size_t>(rank) * d_out, Real(0));
        set.adapters.push_back(std::move(ad));
    }
    return set;
}

template <class Real>
LoraParamCount lora_param_count(const LoraSet<Real>& set, const Transformer<Real>& base) {
    LoraParamCount out;
    for (const auto& ad : set.adapters) out.trainable += ad.trainable_count();
    for (const auto& [name, t] : base.weights) out.frozen += static_cast<long>(t.numel());
    out.fraction = out.frozen > 0 ? static_cast<double>(out.trainable) / out.frozen : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Graph forward path (differentiable).
// ---------------------------------------------------------------------------

enum class TrainMode { kFrozen, kFull, kLoraOnly };

template <class Real>
struct ModelLeaves {
    const Transformer<Real>* model = nullptr;
    std::map<std::string, ad::Tensor<Real>> w;
    std::map<std::string, std::pair<ad::Tensor<Real>, ad::Tensor<Real>>> lora;

    const ad::Tensor<Real>& at(const std::string& name) const {
        auto it = w.find(name);
        if (it == w.end()) throw InputError("model leaves: missing weight '" + name + "'");
        return it->second;
    }
};

template <class Real>
ModelLeaves<Real> make_leaves(ad::Graph<Real>& g, const Transformer<Real>& model,
                              const LoraSet<std::type_identity_t<Real>>* lora, TrainMode mode) {
    ModelLeaves<Real> leaves;
    leaves.model = &model;
    const bool train_base = (mode == TrainMode::kFull);
    for (const auto& [name, t] : model.weights) {
        leaves.w.emplace(name, g.leaf(t.rows, t.cols, t.value, train_base, name));
    }
    if (lora != nullptr) {
        const bool train_lora = (mode != TrainMode::kFrozen);
        for (const auto& ad : lora->adapters) {
            auto at = g.leaf(ad.a.rows, ad.a.cols, ad.a.value, train_lora, ad.target + ".lora.a");
            auto bt = g.leaf(ad.b.rows, ad.b.cols, ad.b.value, train_lora, ad.target + ".lora.b");
            leaves.lora.emplace(ad.target, std::make_pair(at, bt));
        }
    }
    return leaves;
}

namespace detail {

template <class Real>
ad::Tensor<Real> linear(const ModelLeaves<Real>& leaves, const ad::Tensor<Real>& x,
                        const std::string& name) {
    ad::Tensor<Real> y = ad::matmul(x, leaves.at(name));
    auto it = leaves.lora.find(name);
    if (it != leaves.lora.end()) {
        y = ad::add(y, ad::matmul(ad::matmul(x, it->second.first), it->second.second));
    }
    return y;
}

template <class Real>
ad::Tensor<Real> norm(const ModelLeaves<Real>& leaves, const ad::Tensor<Real>& x,
                      const std::string& prefix) {
    return ad::layer_norm(x, leaves.at(prefix + ".g"), leaves.at(prefix + ".b"));
}

template <class Real>
ad::Tensor<Real> attention(const ModelLeaves<Real>& leaves, const ad::Tensor<Real>& x_q,
                           const ad::Tensor<Real>& x_kv, const std::string& prefix, int heads,
                           bool causal) {
    const int d = x_q.cols();
    const int dh = d / heads;
    auto q = linear(leaves, x_q, prefix + ".Wq");
    auto k = linear(leaves, x_kv, prefix + ".Wk");
    auto v = linear(leaves, x_kv, prefix + ".Wv");
    const Real inv_sqrt = Real(1) / std::sqrt(Real(dh));
    std::vector<ad::Tensor<Real>> cols;
    for (int h = 0; h < heads; ++h) {
        auto qh = ad::slice_cols(q, h * dh, (h + 1) * dh);
        auto kh = ad::slice_cols(k, h * dh, (h + 1) * dh);
        auto vh = ad::slice_cols(v, h * dh, (h + 1) * dh);
        auto scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt);
        if (causal) scores = ad::causal_mask(scores);
        auto probs = ad::softmax_rows(scores);
        cols.push_back(ad::matmul(probs, vh));
    }
    // Heads are concatenated along columns: transpose-concat-transpose keeps
    // the op set small.
    std::vector<ad::Tensor<Real>> cols_t;
    cols_t.reserve(cols.size());
    for (auto& c : cols) cols_t.push_back(ad::transpose(c));
    auto ctx = ad::transpose(ad::concat_rows(cols_t));
    return linear(leaves, ctx, prefix + ".Wo");
}

template <class Real>
ad::Tensor<Real> feed_forward(const ModelLeaves<Real>& leaves, const ad::Tensor<Real>& x,
                              const std::string& prefix) {
    return ad::matmul(ad::gelu(ad::matmul(x, leaves.at(prefix + ".W1"))),
                      leaves.at(prefix + ".W2"));
}

template <class Real>
ad::Tensor<Real> embed_positions(ad::Graph<Real>& g, const ModelLeaves<Real>& leaves,
                                 std::span<const TokenId> ids) {
    const TransformerConfig& cfg = leaves.model->cfg;
    if (static_cast<int>(ids.size()) > cfg.max_len) {
        throw InputError("transformer: sequence length " + std::to_string(ids.size()) +
                         " exceeds max_len " + std::to_string(cfg.max_len));
    }
    std::vector<TokenId> positions(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<TokenId>(i);
    auto tok = ad::embedding_lookup(leaves.at("tok_emb"), ids);
    auto pos = ad::embedding_lookup(leaves.at("pos_emb"), positions);
    (void)g;
    return ad::add(tok, pos);
}

}  // namespace detail

template <class Real>
ad::Tensor<Real> encoder_forward(ad::Graph<Real>& g, const ModelLeaves<Real>& leaves,
                                 std::span<const TokenId> ids) {
    const TransformerConfig& cfg = leaves.model->cfg;
    auto h = detail::embed_positions(g, leaves, ids);
    for (int i = 0; i < cfg.layers; ++i) {
        const std::string p = "enc." + std::to_string(i);
        auto hn = detail::norm(leaves, h, p + ".ln1");
        h = ad::add(h, detail::attention(leaves, hn, hn, p + ".attn", cfg.heads, false));
        h = ad::add(h, detail::feed_forward(leaves, detail::norm(leaves, h, p + ".ln2"),
                                            p + ".ff"));
    }
    return detail::norm(leaves, h, "enc.lnf");
}

// Teacher-forced decoder over `dec_ids` attending to `enc_out`; returns the
// logit matrix [len(dec_ids), vocab_total].
template <class Real>
ad::Tensor<Real> decoder_forward(ad::Graph<Real>& g, const ModelLeaves<Real>& leaves,
                                 std::span<const TokenId> dec_ids,
                                 const ad::Tensor<Real>& enc_out) {
    const TransformerConfig& cfg = leaves.model->cfg;
    auto h = detail::embed_positions(g, leaves, dec_ids);
    for (int i = 0; i < cfg.layers; ++i) {
        const std::string p = "dec." + std::to_string(i);
        auto hn = detail::norm(leaves, h, p + ".ln1");
        h = ad::add(h, detail::attention(leaves, hn, hn, p + ".self", cfg.heads, true));
        h = ad::add(h, detail::attention(leaves, detail::norm(leaves, h, p + ".ln2"), enc_out,
                                         p + ".cross", cfg.heads, false));
        h = ad::add(h, detail::feed_forward(leaves, detail::norm(leaves, h, p + ".ln3"),
                                            p + ".ff"));
    }
    return ad::matmul(detail::norm(leaves, h, "dec.lnf"), leaves.at("head"));
}

// Decoder input for the token-encoding pass: PAD start token, then x shifted
// right, so the decoder runs exactly |x| steps.
inline std::vector<TokenId> shifted_decoder_input(const TokenSequence& x, TokenId pad_id) {
    std::vector<TokenId> dec(x.ids.size());
    dec[0] = pad_id;
    for (size_t i = 1; i < dec.size(); ++i) dec[i] = x.ids[i - 1];
    return dec;
}

// Argmax over ordinary tokens only; ties resolve to the lowest id.
template <class Real>
TokenId argmax_ordinary(std::span<const Real> logit_row, const Vocabulary& vocab) {
    TokenId best = 0;
    Real best_val = logit_row[0];
    for (TokenId j = 1; j < vocab.size; ++j) {
        if (logit_row[static_cast<size_t>(j)] > best_val) {
            best_val = logit_row[static_cast<size_t>(j)];
            best = j;
        }
    }
    return best;
}

template <class Real>
struct EncodeGraphResult {
    ad::Tensor<Real> logits;
    TokenSequence z;
};

// Token encoding: x is both the conditioning input (encoder) and, shifted,
// the teacher-forced source (decoder). |z| = |x| by construction.
template <class Real>
EncodeGraphResult<Real> encode_tokens_graph(ad::Graph<Real>& g, const ModelLeaves<Real>& leaves,
                                            const TokenSequence& x, const Vocabulary& vocab) {
    if (x.length() < 1) throw InputError("encode_tokens: empty input");
    auto enc_out = encoder_forward(g, leaves, x.ids);
    const auto dec_ids = shifted_decoder_input(x, vocab.pad_id);
    auto logits = decoder_forward(g, leaves, dec_ids, enc_out);
    EncodeGraphResult<Real> out{logits, {}};
    const int n = x.length();
    const int v = logits.cols();
    out.z.ids.resize(n);
    for (int i = 0; i < n; ++i) {
        out.z.ids[i] = argmax_ordinary(
            std::span<const Real>(logits.value().data() + static_cast<size_t>(i) * v, v), vocab);
    }
    return out;
}

}  // namespace tokcode
