#pragma once

#include <string>
#include <vector>

#include "tokcode/tensor.hpp"
#include "tokcode/transformer.hpp"

namespace tokcode {

enum class EmbedderVariant { kPooled, kTinyEncoder };

inline std::string embedder_variant_name(EmbedderVariant v) {
    return v == EmbedderVariant::kPooled ? "pooled" : "tiny_encoder";
}

inline EmbedderVariant embedder_variant_from_name(const std::string& s) {
    if (s == "pooled") return EmbedderVariant::kPooled;
    if (s == "tiny_encoder") return EmbedderVariant::kTinyEncoder;
    throw ConfigError("embedder: unknown variant '" + s + "'");
}

struct EmbedderConfig {
    EmbedderVariant variant = EmbedderVariant::kPooled;
    int dim = 32;        // D'
    int vocab_total = 0;
    int max_len = 40;
    uint64_t seed = 101;

    void validate() const {
        validate_dims_only();
        if (vocab_total < 2) throw ConfigError("embedder: codebook needs at least two rows");
    }

    // Checks the fields that are meaningful before the vocabulary is built.
    void validate_dims_only() const {
        if (dim < 1 || max_len < 2) {
            throw ConfigError("embedder: dimensions must be positive");
        }
    }
};

// Frozen sentence embedder with its own codebook. Accepts either token ids
// or a row matrix already living in its codebook space; both input modes run
// the identical pooling path, so they agree bit-exactly. Differentiable with
// respect to supplied rows.
template <class Real>
class SentenceEmbedder {
public:
    static SentenceEmbedder<Real> make(const EmbedderConfig& cfg) {
        cfg.validate();
        SentenceEmbedder<Real> e;
        e.cfg_ = cfg;
        e.codebook_.rows = cfg.vocab_total;
        e.codebook_.cols = cfg.dim;
        e.codebook_.value.resize(static_cast<size_t>(cfg.vocab_total) * cfg.dim);
        {
            Rng rng(stage_seed(cfg.seed, "sent-codebook"));
            for (auto& v : e.codebook_.value) v = static_cast<Real>(rng.next_gauss());
        }
        e.pos_weights_.resize(static_cast<size_t>(cfg.max_len));
        {
            Rng rng(stage_seed(cfg.seed, "sent-pos-weights"));
            for (auto& w : e.pos_weights_) {
                w = static_cast<Real>(0.9 + 0.2 * rng.next_double());
            }
        }
        e.out_map_.rows = cfg.dim;
        e.out_map_.cols = cfg.dim;
        e.out_map_.value.resize(static_cast<size_t>(cfg.dim) * cfg.dim);
        {
            Rng rng(stage_seed(cfg.seed, "sent-out-map"));
            const double s = 1.0 / std::sqrt(double(cfg.dim));
            for (auto& v : e.out_map_.value) v = static_cast<Real>(s * rng.next_gauss());
        }
        if (cfg.variant == EmbedderVariant::kTinyEncoder) {
            TransformerConfig tc;
            tc.layers = 1;
            tc.d_model = cfg.dim;
            tc.heads = cfg.dim % 4 == 0 ? 4 : 1;
            tc.d_ff = 2 * cfg.dim;
            tc.max_len = cfg.max_len;
            tc.vocab_total = cfg.vocab_total;
            tc.seed = stage_seed(cfg.seed, "sent-tiny-encoder");
            e.enc_ = std::make_shared<Transformer<Real>>(Transformer<Real>::init(tc));
        }
        return e;
    }

    const EmbedderConfig& config() const { return cfg_; }
    int dim() const { return cfg_.dim; }
    const NamedTensor<Real>& codebook() const { return codebook_; }

    // Graph path on rows from this embedder's codebook space; [1, dim] output.
    ad::Tensor<Real> embed_rows(ad::Graph<Real>& g, const ad::Tensor<Real>& rows) const {
        if (rows.cols() != cfg_.dim) {
            throw InputError("embed_sentence: rows have dim " + std::to_string(rows.cols()) +
                             ", codebook has dim " + std::to_string(cfg_.dim));
        }
        if (rows.rows() > cfg_.max_len) {
            throw InputError("embed_sentence: input length " + std::to_string(rows.rows()) +
                             " exceeds embedder max_len " + std::to_string(cfg_.max_len));
        }
        auto map = g.constant(out_map_.rows, out_map_.cols, out_map_.value, "sent_out_map");
        if (cfg_.variant == EmbedderVariant::kPooled) {
            auto pooled = ad::mean_pool(
                rows, std::span<const Real>(pos_weights_.data(),
                                            static_cast<size_t>(rows.rows())));
            return ad::matmul(pooled, map);
        }
        // Tiny-encoder variant: one frozen self-attention block over the rows,
        // then uniform mean pooling.
        auto leaves = make_leaves(g, *enc_, nullptr, TrainMode::kFrozen);
        std::vector<TokenId> positions(static_cast<size_t>(rows.rows()));
        for (size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<TokenId>(i);
        auto pos = ad::embedding_lookup(leaves.at("pos_emb"), positions);
        auto h = ad::add(rows, pos);
        const std::string p = "enc.0";
        auto hn = detail::norm(leaves, h, p + ".ln1");
        h = ad::add(h, detail::attention(leaves, hn, hn, p + ".attn", enc_->cfg.heads, false));
        h = ad::add(h, detail::feed_forward(leaves, detail::norm(leaves, h, p + ".ln2"),
                                            p + ".ff"));
        h = detail::norm(leaves, h, "enc.lnf");
        std::vector<Real> uniform(static_cast<size_t>(rows.rows()), Real(1));
        auto pooled = ad::mean_pool(h, std::span<const Real>(uniform.data(), uniform.size()));
        return ad::matmul(pooled, map);
    }

    ad::Tensor<Real> embed_ids(ad::Graph<Real>& g, std::span<const TokenId> ids) const {
        if (ids.empty()) throw InputError("embed_sentence: empty input");
        for (TokenId id : ids) {
            if (id < 0 || id >= cfg_.vocab_total) {
                throw InputError("embed_sentence: token id " + std::to_string(id) +
                                 " outside codebook");
            }
        }
        auto cb = g.constant(codebook_.rows, codebook_.cols, codebook_.value, "sent_codebook");
        return embed_rows(g, ad::embedding_lookup(cb, ids));
    }

    // Convenience: plain vector output on a throwaway graph.
    std::vector<Real> embed(std::span<const TokenId> ids) const {
        ad::Graph<Real> g;
        auto out = embed_ids(g, ids);
        return out.value();
    }

    std::vector<Real> embed(const TokenSequence& seq) const {
        return embed(std::span<const TokenId>(seq.ids.data(), seq.ids.size()));
    }

private:
    EmbedderConfig cfg_;
    NamedTensor<Real> codebook_;
    std::vector<Real> pos_weights_;
    NamedTensor<Real> out_map_;
    std::shared_ptr<Transformer<Real>> enc_;
};

// cos similarity of two sequences under one embedder.
template <class Real>
double sentence_similarity(const TokenSequence& a, const TokenSequence& b,
                           const SentenceEmbedder<Real>& embedder) {
    if (a.length() < 1 || b.length() < 1) {
        throw InputError("sentence_similarity: empty sequence");
    }
    ad::Graph<Real> g;
    auto ha = embedder.embed_ids(g, std::span<const TokenId>(a.ids.data(), a.ids.size()));
    auto hb = embedder.embed_ids(g, std::span<const TokenId>(b.ids.data(), b.ids.size()));
    return static_cast<double>(ad::cosine_similarity(ha, hb).scalar());
}

}  // namespace tokcode
