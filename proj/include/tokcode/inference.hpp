#pragma once

#include <vector>

#include "tokcode/transformer.hpp"

namespace tokcode {

// Plain-array decoder session with KV caches. Free-running decoding through
// the autodiff graph costs O(N) full rebuilds; this path does the same
// arithmetic in the same accumulation order without building a graph, so
// logits agree with the graph path and evaluation stays fast.
template <class Real>
class InferenceSession {
public:
    InferenceSession(const Transformer<Real>& model, const LoraSet<Real>* lora,
                     std::span<const TokenId> enc_ids)
        : model_(model), lora_(lora) {
        const auto& cfg = model.cfg;
        cfg.validate();
        if (enc_ids.empty()) throw InputError("inference: empty conditioning input");
        if (static_cast<int>(enc_ids.size()) > cfg.max_len) {
            throw InputError("inference: conditioning length " + std::to_string(enc_ids.size()) +
                             " exceeds max_len " + std::to_string(cfg.max_len));
        }
        run_encoder(enc_ids);
        layers_.resize(cfg.layers);
        for (int i = 0; i < cfg.layers; ++i) {
            const std::string p = "dec." + std::to_string(i);
            // Cross-attention keys/values depend only on the encoder output.
            layers_[i].cross_k = project(enc_out_, p + ".cross.Wk");
            layers_[i].cross_v = project(enc_out_, p + ".cross.Wv");
        }
        logits_.resize(static_cast<size_t>(cfg.vocab_total));
    }

    // Feeds one decoder input token; returns the logit row for this position.
    std::span<const Real> step(TokenId dec_token) {
        const auto& cfg = model_.cfg;
        if (steps_ >= cfg.max_len) {
            throw InputError("inference: decoder ran past max_len " +
                             std::to_string(cfg.max_len));
        }
        const int d = cfg.d_model;
        std::vector<Real> h = embed_row(dec_token, steps_);
        std::vector<Real> tmp(static_cast<size_t>(d));

        for (int i = 0; i < cfg.layers; ++i) {
            const std::string p = "dec." + std::to_string(i);
            LayerState& st = layers_[i];

            norm_row(h, tmp, p + ".ln1");
            std::vector<Real> q = project_row(tmp, p + ".self.Wq");
            st.self_k.push_back(project_row(tmp, p + ".self.Wk"));
            st.self_v.push_back(project_row(tmp, p + ".self.Wv"));
            std::vector<Real> ctx = attend(q, st.self_k, st.self_v);
            add_into(h, project_row(ctx, p + ".self.Wo"));

            norm_row(h, tmp, p + ".ln2");
            q = project_row(tmp, p + ".cross.Wq");
            ctx = attend(q, st.cross_k, st.cross_v);
            add_into(h, project_row(ctx, p + ".cross.Wo"));

            norm_row(h, tmp, p + ".ln3");
            std::vector<Real> ff = project_row(tmp, p + ".ff.W1");
            for (auto& v : ff) v = gelu_scalar(v);
            add_into(h, project_row(ff, p + ".ff.W2"));
        }
        norm_row(h, tmp, "dec.lnf");
        matvec(tmp, weight("head"), logits_);
        ++steps_;
        return std::span<const Real>(logits_.data(), logits_.size());
    }

    int steps_done() const { return steps_; }
    const std::vector<std::vector<Real>>& encoder_output() const { return enc_out_; }

private:
    struct LayerState {
        std::vector<std::vector<Real>> self_k, self_v;
        std::vector<std::vector<Real>> cross_k, cross_v;
    };

    const NamedTensor<Real>& weight(const std::string& name) const {
        auto it = model_.weights.find(name);
        if (it == model_.weights.end()) throw InputError("inference: missing weight " + name);
        return it->second;
    }

    static Real gelu_scalar(Real x) {
        constexpr Real c = Real(0.7978845608028654);
        constexpr Real k = Real(0.044715);
        return Real(0.5) * x * (Real(1) + std::tanh(c * (x + k * x * x * x)));
    }

    // y = x * W, accumulating over rows of W in ascending order, matching the
    // graph kernel exactly.
    static void matvec(const std::vector<Real>& x, const NamedTensor<Real>& w,
                       std::vector<Real>& y) {
        y.assign(static_cast<size_t>(w.cols), Real(0));
        for (int kk = 0; kk < w.rows; ++kk) {
            const Real xv = x[static_cast<size_t>(kk)];
            const Real* wrow = w.value.data() + static_cast<size_t>(kk) * w.cols;
            for (int j = 0; j < w.cols; ++j) y[static_cast<size_t>(j)] += xv * wrow[j];
        }
    }

    std::vector<Real> project_row(const std::vector<Real>& x, const std::string& name) const {
        std::vector<Real> y;
        matvec(x, weight(name), y);
        if (lora_ != nullptr) {
            if (const LoraAdapter<Real>* ad = lora_->find(name)) {
                std::vector<Real> mid;
                matvec(x, ad->a, mid);
                std::vector<Real> delta;
                matvec(mid, ad->b, delta);
                for (size_t j = 0; j < y.size(); ++j) y[j] += delta[j];
            }
        }
        return y;
    }

    std::vector<std::vector<Real>> project(const std::vector<std::vector<Real>>& rows,
                                           const std::string& name) const {
        std::vector<std::vector<Real>> out;
        out.reserve(rows.size());
        for (const auto& r : rows) out.push_back(project_row(r, name));
        return out;
    }

    void norm_row(const std::vector<Real>& x, std::vector<Real>& out,
                  const std::string& prefix) const {
        const auto& gain = weight(prefix + ".g").value;
        const auto& bias = weight(prefix + ".b").value;
        const int n = static_cast<int>(x.size());
        Real mean = Real(0);
        for (Real v : x) mean += v;
        mean /= Real(n);
        Real var = Real(0);
        for (Real v : x) var += (v - mean) * (v - mean);
        var /= Real(n);
        const Real inv = Real(1) / std::sqrt(var + Real(1e-5));
        out.resize(x.size());
        for (int j = 0; j < n; ++j) {
            out[static_cast<size_t>(j)] =
                (x[static_cast<size_t>(j)] - mean) * inv * gain[static_cast<size_t>(j)] +
                bias[static_cast<size_t>(j)];
        }
    }

    static void add_into(std::vector<Real>& h, const std::vector<Real>& delta) {
        for (size_t j = 0; j < h.size(); ++j) h[j] += delta[j];
    }

    std::vector<Real> embed_row(TokenId tok, int position) const {
        const auto& te = weight("tok_emb");
        const auto& pe = weight("pos_emb");
        if (tok < 0 || tok >= te.rows) {
            throw InputError("inference: token id " + std::to_string(tok) + " out of range");
        }
        const int d = te.cols;
        std::vector<Real> h(static_cast<size_t>(d));
        const Real* trow = te.value.data() + static_cast<size_t>(tok) * d;
        const Real* prow = pe.value.data() + static_cast<size_t>(position) * d;
        for (int j = 0; j < d; ++j) h[static_cast<size_t>(j)] = trow[j] + prow[j];
        return h;
    }

    // Multi-head attention of a single query row over cached key/value rows.
    std::vector<Real> attend(const std::vector<Real>& q,
                             const std::vector<std::vector<Real>>& keys,
                             const std::vector<std::vector<Real>>& values) const {
        const auto& cfg = model_.cfg;
        const int heads = cfg.heads;
        const int dh = cfg.d_model / heads;
        const int t = static_cast<int>(keys.size());
        const Real inv_sqrt = Real(1) / std::sqrt(Real(dh));
        std::vector<Real> ctx(static_cast<size_t>(cfg.d_model), Real(0));
        std::vector<Real> scores(static_cast<size_t>(t));
        for (int h = 0; h < heads; ++h) {
            const int off = h * dh;
            for (int r = 0; r < t; ++r) {
                Real acc = Real(0);
                const Real* krow = keys[static_cast<size_t>(r)].data() + off;
                const Real* qrow = q.data() + off;
                for (int kk = 0; kk < dh; ++kk) acc += qrow[kk] * krow[kk];
                scores[static_cast<size_t>(r)] = acc * inv_sqrt;
            }
            Real mx = scores[0];
            for (int r = 1; r < t; ++r) mx = std::max(mx, scores[static_cast<size_t>(r)]);
            Real sum = Real(0);
            for (int r = 0; r < t; ++r) {
                scores[static_cast<size_t>(r)] = std::exp(scores[static_cast<size_t>(r)] - mx);
                sum += scores[static_cast<size_t>(r)];
            }
            const Real inv = Real(1) / sum;
            for (int r = 0; r < t; ++r) scores[static_cast<size_t>(r)] *= inv;
            for (int r = 0; r < t; ++r) {
                const Real p = scores[static_cast<size_t>(r)];
                const Real* vrow = values[static_cast<size_t>(r)].data() + off;
                for (int kk = 0; kk < dh; ++kk) ctx[static_cast<size_t>(off + kk)] += p * vrow[kk];
            }
        }
        return ctx;
    }

    void run_encoder(std::span<const TokenId> ids) {
        const auto& cfg = model_.cfg;
        const int n = static_cast<int>(ids.size());
        std::vector<std::vector<Real>> h(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) h[static_cast<size_t>(i)] = embed_row(ids[i], i);
        std::vector<Real> tmp;
        for (int layer = 0; layer < cfg.layers; ++layer) {
            const std::string p = "enc." + std::to_string(layer);
            std::vector<std::vector<Real>> normed(static_cast<size_t>(n));
            for (int i = 0; i < n; ++i) norm_row(h[static_cast<size_t>(i)],
                                                 normed[static_cast<size_t>(i)], p + ".ln1");
            auto ks = project(normed, p + ".attn.Wk");
            auto vs = project(normed, p + ".attn.Wv");
            for (int i = 0; i < n; ++i) {
                auto q = project_row(normed[static_cast<size_t>(i)], p + ".attn.Wq");
                auto ctx = attend(q, ks, vs);
                add_into(h[static_cast<size_t>(i)], project_row(ctx, p + ".attn.Wo"));
            }
            for (int i = 0; i < n; ++i) {
                norm_row(h[static_cast<size_t>(i)], tmp, p + ".ln2");
                auto ff = project_row(tmp, p + ".ff.W1");
                for (auto& v : ff) v = gelu_scalar(v);
                add_into(h[static_cast<size_t>(i)], project_row(ff, p + ".ff.W2"));
            }
        }
        enc_out_.resize(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            norm_row(h[static_cast<size_t>(i)], enc_out_[static_cast<size_t>(i)], "enc.lnf");
        }
    }

    const Transformer<Real>& model_;
    const LoraSet<Real>* lora_;
    std::vector<std::vector<Real>> enc_out_;
    std::vector<LayerState> layers_;
    std::vector<Real> logits_;
    int steps_ = 0;
};

// Token encoding through the inference path: teacher forcing on x, argmax
// restricted to ordinary ids.
template <class Real>
TokenSequence encode_tokens(const TokenSequence& x, const Transformer<Real>& model,
                            const LoraSet<std::type_identity_t<Real>>* lora,
                            const Vocabulary& vocab) {
    if (x.length() < 1) throw InputError("encode_tokens: empty input");
    InferenceSession<Real> session(model, lora, x.ids);
    const auto dec_ids = shifted_decoder_input(x, vocab.pad_id);
    TokenSequence z;
    z.ids.resize(x.ids.size());
    for (size_t i = 0; i < dec_ids.size(); ++i) {
        const auto row = session.step(dec_ids[i]);
        z.ids[i] = argmax_ordinary(row, vocab);
    }
    return z;
}

}  // namespace tokcode
