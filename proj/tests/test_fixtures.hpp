#pragma once

#include "tokcode/checkpoint.hpp"
#include "tokcode/dataset.hpp"
#include "tokcode/embedder.hpp"
#include "tokcode/pretrain.hpp"

namespace fixtures {

using namespace tokcode;

// Small grammar over a 64-token vocabulary. One template pins its style
// slot, so that slot is predictable from the surrounding template structure.
inline PromptGrammar tiny_grammar(const Vocabulary& vocab) {
    PromptGrammar g;
    g.seed = 11;
    g.slot_names = {"subject", "action", "style"};
    std::vector<TokenId> ids(vocab.size);
    for (int i = 0; i < vocab.size; ++i) ids[i] = i;
    Rng rng(stage_seed(g.seed, "tiny-grammar"));
    rng.shuffle(ids);
    g.slot_pools["subject"] = {ids.begin(), ids.begin() + 6};
    g.slot_pools["action"] = {ids.begin() + 6, ids.begin() + 12};
    g.slot_pools["style"] = {ids.begin() + 12, ids.begin() + 18};
    g.filler_pool.assign(ids.begin() + 18, ids.end());
    g.templates = {
        Template{{"subject", "action", "style"}, {}},
        Template{{"subject", "style"}, {{"style", g.slot_pools["style"][0]}}},
        Template{{"subject", "action"}, {}},
    };
    g.validate();
    return g;
}

inline const Dataset& tiny_dataset() {
    static const Dataset ds = [] {
        const Vocabulary vocab = build_vocab(64, 5);
        const PromptGrammar g = tiny_grammar(vocab);
        DatasetConfig cfg;
        cfg.n_train = 1500;
        cfg.n_test = 40;
        cfg.n_min = 6;
        cfg.n_max = 10;
        cfg.seed = 77;
        return make_dataset(g, vocab, cfg);
    }();
    return ds;
}

inline TransformerConfig tiny_tcfg() {
    TransformerConfig cfg;
    cfg.layers = 1;
    cfg.d_model = 32;
    cfg.heads = 4;
    cfg.d_ff = 64;
    cfg.max_len = 16;
    cfg.vocab_total = tiny_dataset().vocab.total();
    cfg.seed = 9001;
    return cfg;
}

inline PretrainConfig tiny_pretrain_cfg() {
    PretrainConfig cfg;
    cfg.steps = 1200;
    cfg.batch = 16;
    cfg.lr = 3e-3;
    cfg.label_smooth = 0.2;
    cfg.seed = 13;
    return cfg;
}

// Pretrained once per test binary.
inline const Transformer<float>& tiny_base() {
    static const Transformer<float> model =
        pretrain_base<float>(tiny_dataset(), tiny_tcfg(), tiny_pretrain_cfg()).model;
    return model;
}

inline Transformer<double> tiny_base_double() {
    const auto ckpt = to_checkpoint(tiny_base(), tiny_dataset().vocab);
    return transformer_from_checkpoint<double>(ckpt);
}

inline EmbedderConfig tiny_embedder_cfg(EmbedderVariant variant = EmbedderVariant::kPooled,
                                        int dim = 24, uint64_t seed = 101) {
    EmbedderConfig cfg;
    cfg.variant = variant;
    cfg.dim = dim;
    cfg.vocab_total = tiny_dataset().vocab.total();
    cfg.max_len = 20;
    cfg.seed = seed;
    return cfg;
}

template <class Real>
const SentenceEmbedder<Real>& tiny_embedder() {
    static const SentenceEmbedder<Real> e = SentenceEmbedder<Real>::make(tiny_embedder_cfg());
    return e;
}

}  // namespace fixtures
