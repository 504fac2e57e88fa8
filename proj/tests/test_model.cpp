#include <doctest.h>

#include <cstdio>

#include "test_fixtures.hpp"
#include "tokcode/gradcheck.hpp"
#include "tokcode/inference.hpp"
#include "tokcode/sfma.hpp"

using namespace tokcode;
using fixtures::tiny_dataset;
using fixtures::tiny_tcfg;

namespace {

TokenSequence random_ordinary_seq(const Vocabulary& v, Rng& rng, int n) {
    TokenSequence s;
    for (int i = 0; i < n; ++i) s.ids.push_back(static_cast<TokenId>(rng.next_below(v.size)));
    return s;
}

}  // namespace

TEST_CASE("pretraining beats a fresh model at held-out infilling") {
    const Dataset& ds = tiny_dataset();
    const Transformer<float>& trained = fixtures::tiny_base();
    const Transformer<float> fresh = Transformer<float>::init(tiny_tcfg());
    const double ce_trained = infill_cross_entropy(trained, ds, ds.test, 0.3, 4);
    const double ce_fresh = infill_cross_entropy(fresh, ds, ds.test, 0.3, 4);
    CHECK(ce_trained < ce_fresh);
    CHECK(ce_trained < 0.5 * ce_fresh);
}

TEST_CASE("zero pretraining steps returns the initialization") {
    PretrainConfig cfg = fixtures::tiny_pretrain_cfg();
    cfg.steps = 0;
    const auto result = pretrain_base<float>(tiny_dataset(), tiny_tcfg(), cfg);
    const auto fresh = Transformer<float>::init(tiny_tcfg());
    CHECK(result.model.content_hash() == fresh.content_hash());
    CHECK(result.log.empty());
}

TEST_CASE("pretraining is bit-reproducible") {
    PretrainConfig cfg = fixtures::tiny_pretrain_cfg();
    cfg.steps = 25;
    const auto a = pretrain_base<float>(tiny_dataset(), tiny_tcfg(), cfg);
    const auto b = pretrain_base<float>(tiny_dataset(), tiny_tcfg(), cfg);
    CHECK(a.model.content_hash() == b.model.content_hash());
    REQUIRE(a.log.size() == b.log.size());
    for (size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].loss == b.log[i].loss);
}

TEST_CASE("fresh adapters leave encoding bit-identical to the base") {
    const Dataset& ds = tiny_dataset();
    const Transformer<float>& base = fixtures::tiny_base();
    const auto lora = lora_inject(base, 4, default_lora_targets(base.cfg), 3);
    for (const auto& ad : lora.adapters) {
        for (float v : ad.b.value) CHECK(v == 0.0f);
    }
    Rng rng(55);
    for (int trial = 0; trial < 25; ++trial) {
        const auto x = random_ordinary_seq(ds.vocab, rng, 4 + static_cast<int>(rng.next_below(8)));
        const auto z_base = encode_tokens(x, base, nullptr, ds.vocab);
        const auto z_lora = encode_tokens(x, base, &lora, ds.vocab);
        CHECK(z_base == z_lora);
    }
}

TEST_CASE("lora_inject rejects unknown targets") {
    const Transformer<float>& base = fixtures::tiny_base();
    CHECK_THROWS_AS(lora_inject(base, 4, {"dec.0.self.Wz"}, 0), ConfigError);
    CHECK_THROWS_AS(lora_inject(base, 0, {"dec.0.self.Wq"}, 0), ConfigError);
}

TEST_CASE("lora parameter counts follow r*(d_out + d_in)") {
    TransformerConfig cfg = tiny_tcfg();
    cfg.d_model = 64;
    cfg.heads = 4;
    const auto base = Transformer<float>::init(cfg);
    const auto one = lora_inject(base, 4, {"dec.0.self.Wq"}, 0);
    CHECK(one.adapters[0].trainable_count() == 4 * (64 + 64));
    CHECK(lora_param_count(one, base).trainable == 512);

    const LoraSet<float> empty;
    CHECK(lora_param_count(empty, base).trainable == 0);

    const auto full = lora_inject(base, 8, default_lora_targets(cfg), 0);
    const auto count = lora_param_count(full, base);
    long expected = 0;
    for (const auto& ad : full.adapters) {
        expected += static_cast<long>(ad.rank) * (ad.a.rows + ad.b.cols);
    }
    CHECK(count.trainable == expected);
    CHECK(count.fraction < 0.10);
}

TEST_CASE("paper-scale adapter arithmetic lands near 2.4 percent") {
    const double fraction = 1.51e8 / 6.37e9;
    CHECK(fraction >= 0.023);
    CHECK(fraction <= 0.024);
}

TEST_CASE("encoding length equals input length with closed codebook") {
    const Dataset& ds = tiny_dataset();
    const Transformer<float>& base = fixtures::tiny_base();
    Rng rng(91);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 1 + static_cast<int>(rng.next_below(12));
        const auto x = random_ordinary_seq(ds.vocab, rng, n);
        const auto z = encode_tokens(x, base, nullptr, ds.vocab);
        CHECK(z.length() == x.length());
        for (TokenId id : z.ids) CHECK(ds.vocab.is_ordinary(id));
    }
    TokenSequence too_long;
    too_long.ids.assign(static_cast<size_t>(base.cfg.max_len) + 1, 0);
    CHECK_THROWS_AS(encode_tokens(too_long, base, nullptr, ds.vocab), InputError);
}

TEST_CASE("argmax over ordinary ids breaks ties toward the lowest id") {
    Vocabulary v;
    v.size = 6;
    v.pad_id = 6;
    v.eos_id = 7;
    v.sentinel_ids = {8};
    std::vector<double> row(9, 0.0);
    CHECK(argmax_ordinary(std::span<const double>(row.data(), row.size()), v) == 0);
    row[3] = 2.0;
    row[5] = 2.0;
    CHECK(argmax_ordinary(std::span<const double>(row.data(), row.size()), v) == 3);
    row[8] = 99.0;  // reserved ids never win
    CHECK(argmax_ordinary(std::span<const double>(row.data(), row.size()), v) == 3);
    row[5] = 2.5;
    CHECK(argmax_ordinary(std::span<const double>(row.data(), row.size()), v) == 5);
}

TEST_CASE("teacher-forced encode output is unique per input row count") {
    // |z| = |x| over random lengths, trained and untrained.
    const Dataset& ds = tiny_dataset();
    const auto fresh = Transformer<float>::init(tiny_tcfg());
    Rng rng(17);
    for (int t = 0; t < 20; ++t) {
        const auto x = random_ordinary_seq(ds.vocab, rng, 1 + static_cast<int>(rng.next_below(10)));
        CHECK(encode_tokens(x, fresh, nullptr, ds.vocab).length() == x.length());
    }
}

TEST_CASE("inference session matches the graph forward path") {
    const Dataset& ds = tiny_dataset();
    const auto base = fixtures::tiny_base_double();
    const auto lora = lora_inject(base, 3, default_lora_targets(base.cfg), 7);
    Rng rng(23);
    for (int trial = 0; trial < 5; ++trial) {
        const auto x = random_ordinary_seq(ds.vocab, rng, 6);

        ad::Graph<double> g;
        auto leaves = make_leaves(g, base, &lora, TrainMode::kFrozen);
        auto res = encode_tokens_graph(g, leaves, x, ds.vocab);

        InferenceSession<double> session(base, &lora, x.ids);
        const auto dec_ids = shifted_decoder_input(x, ds.vocab.pad_id);
        const int v = base.cfg.vocab_total;
        TokenSequence z_fast;
        for (size_t i = 0; i < dec_ids.size(); ++i) {
            const auto row = session.step(dec_ids[i]);
            z_fast.ids.push_back(argmax_ordinary(row, ds.vocab));
            for (int j = 0; j < v; ++j) {
                const double graph_val = res.logits.value()[i * v + j];
                CHECK(row[j] == doctest::Approx(graph_val).epsilon(1e-10));
            }
        }
        CHECK(z_fast == res.z);
    }
}

TEST_CASE("embedder accepts ids or rows with bit-identical output") {
    const Dataset& ds = tiny_dataset();
    const auto& emb = fixtures::tiny_embedder<double>();
    Rng rng(29);
    const auto x = random_ordinary_seq(ds.vocab, rng, 7);

    ad::Graph<double> g;
    auto by_ids = emb.embed_ids(g, std::span<const TokenId>(x.ids.data(), x.ids.size()));
    auto cb = g.constant(emb.codebook().rows, emb.codebook().cols, emb.codebook().value);
    auto rows = ad::embedding_lookup(cb, std::span<const TokenId>(x.ids.data(), x.ids.size()));
    auto by_rows = emb.embed_rows(g, rows);
    REQUIRE(by_ids.value().size() == by_rows.value().size());
    for (size_t i = 0; i < by_ids.value().size(); ++i) {
        CHECK(by_ids.value()[i] == by_rows.value()[i]);
    }
}

TEST_CASE("pooled variant of a single token is that token's mapped row") {
    const auto& emb = fixtures::tiny_embedder<double>();
    const std::vector<TokenId> one{5};
    const auto h = emb.embed(std::span<const TokenId>(one.data(), one.size()));

    const auto& cb = emb.codebook();
    const int d = emb.dim();
    // Row 5 through the frozen output map.
    ad::Graph<double> g;
    auto row = g.constant(1, d, std::vector<double>(cb.value.begin() + 5 * d,
                                                    cb.value.begin() + 6 * d));
    REQUIRE(static_cast<int>(h.size()) == d);
    ad::Graph<double> g2;
    auto rows2 = g2.constant(1, d, row.value());
    auto mapped = emb.embed_rows(g2, rows2);
    for (int j = 0; j < d; ++j) CHECK(h[j] == doctest::Approx(mapped.value()[j]).epsilon(1e-12));
}

TEST_CASE("embedder rejects empty input and wrong dimensions") {
    const auto& emb = fixtures::tiny_embedder<double>();
    ad::Graph<double> g;
    CHECK_THROWS_AS(emb.embed_ids(g, std::span<const TokenId>()), InputError);
    auto bad = g.constant(2, emb.dim() + 1,
                          std::vector<double>(static_cast<size_t>(2 * (emb.dim() + 1)), 0.0));
    CHECK_THROWS_AS(emb.embed_rows(g, bad), InputError);
}

TEST_CASE("filler permutations move the embedding less than slot swaps") {
    const Dataset& ds = tiny_dataset();
    const auto& emb = fixtures::tiny_embedder<double>();
    Rng rng(31);
    double perm_dist = 0.0, slot_dist = 0.0;
    int count = 0;
    for (const auto& s : ds.train) {
        if (count >= 200) break;
        // Identify filler positions and one slot position.
        std::vector<int> filler_pos;
        int slot_pos = -1;
        std::string slot_name;
        for (int i = 0; i < s.seq.length(); ++i) {
            bool is_slot = false;
            for (const auto& [name, tok] : s.slots) {
                if (s.seq.ids[i] == tok) {
                    is_slot = true;
                    if (slot_pos < 0) {
                        slot_pos = i;
                        slot_name = name;
                    }
                }
            }
            if (!is_slot) filler_pos.push_back(i);
        }
        if (filler_pos.size() < 2 || slot_pos < 0) continue;
        ++count;

        TokenSequence permuted = s.seq;
        std::vector<int> shuffled = filler_pos;
        rng.shuffle(shuffled);
        for (size_t i = 0; i < filler_pos.size(); ++i) {
            permuted.ids[filler_pos[i]] = s.seq.ids[shuffled[i]];
        }

        TokenSequence swapped = s.seq;
        const auto& pool = ds.grammar.slot_pools.at(slot_name);
        TokenId replacement = pool[rng.next_below(pool.size())];
        if (replacement == s.seq.ids[slot_pos]) replacement = pool[(replacement == pool[0]) ? 1 : 0];
        swapped.ids[slot_pos] = replacement;

        perm_dist += 1.0 - sentence_similarity(s.seq, permuted, emb);
        slot_dist += 1.0 - sentence_similarity(s.seq, swapped, emb);
    }
    REQUIRE(count >= 100);
    CHECK(perm_dist / count < slot_dist / count);
}

TEST_CASE("embedders are frozen and deterministic") {
    const auto a = SentenceEmbedder<double>::make(fixtures::tiny_embedder_cfg());
    const auto b = SentenceEmbedder<double>::make(fixtures::tiny_embedder_cfg());
    const std::vector<TokenId> ids{1, 2, 3, 4};
    const auto ha = a.embed(std::span<const TokenId>(ids.data(), ids.size()));
    const auto hb = b.embed(std::span<const TokenId>(ids.data(), ids.size()));
    REQUIRE(ha.size() == hb.size());
    for (size_t i = 0; i < ha.size(); ++i) CHECK(ha[i] == hb[i]);

    const auto tiny_enc = SentenceEmbedder<double>::make(
        fixtures::tiny_embedder_cfg(EmbedderVariant::kTinyEncoder, 24, 202));
    const auto h1 = tiny_enc.embed(std::span<const TokenId>(ids.data(), ids.size()));
    const auto h2 = tiny_enc.embed(std::span<const TokenId>(ids.data(), ids.size()));
    for (size_t i = 0; i < h1.size(); ++i) CHECK(h1[i] == h2[i]);
}

TEST_CASE("tiny-encoder embedder conducts exact gradients to its input rows") {
    const auto emb = SentenceEmbedder<double>::make(
        fixtures::tiny_embedder_cfg(EmbedderVariant::kTinyEncoder, 24, 202));
    Rng rng(41);
    std::vector<double> rows(3 * 24);
    for (auto& v : rows) v = rng.next_gauss();
    auto build = [&](ad::Graph<double>& g, const std::vector<ad::Tensor<double>>& p) {
        return ad::l2_norm(emb.embed_rows(g, p[0]));
    };
    const auto report =
        ad::grad_check<double>(build, {ad::GcParam<double>{3, 24, rows}}, 1e-6, 1e-5);
    CHECK(report.pass);
}

TEST_CASE("checkpoints round-trip models bit-exactly") {
    const Dataset& ds = tiny_dataset();
    const Transformer<float>& base = fixtures::tiny_base();
    const std::string path = "/tmp/tokcode_test_base.ckpt";
    save_checkpoint(to_checkpoint(base, ds.vocab, {{"steps", 700}}), path);
    const auto loaded_ckpt = load_checkpoint(path);
    const auto loaded = transformer_from_checkpoint<float>(loaded_ckpt);
    CHECK(loaded.content_hash() == base.content_hash());
    CHECK(loaded.cfg == base.cfg);
    CHECK(loaded_ckpt.metadata.at("steps").get<int>() == 700);
    const auto vocab = vocab_config_from_json(loaded_ckpt.config.at("vocabulary"));
    CHECK(vocab.eos_id == ds.vocab.eos_id);
    std::remove(path.c_str());
}

TEST_CASE("lora checkpoints refuse a mismatched base") {
    const Dataset& ds = tiny_dataset();
    const Transformer<float>& base = fixtures::tiny_base();
    auto lora = lora_inject(base, 2, {"dec.0.self.Wq"}, 5);
    const std::string path = "/tmp/tokcode_test_lora.ckpt";
    save_checkpoint(lora_to_checkpoint(lora), path);
    const auto ckpt = load_checkpoint(path);

    const auto back = lora_from_checkpoint<float>(ckpt, base.content_hash());
    CHECK(back.adapters.size() == 1);
    CHECK(back.adapters[0].a.value == lora.adapters[0].a.value);

    CHECK_THROWS_AS(lora_from_checkpoint<float>(ckpt, base.content_hash() + 1), ConfigError);
    std::remove(path.c_str());
}
