#include <doctest.h>

#include <set>

#include "tokcode/dataset.hpp"

using namespace tokcode;

namespace {

PromptGrammar four_slot_grammar() {
    PromptGrammar g;
    g.seed = 3;
    g.slot_names = {"a", "b", "c", "d"};
    g.slot_pools["a"] = {0, 1};
    g.slot_pools["b"] = {2, 3};
    g.slot_pools["c"] = {4, 5};
    g.slot_pools["d"] = {6, 7};
    g.filler_pool = {8, 9, 10, 11};
    g.templates = {Template{{"a", "b", "c", "d"}, {}}};
    return g;
}

// Test-side oracle: enumerates every sequence the grammar can emit. Only
// usable on tiny grammars.
void enumerate_fill(const PromptGrammar& g, std::vector<TokenId>& seq, size_t pos,
                    std::set<std::vector<TokenId>>& out) {
    while (pos < seq.size() && seq[pos] != -1) ++pos;
    if (pos == seq.size()) {
        out.insert(seq);
        return;
    }
    for (TokenId f : g.filler_pool) {
        seq[pos] = f;
        enumerate_fill(g, seq, pos + 1, out);
    }
    seq[pos] = -1;
}

void enumerate_slots(const PromptGrammar& g, const Template& tpl,
                     const std::vector<int>& positions, size_t slot_idx,
                     std::vector<TokenId>& seq, std::set<std::vector<TokenId>>& out) {
    if (slot_idx == tpl.slots.size()) {
        enumerate_fill(g, seq, 0, out);
        return;
    }
    const std::string& slot = tpl.slots[slot_idx];
    const int pos = positions[slot_idx];
    auto fixed = tpl.fixed_choices.find(slot);
    if (fixed != tpl.fixed_choices.end()) {
        seq[pos] = fixed->second;
        enumerate_slots(g, tpl, positions, slot_idx + 1, seq, out);
        seq[pos] = -1;
        return;
    }
    for (TokenId tok : g.slot_pools.at(slot)) {
        seq[pos] = tok;
        enumerate_slots(g, tpl, positions, slot_idx + 1, seq, out);
        seq[pos] = -1;
    }
}

void enumerate_positions(const PromptGrammar& g, const Template& tpl, int length,
                         std::vector<int>& positions, int next, size_t depth,
                         std::set<std::vector<TokenId>>& out) {
    if (depth == tpl.slots.size()) {
        std::vector<TokenId> seq(length, -1);
        enumerate_slots(g, tpl, positions, 0, seq, out);
        return;
    }
    for (int p = next; p < length; ++p) {
        positions[depth] = p;
        enumerate_positions(g, tpl, length, positions, p + 1, depth + 1, out);
    }
}

std::set<std::vector<TokenId>> enumerate_grammar(const PromptGrammar& g, int n_min, int n_max) {
    std::set<std::vector<TokenId>> out;
    for (const Template& tpl : g.templates) {
        for (int length = n_min; length <= n_max; ++length) {
            if (length < static_cast<int>(tpl.slots.size())) continue;
            std::vector<int> positions(tpl.slots.size());
            enumerate_positions(g, tpl, length, positions, 0, 0, out);
        }
    }
    return out;
}

}  // namespace

TEST_CASE("build_vocab allocates ordinary plus reserved ids") {
    const Vocabulary v = build_vocab(256, 7);
    CHECK(v.size == 256);
    CHECK(v.total() == 259);
    std::set<TokenId> reserved{v.pad_id, v.eos_id};
    for (TokenId s : v.sentinel_ids) reserved.insert(s);
    CHECK(reserved.size() == 3);
    for (TokenId r : reserved) {
        CHECK(r < v.total());
        CHECK_FALSE(v.is_ordinary(r));
    }
    for (TokenId id = 0; id < v.size; ++id) {
        CHECK(v.is_ordinary(id));
        CHECK(reserved.count(id) == 0);
    }
}

TEST_CASE("build_vocab is deterministic") {
    const Vocabulary a = build_vocab(256, 7);
    const Vocabulary b = build_vocab(256, 7);
    CHECK(a.size == b.size);
    CHECK(a.pad_id == b.pad_id);
    CHECK(a.eos_id == b.eos_id);
    CHECK(a.sentinel_ids == b.sentinel_ids);
}

TEST_CASE("build_vocab rejects tiny vocabularies") {
    CHECK_THROWS_AS(build_vocab(8, 0), ConfigError);
}

TEST_CASE("sample_prompt places each slot token once and pads with fillers") {
    const PromptGrammar g = four_slot_grammar();
    Rng rng(11);
    const Sample s = sample_prompt(g, rng, 8, 8);
    CHECK(s.seq.length() == 8);
    CHECK(s.slots.size() == 4);
    int filler_count = 0;
    for (TokenId id : s.seq.ids) {
        bool is_slot_token = false;
        for (const auto& [name, tok] : s.slots) is_slot_token = is_slot_token || (tok == id);
        if (!is_slot_token) ++filler_count;
    }
    CHECK(filler_count == 4);
    for (const auto& [name, tok] : s.slots) {
        int occurrences = 0;
        for (TokenId id : s.seq.ids) occurrences += (id == tok);
        CHECK(occurrences == 1);
    }
}

TEST_CASE("sample_prompt is deterministic for a fixed rng state") {
    const PromptGrammar g = four_slot_grammar();
    Rng r1(42);
    Rng r2(42);
    const Sample a = sample_prompt(g, r1, 8, 12);
    const Sample b = sample_prompt(g, r2, 8, 12);
    CHECK(a.seq == b.seq);
    CHECK(a.slots == b.slots);
}

TEST_CASE("sample_prompt rejects infeasible length ranges") {
    const PromptGrammar g = four_slot_grammar();
    Rng rng(0);
    CHECK_THROWS_AS(sample_prompt(g, rng, 2, 3), ConfigError);
}

TEST_CASE("make_dataset produces requested counts within the length range") {
    const Vocabulary v = build_vocab(256, 7);
    const PromptGrammar g = default_grammar(v, 5);
    DatasetConfig cfg;
    cfg.n_train = 200;
    cfg.n_test = 20;
    cfg.n_min = 8;
    cfg.n_max = 24;
    cfg.seed = 1;
    const Dataset ds = make_dataset(g, v, cfg);
    CHECK(ds.train.size() == 200);
    CHECK(ds.test.size() == 20);
    for (const auto& group : {ds.train, ds.test}) {
        for (const auto& s : group) {
            CHECK(s.seq.length() >= 8);
            CHECK(s.seq.length() <= 24);
        }
    }
}

TEST_CASE("make_dataset keeps train and test disjoint") {
    const Vocabulary v = build_vocab(256, 7);
    const PromptGrammar g = default_grammar(v, 5);
    DatasetConfig cfg;
    cfg.n_train = 1;
    cfg.n_test = 1;
    cfg.seed = 9;
    const Dataset ds = make_dataset(g, v, cfg);
    CHECK_FALSE(ds.train[0].seq == ds.test[0].seq);
}

TEST_CASE("make_dataset fails when the grammar output space is too small") {
    PromptGrammar g;
    g.seed = 0;
    g.slot_names = {"subject"};
    g.slot_pools["subject"] = {0, 1};
    g.filler_pool = {2};
    g.templates = {Template{{"subject"}, {}}};

    const auto space = enumerate_grammar(g, 1, 1);
    REQUIRE(space.size() == 2);

    const Vocabulary v = build_vocab(16, 0);
    DatasetConfig cfg;
    cfg.n_train = 100;
    cfg.n_test = 1;
    cfg.n_min = 1;
    cfg.n_max = 1;
    CHECK_THROWS_AS(make_dataset(g, v, cfg), ConfigError);
}

TEST_CASE("sampled sequences stay inside the enumerated grammar space") {
    PromptGrammar g = four_slot_grammar();
    const auto space = enumerate_grammar(g, 4, 5);
    Rng rng(77);
    for (int i = 0; i < 50; ++i) {
        const Sample s = sample_prompt(g, rng, 4, 5);
        CHECK(space.count(s.seq.ids) == 1);
    }
}

TEST_CASE("slot_recovery_rate counts recovered slot tokens") {
    const PromptGrammar g = four_slot_grammar();
    Rng rng(5);
    const Sample s = sample_prompt(g, rng, 8, 8);

    CHECK(slot_recovery_rate(s.seq, s.slots) == doctest::Approx(1.0));
    CHECK(slot_recovery_rate(TokenSequence{}, s.slots) == doctest::Approx(0.0));

    TokenSequence two;
    auto it = s.slots.begin();
    two.ids.push_back(it->second);
    ++it;
    two.ids.push_back(it->second);
    CHECK(slot_recovery_rate(two, s.slots) == doctest::Approx(0.5));
}

TEST_CASE("datasets are bit-identical for identical configuration") {
    const Vocabulary v = build_vocab(96, 3);
    const PromptGrammar g = default_grammar(v, 8);
    DatasetConfig cfg;
    cfg.n_train = 40;
    cfg.n_test = 8;
    cfg.seed = 123;
    const Dataset a = make_dataset(g, v, cfg);
    const Dataset b = make_dataset(g, v, cfg);
    REQUIRE(a.train.size() == b.train.size());
    for (size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train[i].seq == b.train[i].seq);
        CHECK(a.train[i].slots == b.train[i].slots);
    }
    CHECK(dataset_to_json(a) == dataset_to_json(b));
}

TEST_CASE("every generated token is a valid ordinary vocabulary id") {
    const Vocabulary v = build_vocab(128, 21);
    const PromptGrammar g = default_grammar(v, 4);
    DatasetConfig cfg;
    cfg.n_train = 60;
    cfg.n_test = 10;
    cfg.seed = 2;
    const Dataset ds = make_dataset(g, v, cfg);
    for (const auto& group : {ds.train, ds.test}) {
        for (const auto& s : group) {
            for (TokenId id : s.seq.ids) CHECK(v.is_ordinary(id));
            for (const auto& [slot, tok] : s.slots) {
                int occurrences = 0;
                for (TokenId id : s.seq.ids) occurrences += (id == tok);
                CHECK(occurrences == 1);
            }
        }
    }
}

TEST_CASE("dataset JSON round-trips") {
    const Vocabulary v = build_vocab(96, 3);
    const PromptGrammar g = default_grammar(v, 8);
    DatasetConfig cfg;
    cfg.n_train = 10;
    cfg.n_test = 4;
    cfg.seed = 55;
    const Dataset a = make_dataset(g, v, cfg);
    const Dataset b = dataset_from_json(dataset_to_json(a));
    CHECK(dataset_to_json(a) == dataset_to_json(b));
    REQUIRE(b.train.size() == a.train.size());
    CHECK(b.train[0].seq == a.train[0].seq);
    CHECK(b.grammar.filler_pool == a.grammar.filler_pool);
}
