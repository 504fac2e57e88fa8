#include "tokcode/grammar.hpp"

#include <algorithm>
#include <set>

namespace tokcode {

int PromptGrammar::max_template_slots() const {
    size_t m = 0;
    for (const auto& t : templates) m = std::max(m, t.slots.size());
    return static_cast<int>(m);
}

void PromptGrammar::validate() const {
    if (templates.empty()) throw ConfigError("grammar: no templates defined");
    if (filler_pool.empty()) throw ConfigError("grammar: filler pool is empty");
    std::set<TokenId> seen;
    for (const auto& name : slot_names) {
        auto it = slot_pools.find(name);
        if (it == slot_pools.end() || it->second.empty()) {
            throw ConfigError("grammar: slot '" + name + "' has no token pool");
        }
        for (TokenId id : it->second) {
            if (!seen.insert(id).second) {
                throw ConfigError("grammar: token " + std::to_string(id) +
                                  " appears in more than one slot pool");
            }
        }
    }
    for (TokenId id : filler_pool) {
        if (seen.count(id)) {
            throw ConfigError("grammar: filler token " + std::to_string(id) +
                              " collides with a slot pool");
        }
    }
    for (const auto& t : templates) {
        if (t.slots.empty()) throw ConfigError("grammar: template with no slots");
        std::set<std::string> in_template;
        for (const auto& s : t.slots) {
            if (!slot_pools.count(s)) {
                throw ConfigError("grammar: template references undefined slot '" + s + "'");
            }
            if (!in_template.insert(s).second) {
                throw ConfigError("grammar: template repeats slot '" + s + "'");
            }
        }
        for (const auto& [slot, id] : t.fixed_choices) {
            if (!in_template.count(slot)) {
                throw ConfigError("grammar: fixed choice for slot '" + slot +
                                  "' not present in template");
            }
            const auto& pool = slot_pools.at(slot);
            if (std::find(pool.begin(), pool.end(), id) == pool.end()) {
                throw ConfigError("grammar: fixed choice for slot '" + slot +
                                  "' is not in its pool");
            }
        }
    }
}

PromptGrammar default_grammar(const Vocabulary& vocab, uint64_t seed) {
    constexpr int kPoolSize = 12;
    const std::vector<std::string> names = {"subject", "attribute", "action", "scene", "style"};
    const int need = kPoolSize * static_cast<int>(names.size());
    if (vocab.size < need + kPoolSize) {
        throw ConfigError("default_grammar: vocabulary too small, need > " +
                          std::to_string(need + kPoolSize) + " ordinary tokens");
    }

    std::vector<TokenId> ids(vocab.size);
    for (int i = 0; i < vocab.size; ++i) ids[i] = i;
    Rng rng(stage_seed(seed, "grammar-pools"));
    rng.shuffle(ids);

    PromptGrammar g;
    g.seed = seed;
    g.slot_names = names;
    int cursor = 0;
    for (const auto& name : names) {
        g.slot_pools[name] = std::vector<TokenId>(ids.begin() + cursor,
                                                  ids.begin() + cursor + kPoolSize);
        cursor += kPoolSize;
    }
    g.filler_pool.assign(ids.begin() + cursor, ids.end());

    g.templates = {
        Template{{"subject", "attribute", "action", "scene", "style"}, {}},
        Template{{"subject", "action", "scene"}, {}},
        Template{{"attribute", "subject", "scene", "style"}, {}},
        Template{{"subject", "action", "style"}, {{"style", g.slot_pools["style"][0]}}},
        Template{{"scene", "subject", "attribute", "action"}, {}},
        Template{{"style", "subject", "scene"}, {{"scene", g.slot_pools["scene"][3]}}},
    };
    g.validate();
    return g;
}

Sample sample_prompt(const PromptGrammar& grammar, Rng& rng, int n_min, int n_max) {
    grammar.validate();
    if (n_min < grammar.max_template_slots() || n_min < 1 || n_min > n_max) {
        throw ConfigError("sample_prompt: length range [" + std::to_string(n_min) + ", " +
                          std::to_string(n_max) + "] infeasible for templates with up to " +
                          std::to_string(grammar.max_template_slots()) + " slots");
    }

    const Template& tpl = grammar.templates[rng.next_below(grammar.templates.size())];
    const int length = static_cast<int>(rng.next_int(n_min, n_max));
    const int k = static_cast<int>(tpl.slots.size());

    Sample out;
    out.seq.ids.assign(length, -1);

    // k distinct positions, sorted, assigned to slots in template order.
    std::vector<int> positions(length);
    for (int i = 0; i < length; ++i) positions[i] = i;
    rng.shuffle(positions);
    positions.resize(k);
    std::sort(positions.begin(), positions.end());

    for (int i = 0; i < k; ++i) {
        const std::string& slot = tpl.slots[i];
        TokenId tok;
        auto fixed = tpl.fixed_choices.find(slot);
        if (fixed != tpl.fixed_choices.end()) {
            tok = fixed->second;
        } else {
            const auto& pool = grammar.slot_pools.at(slot);
            tok = pool[rng.next_below(pool.size())];
        }
        out.seq.ids[positions[i]] = tok;
        out.slots[slot] = tok;
    }
    for (int i = 0; i < length; ++i) {
        if (out.seq.ids[i] < 0) {
            out.seq.ids[i] = grammar.filler_pool[rng.next_below(grammar.filler_pool.size())];
        }
    }
    return out;
}

double slot_recovery_rate(const TokenSequence& received, const SlotVector& truth) {
    if (truth.empty()) return 1.0;
    int hit = 0;
    for (const auto& [slot, tok] : truth) {
        if (std::find(received.ids.begin(), received.ids.end(), tok) != received.ids.end()) {
            ++hit;
        }
    }
    return static_cast<double>(hit) / static_cast<double>(truth.size());
}

}  // namespace tokcode
