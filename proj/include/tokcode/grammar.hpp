#pragma once

#include <map>
#include <string>
#include <vector>

#include "tokcode/vocab.hpp"

namespace tokcode {

// Ground-truth semantics of a generated prompt: which token filled each slot.
using SlotVector = std::map<std::string, TokenId>;

struct Template {
    std::vector<std::string> slots;  // emission order
    // Slots pinned to a specific pool token for this template. Pinned slots
    // give the corpus deterministic structure an infilling model can learn.
    std::map<std::string, TokenId> fixed_choices;
};

struct PromptGrammar {
    std::vector<std::string> slot_names;
    std::map<std::string, std::vector<TokenId>> slot_pools;
    std::vector<TokenId> filler_pool;
    std::vector<Template> templates;
    uint64_t seed = 0;

    int max_template_slots() const;
    // Throws ConfigError if templates reference undefined slots or pools overlap.
    void validate() const;
};

// Partitions the ordinary vocabulary into five slot pools plus fillers and
// builds a handful of templates, two of them with a pinned slot.
PromptGrammar default_grammar(const Vocabulary& vocab, uint64_t seed);

struct Sample {
    TokenSequence seq;
    SlotVector slots;
};

// Each slot token appears exactly once; remaining positions carry fillers.
Sample sample_prompt(const PromptGrammar& grammar, Rng& rng, int n_min, int n_max);

// Fraction of the ground-truth slot tokens present anywhere in `received`.
double slot_recovery_rate(const TokenSequence& received, const SlotVector& truth);

}  // namespace tokcode
