#include "tokcode/vocab.hpp"

#include <string>

namespace tokcode {

Vocabulary build_vocab(int ordinary_count, uint64_t seed, int n_sentinels) {
    if (ordinary_count < kMinVocabSize) {
        throw ConfigError("build_vocab: ordinary token count must be >= " +
                          std::to_string(kMinVocabSize) + ", got " +
                          std::to_string(ordinary_count));
    }
    if (n_sentinels < 1) {
        throw ConfigError("build_vocab: need at least one sentinel token");
    }
    Vocabulary v;
    v.size = ordinary_count;
    v.pad_id = ordinary_count;
    v.eos_id = ordinary_count + 1;
    v.sentinel_ids.resize(n_sentinels);
    for (int i = 0; i < n_sentinels; ++i) {
        v.sentinel_ids[i] = ordinary_count + 2 + i;
    }
    v.seed = seed;
    return v;
}

}  // namespace tokcode
