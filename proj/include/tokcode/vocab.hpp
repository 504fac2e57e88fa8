#pragma once

#include <cstdint>
#include <vector>

#include "tokcode/common.hpp"

namespace tokcode {

using TokenId = int32_t;

// A transmitted unit: ordered token ids over the ordinary vocabulary.
struct TokenSequence {
    std::vector<TokenId> ids;

    int length() const { return static_cast<int>(ids.size()); }
    bool operator==(const TokenSequence&) const = default;
};

// Ordinary ids occupy [0, size); reserved ids follow them, so every id in
// [0, total()) is valid and the two ranges never overlap.
struct Vocabulary {
    int size = 0;  // ordinary token count
    TokenId pad_id = -1;
    TokenId eos_id = -1;
    std::vector<TokenId> sentinel_ids;
    uint64_t seed = 0;

    int total() const { return size + 2 + static_cast<int>(sentinel_ids.size()); }
    bool is_ordinary(TokenId id) const { return id >= 0 && id < size; }
    bool is_valid(TokenId id) const { return id >= 0 && id < total(); }
};

constexpr int kMinVocabSize = 16;
constexpr int kDefaultSentinels = 1;

Vocabulary build_vocab(int ordinary_count, uint64_t seed, int n_sentinels = kDefaultSentinels);

}  // namespace tokcode
