#pragma once

#include <algorithm>
#include <limits>
#include <string>
#include <vector>

#include "tokcode/channel.hpp"
#include "tokcode/embedder.hpp"
#include "tokcode/inference.hpp"

namespace tokcode {

enum class MethodId { kPassthrough, kInfilling, kTokCode, kGreedyUpperBound, kLlmPrediction };

inline std::string method_name(MethodId m) {
    switch (m) {
        case MethodId::kPassthrough: return "passthrough";
        case MethodId::kInfilling: return "infilling";
        case MethodId::kTokCode: return "tokcode";
        case MethodId::kGreedyUpperBound: return "greedy_upper_bound";
        case MethodId::kLlmPrediction: return "llm_prediction";
    }
    return "unknown";
}

inline MethodId method_from_name(const std::string& s) {
    for (MethodId m : {MethodId::kPassthrough, MethodId::kInfilling, MethodId::kTokCode,
                       MethodId::kGreedyUpperBound, MethodId::kLlmPrediction}) {
        if (method_name(m) == s) return m;
    }
    throw ConfigError("unknown method '" + s + "'");
}

inline TokenSequence passthrough(const TokenSequence& x) { return x; }

// Receiver-side restoration: erased positions become sentinel tokens in the
// conditioning input, then the base model decodes greedily. Surviving tokens
// are kept verbatim at their positions by forcing them during decoding.
template <class Real>
TokenSequence infill(const ReceivedSequence& received, const Transformer<Real>& base,
                     const Vocabulary& vocab) {
    const int n = received.original_length();
    if (n < 1) throw InputError("infill: empty received sequence");
    if (received.missing_count() == 0) {
        TokenSequence out;
        out.ids.reserve(n);
        for (const auto& s : received.slots) out.ids.push_back(*s);
        return out;
    }

    std::vector<TokenId> cond(n);
    const TokenId sentinel = vocab.sentinel_ids[0];
    for (int i = 0; i < n; ++i) {
        cond[i] = received.slots[i].has_value() ? *received.slots[i] : sentinel;
    }

    InferenceSession<Real> session(base, nullptr, cond);
    TokenSequence out;
    out.ids.resize(n);
    TokenId prev = vocab.pad_id;
    for (int i = 0; i < n; ++i) {
        const auto row = session.step(prev);
        if (received.slots[i].has_value()) {
            out.ids[i] = *received.slots[i];
        } else {
            out.ids[i] = argmax_ordinary(row, vocab);
        }
        prev = out.ids[i];
    }
    return out;
}

namespace detail {

template <class Real>
double subsequence_similarity(const std::vector<Real>& h_ref, const std::vector<TokenId>& sub,
                              const SentenceEmbedder<Real>& embedder) {
    ad::Graph<Real> g;
    auto h = embedder.embed_ids(g, std::span<const TokenId>(sub.data(), sub.size()));
    auto r = g.constant(1, static_cast<int>(h_ref.size()), h_ref, "h_ref");
    return static_cast<double>(ad::cosine_similarity(r, h).scalar());
}

}  // namespace detail

// Transmitter-side oracle that knows the loss pattern: greedily deletes the
// token whose removal best preserves similarity to the full sequence, until
// only as many tokens remain as will survive, then packs them into the
// surviving positions. Erased positions carry PAD; the channel destroys them
// regardless. Ties delete the latest position.
template <class Real>
TokenSequence greedy_upper_bound(const TokenSequence& x, const LossPattern& pattern,
                                 const ChannelConfig& cfg,
                                 const SentenceEmbedder<Real>& embedder,
                                 const Vocabulary& vocab, bool insertion_variant = false) {
    cfg.validate();
    const int n = x.length();
    if (n < 1) throw InputError("greedy_upper_bound: empty input");

    std::vector<int> surviving_positions;
    for (int pos = 1; pos <= n; ++pos) {
        if (!pattern.contains(packet_index(pos, cfg.packets))) {
            surviving_positions.push_back(pos - 1);
        }
    }
    const int s = static_cast<int>(surviving_positions.size());
    if (s == 0) throw InputError("greedy_upper_bound: no surviving positions");

    const std::vector<Real> h_ref = [&] {
        ad::Graph<Real> g;
        return embedder.embed_ids(g, std::span<const TokenId>(x.ids.data(), x.ids.size()))
            .value();
    }();

    std::vector<TokenId> kept;
    if (!insertion_variant) {
        kept = x.ids;
        while (static_cast<int>(kept.size()) > s) {
            int best_idx = -1;
            double best_sim = -std::numeric_limits<double>::infinity();
            for (size_t cand = 0; cand < kept.size(); ++cand) {
                std::vector<TokenId> trial;
                trial.reserve(kept.size() - 1);
                for (size_t i = 0; i < kept.size(); ++i) {
                    if (i != cand) trial.push_back(kept[i]);
                }
                const double sim = detail::subsequence_similarity(h_ref, trial, embedder);
                if (sim >= best_sim) {  // >= keeps the latest position on ties
                    best_sim = sim;
                    best_idx = static_cast<int>(cand);
                }
            }
            kept.erase(kept.begin() + best_idx);
        }
    } else {
        // Insertion direction: grow from empty, adding the source token whose
        // inclusion maximizes similarity, order-preserving.
        std::vector<int> chosen;  // indices into x, kept sorted
        for (int round = 0; round < s && round < n; ++round) {
            int best_src = -1;
            double best_sim = -std::numeric_limits<double>::infinity();
            for (int cand = 0; cand < n; ++cand) {
                if (std::find(chosen.begin(), chosen.end(), cand) != chosen.end()) continue;
                std::vector<int> trial_idx = chosen;
                trial_idx.insert(
                    std::upper_bound(trial_idx.begin(), trial_idx.end(), cand), cand);
                std::vector<TokenId> trial;
                for (int i : trial_idx) trial.push_back(x.ids[i]);
                const double sim = detail::subsequence_similarity(h_ref, trial, embedder);
                if (sim >= best_sim) {
                    best_sim = sim;
                    best_src = cand;
                }
            }
            chosen.insert(std::upper_bound(chosen.begin(), chosen.end(), best_src), best_src);
        }
        for (int i : chosen) kept.push_back(x.ids[i]);
    }

    TokenSequence out;
    out.ids.assign(n, vocab.pad_id);
    for (int i = 0; i < s && i < static_cast<int>(kept.size()); ++i) {
        out.ids[surviving_positions[i]] = kept[i];
    }
    return out;
}

inline long long binomial_or_cap(int n, int k, long long cap) {
    if (k < 0 || k > n) return 0;
    long long c = 1;
    for (int i = 1; i <= k; ++i) {
        c = c * (n - k + i) / i;
        if (c > cap) return cap + 1;
    }
    return c;
}

template <class Real>
struct ExhaustiveResult {
    TokenSequence subsequence;
    double similarity = 0.0;
    long long evaluated = 0;
};

// Exact maximizer over all order-preserving S-subsequences. Refuses when the
// subset count exceeds the budget.
template <class Real>
ExhaustiveResult<Real> exhaustive_upper_bound(const TokenSequence& x, int s,
                                              const SentenceEmbedder<Real>& embedder,
                                              long long budget = 1000000) {
    const int n = x.length();
    if (s < 1 || s > n) throw InputError("exhaustive_upper_bound: need 1 <= S <= N");
    const long long count = binomial_or_cap(n, s, budget);
    if (count > budget) {
        throw InputError("exhaustive_upper_bound: C(" + std::to_string(n) + ", " +
                         std::to_string(s) + ") exceeds budget " + std::to_string(budget));
    }

    const std::vector<Real> h_ref = [&] {
        ad::Graph<Real> g;
        return embedder.embed_ids(g, std::span<const TokenId>(x.ids.data(), x.ids.size()))
            .value();
    }();

    ExhaustiveResult<Real> best;
    best.similarity = -std::numeric_limits<double>::infinity();
    std::vector<int> comb(s);
    for (int i = 0; i < s; ++i) comb[i] = i;
    for (;;) {
        std::vector<TokenId> sub;
        sub.reserve(s);
        for (int i : comb) sub.push_back(x.ids[i]);
        const double sim = detail::subsequence_similarity(h_ref, sub, embedder);
        ++best.evaluated;
        if (sim > best.similarity) {
            best.similarity = sim;
            best.subsequence.ids = sub;
        }
        int i = s - 1;
        while (i >= 0 && comb[i] == n - s + i) --i;
        if (i < 0) break;
        ++comb[i];
        for (int j = i + 1; j < s; ++j) comb[j] = comb[j - 1] + 1;
    }
    return best;
}

}  // namespace tokcode
