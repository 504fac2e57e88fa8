#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tokcode/vocab.hpp"

namespace tokcode {

struct ChannelConfig {
    int packets = 5;      // P
    int packets_lost = 2; // P_loss

    double loss_rate() const { return static_cast<double>(packets_lost) / packets; }
    void validate() const;
};

// Packet indices are 1-based throughout, matching the interleaving formula.
struct LossPattern {
    std::set<int> lost_packets;

    bool contains(int packet) const { return lost_packets.count(packet) != 0; }
    std::string to_json() const;
    static LossPattern from_json(const std::string& text);
};

struct ReceivedSequence {
    // One entry per original position; nullopt marks an erased token.
    std::vector<std::optional<TokenId>> slots;
    LossPattern pattern;

    int original_length() const { return static_cast<int>(slots.size()); }
    int missing_count() const;
};

// Packet carrying (1-based position, token) pairs.
struct Packet {
    std::vector<std::pair<int, TokenId>> entries;
};

// q(n) = 1 + ((n-1) mod P) for 1-based position n.
int packet_index(int position, int packets);

std::vector<Packet> interleave(const TokenSequence& seq, int packets);

// Inverse of interleave for a lossless transmission.
TokenSequence deinterleave(const std::vector<Packet>& packets, int original_length);

// Uniformly random subset of exactly `packets_lost` packets; never Bernoulli.
LossPattern sample_loss_pattern(int packets, int packets_lost, Rng& rng);

// All C(P, P_loss) patterns in deterministic (lexicographic) order.
std::vector<LossPattern> enumerate_loss_patterns(int packets, int packets_lost);

ReceivedSequence apply_channel(const TokenSequence& seq, const ChannelConfig& config,
                               const LossPattern& pattern);

// Surviving tokens in order, with one EOS appended.
TokenSequence compact_and_terminate(const ReceivedSequence& received, TokenId eos_id);

// Surviving tokens in order, no terminator.
TokenSequence compact(const ReceivedSequence& received);

}  // namespace tokcode
