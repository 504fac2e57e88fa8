#include "tokcode/channel.hpp"

#include <algorithm>

#include <json.hpp>

namespace tokcode {

void ChannelConfig::validate() const {
    if (packets < 1) {
        throw ConfigError("channel: packet count must be >= 1, got " + std::to_string(packets));
    }
    if (packets_lost < 0 || packets_lost > packets) {
        throw ConfigError("channel: lost packet count " + std::to_string(packets_lost) +
                          " out of range [0, " + std::to_string(packets) + "]");
    }
}

int ReceivedSequence::missing_count() const {
    int n = 0;
    for (const auto& s : slots) n += !s.has_value();
    return n;
}

std::string LossPattern::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (int p : lost_packets) arr.push_back(p);
    return arr.dump();
}

LossPattern LossPattern::from_json(const std::string& text) {
    LossPattern out;
    try {
        for (const auto& e : nlohmann::json::parse(text)) {
            out.lost_packets.insert(e.get<int>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("loss pattern: malformed JSON: ") + e.what());
    }
    return out;
}

int packet_index(int position, int packets) {
    if (position < 1 || packets < 1) {
        throw InputError("packet_index: need position >= 1 and packets >= 1");
    }
    return 1 + (position - 1) % packets;
}

std::vector<Packet> interleave(const TokenSequence& seq, int packets) {
    if (packets < 1) throw InputError("interleave: packets must be >= 1");
    std::vector<Packet> out(packets);
    for (int n = 1; n <= seq.length(); ++n) {
        out[packet_index(n, packets) - 1].entries.emplace_back(n, seq.ids[n - 1]);
    }
    return out;
}

TokenSequence deinterleave(const std::vector<Packet>& packets, int original_length) {
    TokenSequence out;
    out.ids.assign(original_length, -1);
    for (const auto& pkt : packets) {
        for (const auto& [pos, tok] : pkt.entries) {
            if (pos < 1 || pos > original_length) {
                throw InputError("deinterleave: position " + std::to_string(pos) +
                                 " outside [1, " + std::to_string(original_length) + "]");
            }
            out.ids[pos - 1] = tok;
        }
    }
    return out;
}

LossPattern sample_loss_pattern(int packets, int packets_lost, Rng& rng) {
    if (packets < 1 || packets_lost < 0 || packets_lost > packets) {
        throw ConfigError("sample_loss_pattern: need 0 <= lost <= packets, got lost=" +
                          std::to_string(packets_lost) + " packets=" + std::to_string(packets));
    }
    // Partial Fisher-Yates over packet indices gives a uniform k-subset.
    std::vector<int> idx(packets);
    for (int i = 0; i < packets; ++i) idx[i] = i + 1;
    LossPattern out;
    for (int i = 0; i < packets_lost; ++i) {
        const int j = i + static_cast<int>(rng.next_below(packets - i));
        std::swap(idx[i], idx[j]);
        out.lost_packets.insert(idx[i]);
    }
    return out;
}

std::vector<LossPattern> enumerate_loss_patterns(int packets, int packets_lost) {
    if (packets < 1 || packets_lost < 0 || packets_lost > packets) {
        throw ConfigError("enumerate_loss_patterns: need 0 <= lost <= packets");
    }
    std::vector<LossPattern> out;
    std::vector<int> comb(packets_lost);
    for (int i = 0; i < packets_lost; ++i) comb[i] = i + 1;
    for (;;) {
        LossPattern p;
        p.lost_packets.insert(comb.begin(), comb.end());
        out.push_back(std::move(p));
        int i = packets_lost - 1;
        while (i >= 0 && comb[i] == packets - packets_lost + i + 1) --i;
        if (i < 0) break;
        ++comb[i];
        for (int j = i + 1; j < packets_lost; ++j) comb[j] = comb[j - 1] + 1;
    }
    return out;
}

ReceivedSequence apply_channel(const TokenSequence& seq, const ChannelConfig& config,
                               const LossPattern& pattern) {
    config.validate();
    if (static_cast<int>(pattern.lost_packets.size()) != config.packets_lost) {
        throw InputError("apply_channel: pattern has " +
                         std::to_string(pattern.lost_packets.size()) +
                         " lost packets, config says " + std::to_string(config.packets_lost));
    }
    for (int p : pattern.lost_packets) {
        if (p < 1 || p > config.packets) {
            throw InputError("apply_channel: lost packet index " + std::to_string(p) +
                             " outside [1, " + std::to_string(config.packets) + "]");
        }
    }
    ReceivedSequence out;
    out.pattern = pattern;
    out.slots.resize(seq.length());
    for (int n = 1; n <= seq.length(); ++n) {
        if (!pattern.contains(packet_index(n, config.packets))) {
            out.slots[n - 1] = seq.ids[n - 1];
        }
    }
    return out;
}

TokenSequence compact(const ReceivedSequence& received) {
    TokenSequence out;
    out.ids.reserve(received.slots.size());
    for (const auto& s : received.slots) {
        if (s.has_value()) out.ids.push_back(*s);
    }
    return out;
}

TokenSequence compact_and_terminate(const ReceivedSequence& received, TokenId eos_id) {
    TokenSequence out = compact(received);
    out.ids.push_back(eos_id);
    return out;
}

}  // namespace tokcode
