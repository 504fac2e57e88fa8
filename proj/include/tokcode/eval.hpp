#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tokcode/baselines.hpp"
#include "tokcode/dataset.hpp"

namespace tokcode {

struct EvalConfig {
    std::vector<double> rates{0.2, 0.4, 0.6};
    int trials = 20;
    int packets = 5;
    std::vector<MethodId> methods{MethodId::kPassthrough, MethodId::kInfilling,
                                  MethodId::kTokCode, MethodId::kGreedyUpperBound};
    // Named in reports but never executed.
    std::vector<MethodId> unimplemented{MethodId::kLlmPrediction};
    int bootstrap_resamples = 1000;
    uint64_t seed = 0;

    // Integer packet-loss count for rate p; throws when p*P is not integral.
    int packets_lost_for(double p) const;
    void validate() const;
};

struct EvalModels {
    const Transformer<double>* base = nullptr;
    const LoraSet<double>* lora = nullptr;
    const SentenceEmbedder<double>* embedder = nullptr;  // train-domain
    const SentenceEmbedder<double>* heldout = nullptr;   // cross-domain proxy
    const Vocabulary* vocab = nullptr;
};

struct RecordRow {
    int sample_id = 0;
    int trial = 0;
    MethodId method = MethodId::kPassthrough;
    double p = 0.0;
    std::string embedder;
    double similarity = 0.0;
    double slot_recovery = 0.0;
};

struct AggregateRow {
    MethodId method = MethodId::kPassthrough;
    double p = 0.0;
    std::string embedder;
    bool implemented = true;
    double mean = 0.0;
    double stddev = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    int n = 0;
};

struct GapRow {
    MethodId method = MethodId::kPassthrough;
    double p = 0.0;
    std::string embedder;
    std::optional<double> closure;  // empty when the baseline-to-bound gap is zero
};

struct MetricsTable {
    std::vector<AggregateRow> aggregates;
    std::vector<RecordRow> records;
    std::vector<GapRow> gaps;
    nlohmann::json run_config;
};

// Transmit-side transform, channel, receive-side transform. The returned
// sequence is post-compaction and carries no EOS. TokCode's learned encoder
// engages only when the channel actually erases packets; under a lossless
// configuration every method reduces to the identity.
TokenSequence run_method(MethodId method, const Sample& sample, const LossPattern& pattern,
                         const ChannelConfig& channel, const EvalModels& models);

// Paired evaluation: within one (sample, trial) every method faces the same
// pattern. When C(P, P_loss) <= trials the patterns are enumerated and cycled
// instead of sampled.
MetricsTable evaluate(const std::vector<Sample>& test_set, const EvalConfig& cfg,
                      const EvalModels& models);

// (mean_method - mean_baseline) / (mean_upper - mean_baseline).
std::optional<double> gap_closure(double mean_baseline, double mean_method, double mean_upper);

}  // namespace tokcode
