#include "tokcode/eval.hpp"

#include <algorithm>
#include <map>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "tokcode/inference.hpp"

namespace tokcode {

int EvalConfig::packets_lost_for(double p) const {
    const double exact = p * packets;
    const double rounded = std::round(exact);
    if (std::abs(exact - rounded) > 1e-9) {
        throw ConfigError("eval: loss rate " + std::to_string(p) + " times P=" +
                          std::to_string(packets) + " is not an integer packet count");
    }
    const int lost = static_cast<int>(rounded);
    if (lost < 0 || lost > packets) {
        throw ConfigError("eval: loss rate " + std::to_string(p) + " outside [0, 1]");
    }
    if (lost == packets) {
        throw ConfigError("eval: loss rate " + std::to_string(p) +
                          " erases every packet; the received embedding is undefined");
    }
    return lost;
}

void EvalConfig::validate() const {
    if (rates.empty()) throw ConfigError("eval: no loss rates configured");
    if (trials < 1) throw ConfigError("eval: trials must be >= 1");
    if (packets < 1) throw ConfigError("eval: packets must be >= 1");
    if (methods.empty()) throw ConfigError("eval: no methods configured");
    if (bootstrap_resamples < 1) throw ConfigError("eval: bootstrap resamples must be >= 1");
    for (double p : rates) packets_lost_for(p);
}

TokenSequence run_method(MethodId method, const Sample& sample, const LossPattern& pattern,
                         const ChannelConfig& channel, const EvalModels& models) {
    if (models.vocab == nullptr) throw ConfigError("run_method: missing vocabulary");
    const TokenSequence& x = sample.seq;

    TokenSequence tx;
    switch (method) {
        case MethodId::kPassthrough:
        case MethodId::kInfilling:
            tx = passthrough(x);
            break;
        case MethodId::kTokCode:
            if (models.base == nullptr || models.lora == nullptr) {
                throw ConfigError("run_method: tokcode requires base and lora checkpoints");
            }
            tx = channel.packets_lost > 0 ? encode_tokens(x, *models.base, models.lora,
                                                          *models.vocab)
                                          : x;
            break;
        case MethodId::kGreedyUpperBound:
            if (models.embedder == nullptr) {
                throw ConfigError("run_method: greedy bound requires the sentence embedder");
            }
            tx = greedy_upper_bound(x, pattern, channel, *models.embedder, *models.vocab);
            break;
        case MethodId::kLlmPrediction:
            throw ConfigError("run_method: llm_prediction is declared but not implemented");
    }

    const ReceivedSequence received = apply_channel(tx, channel, pattern);
    if (method == MethodId::kInfilling) {
        if (models.base == nullptr) {
            throw ConfigError("run_method: infilling requires the base checkpoint");
        }
        return infill(received, *models.base, *models.vocab);
    }
    return compact(received);
}

std::optional<double> gap_closure(double mean_baseline, double mean_method, double mean_upper) {
    const double gap = mean_upper - mean_baseline;
    if (gap == 0.0) return std::nullopt;
    return (mean_method - mean_baseline) / gap;
}

namespace {

struct Key {
    MethodId method;
    double p;
    std::string embedder;
    bool operator<(const Key& o) const {
        if (method != o.method) return method < o.method;
        if (p != o.p) return p < o.p;
        return embedder < o.embedder;
    }
};

double similarity_or_throw(const TokenSequence& ref, const TokenSequence& got,
                           const SentenceEmbedder<double>& emb) {
    if (got.length() == 0) {
        throw NumericError("evaluate: received sequence is empty; cannot embed");
    }
    return sentence_similarity(ref, got, emb);
}

}  // namespace

MetricsTable evaluate(const std::vector<Sample>& test_set, const EvalConfig& cfg,
                      const EvalModels& models) {
    cfg.validate();
    if (test_set.empty()) throw ConfigError("evaluate: empty test set");
    if (models.embedder == nullptr || models.heldout == nullptr) {
        throw ConfigError("evaluate: both embedders are required");
    }

    MetricsTable table;
    const int n_samples = static_cast<int>(test_set.size());

    // Pattern plans per (rate, sample, trial), fixed before the parallel loop.
    struct TrialPlan {
        LossPattern pattern;
    };
    Rng rng(stage_seed(cfg.seed, "eval-patterns"));

    for (double p : cfg.rates) {
        const int lost = cfg.packets_lost_for(p);
        const ChannelConfig channel{cfg.packets, lost};
        const auto enumerated = enumerate_loss_patterns(cfg.packets, lost);
        const bool exhaustive = static_cast<long long>(enumerated.size()) <= cfg.trials;

        std::vector<std::vector<TrialPlan>> plans(n_samples);
        for (int s = 0; s < n_samples; ++s) {
            plans[s].resize(cfg.trials);
            for (int t = 0; t < cfg.trials; ++t) {
                plans[s][t].pattern = exhaustive
                                          ? enumerated[t % enumerated.size()]
                                          : sample_loss_pattern(cfg.packets, lost, rng);
            }
        }

        std::vector<std::vector<RecordRow>> per_sample_rows(n_samples);
#pragma omp parallel for schedule(dynamic)
        for (int s = 0; s < n_samples; ++s) {
            const Sample& sample = test_set[s];
            auto& rows = per_sample_rows[s];
            for (int t = 0; t < cfg.trials; ++t) {
                const LossPattern& pattern = plans[s][t].pattern;
                for (MethodId m : cfg.methods) {
                    const TokenSequence got = run_method(m, sample, pattern, channel, models);
                    const double slot = slot_recovery_rate(got, sample.slots);
                    const double sim_train = similarity_or_throw(sample.seq, got,
                                                                 *models.embedder);
                    const double sim_held = similarity_or_throw(sample.seq, got,
                                                                *models.heldout);
                    rows.push_back({s, t, m, p, "sent_toy", sim_train, slot});
                    rows.push_back({s, t, m, p, "heldout_proxy", sim_held, slot});
                }
            }
        }
        for (auto& rows : per_sample_rows) {
            table.records.insert(table.records.end(), rows.begin(), rows.end());
        }
    }

    // Aggregates with bootstrap CIs over per-sample means.
    std::map<Key, std::vector<std::vector<double>>> grouped;  // [sample] -> values
    for (const auto& r : table.records) {
        auto& g = grouped[{r.method, r.p, r.embedder}];
        if (g.empty()) g.resize(n_samples);
        g[static_cast<size_t>(r.sample_id)].push_back(r.similarity);
    }

    Rng boot_rng(stage_seed(cfg.seed, "eval-bootstrap"));
    for (const auto& [key, per_sample] : grouped) {
        AggregateRow agg;
        agg.method = key.method;
        agg.p = key.p;
        agg.embedder = key.embedder;

        std::vector<double> sample_means;
        double total = 0.0;
        int count = 0;
        for (const auto& vals : per_sample) {
            if (vals.empty()) continue;
            double m = 0.0;
            for (double v : vals) {
                total += v;
                ++count;
            }
            for (double v : vals) m += v;
            sample_means.push_back(m / vals.size());
        }
        agg.n = count;
        agg.mean = total / count;
        double var = 0.0;
        for (const auto& vals : per_sample) {
            for (double v : vals) var += (v - agg.mean) * (v - agg.mean);
        }
        agg.stddev = count > 1 ? std::sqrt(var / (count - 1)) : 0.0;

        std::vector<double> boot(cfg.bootstrap_resamples);
        for (int b = 0; b < cfg.bootstrap_resamples; ++b) {
            double m = 0.0;
            for (size_t i = 0; i < sample_means.size(); ++i) {
                m += sample_means[boot_rng.next_below(sample_means.size())];
            }
            boot[b] = m / sample_means.size();
        }
        std::sort(boot.begin(), boot.end());
        agg.ci_lo = boot[static_cast<size_t>(0.025 * (boot.size() - 1))];
        agg.ci_hi = boot[static_cast<size_t>(0.975 * (boot.size() - 1))];
        table.aggregates.push_back(agg);
    }

    // Rows for declared-but-unimplemented methods keep the table comparable.
    for (MethodId m : cfg.unimplemented) {
        for (double p : cfg.rates) {
            for (const char* emb : {"sent_toy", "heldout_proxy"}) {
                AggregateRow agg;
                agg.method = m;
                agg.p = p;
                agg.embedder = emb;
                agg.implemented = false;
                table.aggregates.push_back(agg);
            }
        }
    }

    // Gap closures per rate and embedder against the passthrough baseline and
    // the greedy bound.
    for (double p : cfg.rates) {
        for (const char* emb : {"sent_toy", "heldout_proxy"}) {
            auto mean_of = [&](MethodId m) -> std::optional<double> {
                for (const auto& a : table.aggregates) {
                    if (a.method == m && a.p == p && a.embedder == emb && a.implemented) {
                        return a.mean;
                    }
                }
                return std::nullopt;
            };
            const auto base = mean_of(MethodId::kPassthrough);
            const auto upper = mean_of(MethodId::kGreedyUpperBound);
            if (!base || !upper) continue;
            for (MethodId m : cfg.methods) {
                const auto mm = mean_of(m);
                if (!mm) continue;
                GapRow row;
                row.method = m;
                row.p = p;
                row.embedder = emb;
                row.closure = gap_closure(*base, *mm, *upper);
                table.gaps.push_back(row);
            }
        }
    }
    return table;
}

}  // namespace tokcode
