#pragma once

#include <chrono>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "tokcode/dataset.hpp"
#include "tokcode/optim.hpp"
#include "tokcode/transformer.hpp"

namespace tokcode {

struct PretrainConfig {
    int steps = 2500;
    int batch = 32;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double label_smooth = 0.05;
    // Per-sample corruption rate is uniform in [mask_rate_min, mask_rate_max];
    // a clean_prob fraction of samples is left uncorrupted, which trains the
    // copy behaviour the conditioning path relies on.
    double mask_rate_min = 0.0;
    double mask_rate_max = 0.35;
    double clean_prob = 0.25;
    int span_max = 3;
    // Repetition noise: a visible position's target is, with this
    // probability, another token drawn from the same sequence. The decoder
    // then carries calibrated uncertainty along in-sequence repetitions
    // instead of collapsing to a deterministic copy.
    double repeat_noise = 0.3;
    // Fraction of repetition draws taken from the sequence's slot tokens;
    // the prior then leans toward repeating content-bearing tokens.
    double repeat_slot_bias = 0.7;
    // Linear decay to lr_final_frac * lr over the run.
    double lr_final_frac = 0.1;
    uint64_t seed = 0;

    void validate() const {
        if (steps < 0 || batch < 1) throw ConfigError("pretrain: bad steps/batch");
        if (mask_rate_min < 0 || mask_rate_max > 1 || mask_rate_min > mask_rate_max) {
            throw ConfigError("pretrain: mask rate range invalid");
        }
        if (span_max < 1) throw ConfigError("pretrain: span_max must be >= 1");
    }
};

struct PretrainLogRow {
    int step = 0;
    double loss = 0.0;
    double wall_ms = 0.0;
};

// Replaces random spans with the sentinel token. The decoder target is the
// full original sequence, so visible positions train copying and masked
// positions train infilling.
inline std::vector<TokenId> corrupt_spans(const TokenSequence& x, const Vocabulary& vocab,
                                          Rng& rng, double rate_min, double rate_max,
                                          int span_max) {
    const int n = x.length();
    std::vector<TokenId> cond = x.ids;
    const double rate = rate_min + (rate_max - rate_min) * rng.next_double();
    const int target = static_cast<int>(std::lround(rate * n));
    std::vector<bool> masked(n, false);
    int count = 0;
    int guard = 0;
    while (count < target && ++guard < 64 * n) {
        const int start = static_cast<int>(rng.next_below(n));
        const int len = 1 + static_cast<int>(rng.next_below(span_max));
        for (int pos = start; pos < std::min(start + len, n) && count < target; ++pos) {
            if (!masked[pos]) {
                masked[pos] = true;
                ++count;
            }
        }
    }
    const TokenId sentinel = vocab.sentinel_ids[0];
    for (int i = 0; i < n; ++i) {
        if (masked[i]) cond[i] = sentinel;
    }
    return cond;
}

template <class Real>
struct PretrainResult {
    Transformer<Real> model;
    std::vector<PretrainLogRow> log;
};

// Span-infilling pretraining of the toy encoder-decoder. Per-sample graphs
// run in parallel; gradients reduce in sample order, so results are
// bit-identical at any thread count.
template <class Real>
PretrainResult<Real> pretrain_base(const Dataset& ds, const TransformerConfig& mcfg,
                                   const PretrainConfig& cfg) {
    cfg.validate();
    mcfg.validate();
    if (ds.train.empty()) throw ConfigError("pretrain: empty training set");

    PretrainResult<Real> out;
    out.model = Transformer<Real>::init(mcfg);
    Transformer<Real>& model = out.model;

    std::vector<std::string> names;
    for (const auto& [name, t] : model.weights) names.push_back(name);

    std::vector<AdamState<Real>> adam(names.size());
    const AdamConfig<Real> adam_cfg{static_cast<Real>(cfg.lr), static_cast<Real>(cfg.beta1),
                                    static_cast<Real>(cfg.beta2), Real(1e-8)};

    Rng rng(stage_seed(cfg.seed, "pretrain"));
    const auto t0 = std::chrono::steady_clock::now();

    for (int step = 0; step < cfg.steps; ++step) {
        struct Plan {
            int sample_idx;
            uint64_t corrupt_seed;
            bool clean;
        };
        std::vector<Plan> plans(cfg.batch);
        for (auto& p : plans) {
            p.sample_idx = static_cast<int>(rng.next_below(ds.train.size()));
            p.corrupt_seed = rng.next_u64();
            p.clean = rng.next_double() < cfg.clean_prob;
        }

        std::vector<std::vector<std::vector<Real>>> sample_grads(cfg.batch);
        std::vector<double> sample_loss(cfg.batch, 0.0);

#pragma omp parallel for schedule(dynamic)
        for (int j = 0; j < cfg.batch; ++j) {
            const Sample& s = ds.train[plans[j].sample_idx];
            Rng crng(plans[j].corrupt_seed);
            const auto cond =
                plans[j].clean
                    ? s.seq.ids
                    : corrupt_spans(s.seq, ds.vocab, crng, cfg.mask_rate_min,
                                    cfg.mask_rate_max, cfg.span_max);
            const TokenId sentinel = ds.vocab.sentinel_ids[0];
            std::vector<TokenId> targets = s.seq.ids;
            if (cfg.repeat_noise > 0) {
                std::vector<TokenId> slot_tokens;
                for (const auto& [slot, tok] : s.slots) slot_tokens.push_back(tok);
                for (size_t i = 0; i < targets.size(); ++i) {
                    if (cond[i] != sentinel && crng.next_double() < cfg.repeat_noise) {
                        if (!slot_tokens.empty() &&
                            crng.next_double() < cfg.repeat_slot_bias) {
                            targets[i] = slot_tokens[crng.next_below(slot_tokens.size())];
                        } else {
                            targets[i] = s.seq.ids[crng.next_below(targets.size())];
                        }
                    }
                }
            }

            ad::Graph<Real> g;
            auto leaves = make_leaves(g, model, nullptr, TrainMode::kFull);
            auto enc_out = encoder_forward(g, leaves, cond);
            const auto dec_ids = shifted_decoder_input(s.seq, ds.vocab.pad_id);
            auto logits = decoder_forward(g, leaves, dec_ids, enc_out);
            auto loss = ad::cross_entropy_rows(
                logits, std::span<const TokenId>(targets.data(), targets.size()),
                static_cast<Real>(cfg.label_smooth));
            g.backward(loss);

            sample_loss[j] = static_cast<double>(loss.scalar());
            auto& grads = sample_grads[j];
            grads.reserve(names.size());
            for (const auto& name : names) grads.push_back(leaves.at(name).grad());
        }

        double loss_mean = 0.0;
        std::vector<std::vector<Real>> grad_acc(names.size());
        for (size_t k = 0; k < names.size(); ++k) {
            grad_acc[k].assign(model.weights.at(names[k]).numel(), Real(0));
        }
        const Real inv_batch = Real(1) / Real(cfg.batch);
        for (int j = 0; j < cfg.batch; ++j) {
            loss_mean += sample_loss[j];
            for (size_t k = 0; k < names.size(); ++k) {
                const auto& gj = sample_grads[j][k];
                for (size_t i = 0; i < gj.size(); ++i) grad_acc[k][i] += gj[i] * inv_batch;
            }
        }
        loss_mean /= cfg.batch;
        if (!std::isfinite(loss_mean)) {
            throw NumericError("pretraining diverged at step " + std::to_string(step));
        }

        AdamConfig<Real> step_cfg = adam_cfg;
        if (cfg.steps > 1) {
            const double frac = static_cast<double>(step) / (cfg.steps - 1);
            step_cfg.lr = static_cast<Real>(cfg.lr * (1.0 - (1.0 - cfg.lr_final_frac) * frac));
        }
        for (size_t k = 0; k < names.size(); ++k) {
            adam_step(model.weights.at(names[k]).value, grad_acc[k], adam[k], step_cfg);
        }

        PretrainLogRow row;
        row.step = step;
        row.loss = loss_mean;
        row.wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        out.log.push_back(row);
    }
    return out;
}

// Mean infilling cross-entropy of a model over a sample set, with fixed
// corruption seeds. Used to compare trained checkpoints against baselines.
template <class Real>
double infill_cross_entropy(const Transformer<Real>& model, const Dataset& ds,
                            const std::vector<Sample>& samples, double mask_rate,
                            uint64_t seed) {
    if (samples.empty()) throw InputError("infill_cross_entropy: no samples");
    double total = 0.0;
    Rng rng(stage_seed(seed, "infill-ce"));
    for (const auto& s : samples) {
        Rng crng(rng.next_u64());
        const auto cond = corrupt_spans(s.seq, ds.vocab, crng, mask_rate, mask_rate, 3);
        ad::Graph<Real> g;
        auto leaves = make_leaves(g, model, nullptr, TrainMode::kFrozen);
        auto enc_out = encoder_forward(g, leaves, cond);
        const auto dec_ids = shifted_decoder_input(s.seq, ds.vocab.pad_id);
        auto logits = decoder_forward(g, leaves, dec_ids, enc_out);
        auto loss = ad::cross_entropy_rows(
            logits, std::span<const TokenId>(s.seq.ids.data(), s.seq.ids.size()), Real(0));
        total += static_cast<double>(loss.scalar());
    }
    return total / samples.size();
}

}  // namespace tokcode
