#pragma once

#include <chrono>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "tokcode/channel.hpp"
#include "tokcode/dataset.hpp"
#include "tokcode/embedder.hpp"
#include "tokcode/optim.hpp"
#include "tokcode/transformer.hpp"

namespace tokcode {

struct SfmaConfig {
    double lambda = 0.1;
    ChannelConfig channel{5, 2};
    int steps = 1200;
    int batch = 32;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    // "adam" or "nsgd" (globally normalized gradient descent). Adam's
    // per-coordinate rescaling equalizes flip speeds and loses the gradient's
    // ranking of candidate substitutions; nsgd preserves it.
    std::string optimizer = "nsgd";
    double temperature = 1.0;
    // Global gradient-norm clip; 0 disables.
    double clip_norm = 1.0;
    // Decoupled weight decay on the adapter matrices; anchors the encoder
    // near the identity it starts from.
    double weight_decay = 0.0;
    // Channel draws per sample per step estimating the loss expectation.
    // 0 enumerates every pattern (exact expectation; cheap when C(P,P_loss)
    // is small).
    int pattern_draws = 0;
    // Mixed-rate curriculum: when non-empty, each drawn pattern loses a
    // packet count sampled uniformly from this list instead of the fixed
    // channel.packets_lost.
    std::vector<int> curriculum_lost;
    // Every val_every steps the sentence loss is measured on a held-back
    // slice of the training set; the best adapters win. 0 disables.
    int val_every = 0;
    int val_samples = 64;
    // The received side always gets EOS appended; setting this also appends
    // EOS to the reference, for ablation.
    bool symmetric_eos = false;
    uint64_t seed = 0;

    void validate() const {
        if (lambda < 0) throw ConfigError("sfma: lambda must be >= 0");
        channel.validate();
        if (channel.packets_lost >= channel.packets) {
            throw ConfigError("sfma: training requires P_loss < P so some tokens survive");
        }
        if (steps < 0 || batch < 1) throw ConfigError("sfma: bad steps/batch");
        if (!(temperature > 0)) throw ConfigError("sfma: temperature must be positive");
        if (optimizer != "adam" && optimizer != "nsgd") {
            throw ConfigError("sfma: unknown optimizer '" + optimizer + "'");
        }
        for (int lost : curriculum_lost) {
            if (lost < 0 || lost >= channel.packets) {
                throw ConfigError("sfma: curriculum packet-loss count " +
                                  std::to_string(lost) + " outside [0, P)");
            }
        }
    }
};

// Softmax over ordinary tokens only: reserved ids are pushed to -inf before
// normalization, matching the argmax masking of the encoder.
template <class Real>
ad::Tensor<Real> soft_weights(ad::Graph<Real>& g, const ad::Tensor<Real>& logits,
                              const Vocabulary& vocab, Real temperature = Real(1)) {
    if (logits.cols() != vocab.total()) {
        throw InputError("soft_weights: logit width " + std::to_string(logits.cols()) +
                         " does not match vocabulary total " + std::to_string(vocab.total()));
    }
    for (Real v : logits.value()) {
        if (!std::isfinite(static_cast<double>(v))) {
            throw NumericError("soft_weights: non-finite logits");
        }
    }
    std::vector<Real> mask(static_cast<size_t>(vocab.total()), Real(0));
    for (int j = vocab.size; j < vocab.total(); ++j) mask[static_cast<size_t>(j)] = Real(-1e30);
    auto mask_row = g.constant(1, vocab.total(), mask, "reserved_mask");
    auto masked = ad::add_bias(logits, mask_row);
    if (temperature != Real(1)) masked = ad::scale(masked, Real(1) / temperature);
    return ad::softmax_rows(masked);
}

// Forward equals the hard embedding bit-exactly; gradient flows to the soft
// one. The fused op realizes the stop-gradient construction without the
// floating-point reassociation a literal (hard - soft) + soft would add.
template <class Real>
ad::Tensor<Real> ste_embedding(const ad::Tensor<Real>& v_hard, const ad::Tensor<Real>& v_soft) {
    return ad::straight_through(v_hard, v_soft);
}

template <class Real>
ad::Tensor<Real> loss_sent(const ad::Tensor<Real>& h_ref, const ad::Tensor<Real>& h_rx) {
    return ad::affine(ad::cosine_similarity(h_ref, h_rx), Real(-1), Real(1));
}

template <class Real>
ad::Tensor<Real> loss_norm(const ad::Tensor<Real>& h_ref, const ad::Tensor<Real>& h_rx) {
    return ad::squared_error(ad::l2_norm(h_rx), ad::l2_norm(h_ref));
}

template <class Real>
ad::Tensor<Real> total_loss(const ad::Tensor<Real>& h_ref, const ad::Tensor<Real>& h_rx,
                            Real lambda) {
    if (lambda < Real(0)) throw InputError("total_loss: lambda must be >= 0");
    return ad::add(loss_sent(h_ref, h_rx), ad::scale(loss_norm(h_ref, h_rx), lambda));
}

// One SFMA forward pass for a single sample and a fixed loss pattern.
// Shared by the training loop and the tests that pin down STE exactness.
template <class Real>
struct SfmaSampleGraph {
    ad::Tensor<Real> loss;
    ad::Tensor<Real> l_sent;
    ad::Tensor<Real> l_norm;
    TokenSequence z;
    std::vector<int> surviving;  // 0-based positions of z that the channel keeps
};

template <class Real>
SfmaSampleGraph<Real> build_sfma_sample(ad::Graph<Real>& g, const ModelLeaves<Real>& leaves,
                                        const SentenceEmbedder<Real>& embedder,
                                        const Vocabulary& vocab, const TokenSequence& x,
                                        const LossPattern& pattern, const SfmaConfig& cfg) {
    auto enc = encode_tokens_graph(g, leaves, x, vocab);
    auto w = soft_weights(g, enc.logits, vocab, static_cast<Real>(cfg.temperature));

    const auto& cb = embedder.codebook();
    auto v_sent = g.constant(cb.rows, cb.cols, cb.value, "v_sent");
    auto v_soft = ad::embedding_mix(w, v_sent);
    auto v_hard = ad::embedding_lookup(
        v_sent, std::span<const TokenId>(enc.z.ids.data(), enc.z.ids.size()));
    auto v_ste = ste_embedding(v_hard, v_soft);

    SfmaSampleGraph<Real> out;
    out.z = enc.z;
    for (int n = 1; n <= x.length(); ++n) {
        if (!pattern.contains(packet_index(n, cfg.channel.packets))) {
            out.surviving.push_back(n - 1);
        }
    }

    const std::vector<TokenId> eos_ids{vocab.eos_id};
    auto eos_row = ad::embedding_lookup(v_sent, eos_ids);
    ad::Tensor<Real> rx_rows =
        out.surviving.empty()
            ? eos_row
            : ad::concat_rows({ad::gather_rows(v_ste, out.surviving), eos_row});
    auto h_rx = embedder.embed_rows(g, rx_rows);

    std::vector<TokenId> ref_ids = x.ids;
    if (cfg.symmetric_eos) ref_ids.push_back(vocab.eos_id);
    auto h_ref = embedder.embed_ids(g, ref_ids);

    out.l_sent = loss_sent(h_ref, h_rx);
    out.l_norm = loss_norm(h_ref, h_rx);
    out.loss = ad::add(out.l_sent, ad::scale(out.l_norm, static_cast<Real>(cfg.lambda)));
    return out;
}

// The discrete path the deployed system runs: transmit z, erase, compact,
// append EOS, embed token ids. Training loss must match this bit-exactly.
template <class Real>
struct DiscreteLoss {
    Real loss, l_sent, l_norm;
};

template <class Real>
DiscreteLoss<Real> discrete_path_loss(const TokenSequence& x, const TokenSequence& z,
                                      const LossPattern& pattern,
                                      const SentenceEmbedder<Real>& embedder,
                                      const Vocabulary& vocab, const SfmaConfig& cfg) {
    const auto received = apply_channel(z, cfg.channel, pattern);
    const auto compacted = compact_and_terminate(received, vocab.eos_id);
    ad::Graph<Real> g;
    auto h_rx = embedder.embed_ids(
        g, std::span<const TokenId>(compacted.ids.data(), compacted.ids.size()));
    std::vector<TokenId> ref_ids = x.ids;
    if (cfg.symmetric_eos) ref_ids.push_back(vocab.eos_id);
    auto h_ref = embedder.embed_ids(g, ref_ids);
    auto ls = loss_sent(h_ref, h_rx);
    auto ln = loss_norm(h_ref, h_rx);
    auto lt = ad::add(ls, ad::scale(ln, static_cast<Real>(cfg.lambda)));
    return {lt.scalar(), ls.scalar(), ln.scalar()};
}

struct TrainLogRow {
    int step = 0;
    double loss = 0.0;
    double loss_sent = 0.0;
    double loss_norm = 0.0;
    double grad_norm = 0.0;
    double wall_ms = 0.0;
};

template <class Real>
struct SfmaResult {
    LoraSet<Real> lora;
    std::vector<TrainLogRow> log;
};

// Algorithm: per mini-batch, encode, soft weights, STE rows, simulate the
// channel, embed reference and received, backprop Eq-style losses through
// the STE path, update only the adapter matrices. Patterns are redrawn per
// sample per step.
template <class Real>
SfmaResult<Real> train_sfma(const Dataset& ds, const Transformer<Real>& base,
                            const SentenceEmbedder<Real>& embedder, const LoraSet<Real>& lora0,
                            const SfmaConfig& cfg) {
    cfg.validate();
    if (ds.train.empty()) throw ConfigError("train_sfma: empty training set");

    SfmaResult<Real> out;
    out.lora = lora0;
    LoraSet<Real>& lora = out.lora;

    size_t train_pool = ds.train.size();
    std::vector<Sample> val_slice;
    if (cfg.val_every > 0) {
        const size_t v = std::min<size_t>(cfg.val_samples, ds.train.size() / 4 + 1);
        train_pool = ds.train.size() - v;
        if (train_pool == 0) throw ConfigError("train_sfma: validation slice leaves no data");
        val_slice.assign(ds.train.begin() + train_pool, ds.train.end());
    }
    std::vector<int> lost_counts = cfg.curriculum_lost;
    if (lost_counts.empty()) lost_counts.push_back(cfg.channel.packets_lost);
    std::vector<LossPattern> all_patterns;
    for (int lost : lost_counts) {
        const auto pats = enumerate_loss_patterns(cfg.channel.packets, lost);
        all_patterns.insert(all_patterns.end(), pats.begin(), pats.end());
    }
    // Validation scores the exact expectation over every curriculum pattern.
    auto val_loss = [&]() {
        std::vector<double> losses(val_slice.size());
#pragma omp parallel for schedule(dynamic)
        for (size_t i = 0; i < val_slice.size(); ++i) {
            double acc = 0.0;
            for (const auto& pattern : all_patterns) {
                ad::Graph<Real> g;
                auto leaves = make_leaves(g, base, &lora, TrainMode::kFrozen);
                auto sample = build_sfma_sample(g, leaves, embedder, ds.vocab,
                                                val_slice[i].seq, pattern, cfg);
                acc += static_cast<double>(sample.loss.scalar());
            }
            losses[i] = acc / all_patterns.size();
        }
        double total = 0.0;
        for (double v : losses) total += v;
        return total / losses.size();
    };
    LoraSet<Real> best_lora = lora;
    double best_val = cfg.val_every > 0 ? val_loss() : 0.0;

    const size_t n_params = lora.adapters.size() * 2;
    std::vector<AdamState<Real>> adam(n_params);
    const AdamConfig<Real> adam_cfg{static_cast<Real>(cfg.lr), static_cast<Real>(cfg.beta1),
                                    static_cast<Real>(cfg.beta2), Real(1e-8)};

    Rng rng(stage_seed(cfg.seed, "sfma"));
    const auto t0 = std::chrono::steady_clock::now();

    for (int step = 0; step < cfg.steps; ++step) {
        struct Plan {
            int sample_idx;
            LossPattern pattern;
        };
        const int draws = cfg.pattern_draws > 0
                              ? cfg.pattern_draws
                              : static_cast<int>(all_patterns.size());
        std::vector<Plan> plans;
        plans.reserve(static_cast<size_t>(cfg.batch) * draws);
        for (int j = 0; j < cfg.batch; ++j) {
            const int sample_idx = static_cast<int>(rng.next_below(train_pool));
            if (cfg.pattern_draws > 0) {
                for (int d = 0; d < draws; ++d) {
                    const int lost = lost_counts[rng.next_below(lost_counts.size())];
                    plans.push_back({sample_idx,
                                     sample_loss_pattern(cfg.channel.packets, lost, rng)});
                }
            } else {
                for (const auto& pattern : all_patterns) {
                    plans.push_back({sample_idx, pattern});
                }
            }
        }
        const int units = static_cast<int>(plans.size());

        std::vector<std::vector<std::vector<Real>>> sample_grads(units);
        std::vector<double> s_loss(units), s_sent(units), s_norm(units);

#pragma omp parallel for schedule(dynamic)
        for (int j = 0; j < units; ++j) {
            const Sample& s = ds.train[plans[j].sample_idx];
            ad::Graph<Real> g;
            auto leaves = make_leaves(g, base, &lora, TrainMode::kLoraOnly);
            auto sample =
                build_sfma_sample(g, leaves, embedder, ds.vocab, s.seq, plans[j].pattern, cfg);
            g.backward(sample.loss);

            s_loss[j] = static_cast<double>(sample.loss.scalar());
            s_sent[j] = static_cast<double>(sample.l_sent.scalar());
            s_norm[j] = static_cast<double>(sample.l_norm.scalar());
            auto& grads = sample_grads[j];
            for (const auto& ad_ : lora.adapters) {
                const auto& pair = leaves.lora.at(ad_.target);
                grads.push_back(pair.first.grad());
                grads.push_back(pair.second.grad());
            }
        }

        std::vector<std::vector<Real>> grad_acc(n_params);
        for (size_t k = 0; k < lora.adapters.size(); ++k) {
            grad_acc[2 * k].assign(lora.adapters[k].a.numel(), Real(0));
            grad_acc[2 * k + 1].assign(lora.adapters[k].b.numel(), Real(0));
        }
        double loss_mean = 0, sent_mean = 0, norm_mean = 0;
        const Real inv_units = Real(1) / Real(units);
        for (int j = 0; j < units; ++j) {
            loss_mean += s_loss[j];
            sent_mean += s_sent[j];
            norm_mean += s_norm[j];
            for (size_t k = 0; k < n_params; ++k) {
                const auto& gj = sample_grads[j][k];
                for (size_t i = 0; i < gj.size(); ++i) grad_acc[k][i] += gj[i] * inv_units;
            }
        }
        loss_mean /= units;
        sent_mean /= units;
        norm_mean /= units;
        if (!std::isfinite(loss_mean)) {
            throw NumericError("sfma training diverged at step " + std::to_string(step));
        }

        double grad_sq = 0;
        for (const auto& gk : grad_acc) {
            for (Real v : gk) grad_sq += static_cast<double>(v) * static_cast<double>(v);
        }
        double grad_sq_clipped = grad_sq;
        if (cfg.clip_norm > 0 && grad_sq > cfg.clip_norm * cfg.clip_norm) {
            const Real scale_down = static_cast<Real>(cfg.clip_norm / std::sqrt(grad_sq));
            for (auto& gk : grad_acc) {
                for (auto& v : gk) v *= scale_down;
            }
            grad_sq_clipped = cfg.clip_norm * cfg.clip_norm;
        }

        if (cfg.optimizer == "adam") {
            for (size_t k = 0; k < lora.adapters.size(); ++k) {
                adam_step(lora.adapters[k].a.value, grad_acc[2 * k], adam[2 * k], adam_cfg);
                adam_step(lora.adapters[k].b.value, grad_acc[2 * k + 1], adam[2 * k + 1],
                          adam_cfg);
            }
        } else {
            const Real inv_norm =
                Real(1) / static_cast<Real>(std::sqrt(grad_sq_clipped) + 1e-12);
            const Real step_lr = static_cast<Real>(cfg.lr);
            for (size_t k = 0; k < lora.adapters.size(); ++k) {
                auto apply = [&](std::vector<Real>& v, const std::vector<Real>& gk) {
                    for (size_t i = 0; i < v.size(); ++i) v[i] -= step_lr * gk[i] * inv_norm;
                };
                apply(lora.adapters[k].a.value, grad_acc[2 * k]);
                apply(lora.adapters[k].b.value, grad_acc[2 * k + 1]);
            }
        }
        if (cfg.weight_decay > 0) {
            const Real keep = Real(1) - static_cast<Real>(cfg.lr * cfg.weight_decay);
            for (auto& ad_ : lora.adapters) {
                for (auto& v : ad_.a.value) v *= keep;
                for (auto& v : ad_.b.value) v *= keep;
            }
        }

        if (cfg.val_every > 0 && (step + 1) % cfg.val_every == 0) {
            const double v = val_loss();
            if (v < best_val) {
                best_val = v;
                best_lora = lora;
            }
        }

        TrainLogRow row;
        row.step = step;
        row.loss = loss_mean;
        row.loss_sent = sent_mean;
        row.loss_norm = norm_mean;
        row.grad_norm = std::sqrt(grad_sq);
        row.wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        out.log.push_back(row);
    }
    if (cfg.val_every > 0) {
        const double v = val_loss();
        if (v < best_val) {
            best_val = v;
            best_lora = lora;
        }
        out.lora = best_lora;
    }
    return out;
}

// Mean sentence loss of an encoder over samples under fresh patterns; used
// to compare trained adapters against the identity (step-0) encoder.
template <class Real>
double mean_test_loss_sent(const std::vector<Sample>& samples, const Transformer<Real>& base,
                           const LoraSet<std::type_identity_t<Real>>* lora,
                           const SentenceEmbedder<Real>& embedder,
                           const Vocabulary& vocab, const SfmaConfig& cfg, uint64_t seed) {
    if (samples.empty()) throw InputError("mean_test_loss_sent: no samples");
    Rng rng(stage_seed(seed, "test-loss"));
    std::vector<uint64_t> seeds(samples.size());
    for (auto& s : seeds) s = rng.next_u64();

    std::vector<double> losses(samples.size());
#pragma omp parallel for schedule(dynamic)
    for (size_t i = 0; i < samples.size(); ++i) {
        Rng prng(seeds[i]);
        const auto pattern =
            sample_loss_pattern(cfg.channel.packets, cfg.channel.packets_lost, prng);
        ad::Graph<Real> g;
        auto leaves = make_leaves(g, base, lora, TrainMode::kFrozen);
        auto sample = build_sfma_sample(g, leaves, embedder, vocab, samples[i].seq, pattern, cfg);
        losses[i] = static_cast<double>(sample.l_sent.scalar());
    }
    double total = 0.0;
    for (double v : losses) total += v;
    return total / samples.size();
}

}  // namespace tokcode
