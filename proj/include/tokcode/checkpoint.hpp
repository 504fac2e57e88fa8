#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "tokcode/transformer.hpp"

namespace tokcode {

struct ArrayF32 {
    std::string name;
    int rows = 0;
    int cols = 0;
    std::vector<float> data;
};

// On-disk container: magic, JSON header, then raw little-endian float32
// blobs. The content hash covers config and blobs and is verified on load.
struct CheckpointData {
    std::string kind;  // "base" | "lora"
    int format_version = 1;
    nlohmann::json config;
    nlohmann::json metadata;
    std::vector<ArrayF32> arrays;
    uint64_t base_hash = 0;  // lora checkpoints: weight hash of the paired base

    uint64_t content_hash() const;
    const ArrayF32* find(const std::string& name) const;
};

void save_checkpoint(const CheckpointData& ckpt, const std::string& path);
CheckpointData load_checkpoint(const std::string& path);

nlohmann::json transformer_config_to_json(const TransformerConfig& cfg);
TransformerConfig transformer_config_from_json(const nlohmann::json& j);
nlohmann::json vocab_config_to_json(const Vocabulary& v);
Vocabulary vocab_config_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Model conversions. Weights always serialize as float32; a double model
// loaded from disk hashes identically to the float model that was saved.
// ---------------------------------------------------------------------------

template <class Real>
CheckpointData to_checkpoint(const Transformer<Real>& model, const Vocabulary& vocab,
                             nlohmann::json metadata = nlohmann::json::object()) {
    CheckpointData ckpt;
    ckpt.kind = "base";
    ckpt.config = {{"transformer", transformer_config_to_json(model.cfg)},
                   {"vocabulary", vocab_config_to_json(vocab)}};
    ckpt.metadata = std::move(metadata);
    for (const auto& [name, t] : model.weights) {
        ArrayF32 arr;
        arr.name = name;
        arr.rows = t.rows;
        arr.cols = t.cols;
        arr.data.reserve(t.value.size());
        for (Real v : t.value) arr.data.push_back(static_cast<float>(v));
        ckpt.arrays.push_back(std::move(arr));
    }
    return ckpt;
}

template <class Real>
Transformer<Real> transformer_from_checkpoint(const CheckpointData& ckpt) {
    if (ckpt.kind != "base") {
        throw ConfigError("checkpoint: expected a base checkpoint, found kind '" + ckpt.kind +
                          "'");
    }
    Transformer<Real> model;
    model.cfg = transformer_config_from_json(ckpt.config.at("transformer"));
    for (const auto& arr : ckpt.arrays) {
        NamedTensor<Real> t;
        t.rows = arr.rows;
        t.cols = arr.cols;
        t.value.reserve(arr.data.size());
        for (float v : arr.data) t.value.push_back(static_cast<Real>(v));
        model.weights.emplace(arr.name, std::move(t));
    }
    return model;
}

template <class Real>
CheckpointData lora_to_checkpoint(const LoraSet<Real>& lora,
                                  nlohmann::json metadata = nlohmann::json::object()) {
    CheckpointData ckpt;
    ckpt.kind = "lora";
    nlohmann::json targets = nlohmann::json::array();
    for (const auto& ad : lora.adapters) targets.push_back(ad.target);
    ckpt.config = {{"rank", lora.rank}, {"targets", targets}};
    ckpt.metadata = std::move(metadata);
    ckpt.base_hash = lora.base_hash;
    for (const auto& ad : lora.adapters) {
        ArrayF32 a{ad.target + ".a", ad.a.rows, ad.a.cols, {}};
        a.data.reserve(ad.a.value.size());
        for (Real v : ad.a.value) a.data.push_back(static_cast<float>(v));
        ckpt.arrays.push_back(std::move(a));
        ArrayF32 b{ad.target + ".b", ad.b.rows, ad.b.cols, {}};
        b.data.reserve(ad.b.value.size());
        for (Real v : ad.b.value) b.data.push_back(static_cast<float>(v));
        ckpt.arrays.push_back(std::move(b));
    }
    return ckpt;
}

// Refuses to load against a base whose weight hash differs from the one the
// adapters were trained on.
template <class Real>
LoraSet<Real> lora_from_checkpoint(const CheckpointData& ckpt, uint64_t base_weight_hash) {
    if (ckpt.kind != "lora") {
        throw ConfigError("checkpoint: expected a lora checkpoint, found kind '" + ckpt.kind +
                          "'");
    }
    if (ckpt.base_hash != base_weight_hash) {
        throw ConfigError("lora checkpoint: base hash mismatch, expected " +
                          hash_hex(ckpt.base_hash) + ", found " + hash_hex(base_weight_hash));
    }
    LoraSet<Real> lora;
    lora.rank = ckpt.config.at("rank").get<int>();
    lora.base_hash = ckpt.base_hash;
    for (const auto& target : ckpt.config.at("targets")) {
        const std::string name = target.get<std::string>();
        const ArrayF32* a = ckpt.find(name + ".a");
        const ArrayF32* b = ckpt.find(name + ".b");
        if (a == nullptr || b == nullptr) {
            throw IoError("lora checkpoint: missing arrays for target '" + name + "'");
        }
        LoraAdapter<Real> ad;
        ad.target = name;
        ad.rank = lora.rank;
        ad.a.rows = a->rows;
        ad.a.cols = a->cols;
        for (float v : a->data) ad.a.value.push_back(static_cast<Real>(v));
        ad.b.rows = b->rows;
        ad.b.cols = b->cols;
        for (float v : b->data) ad.b.value.push_back(static_cast<Real>(v));
        lora.adapters.push_back(std::move(ad));
    }
    return lora;
}

}  // namespace tokcode
