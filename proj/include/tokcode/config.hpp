#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "tokcode/dataset.hpp"
#include "tokcode/embedder.hpp"
#include "tokcode/eval.hpp"
#include "tokcode/pretrain.hpp"
#include "tokcode/sfma.hpp"

namespace tokcode {

// One config file drives the whole pipeline. Every block validates before
// any work starts; stage seeds derive from the master seed unless a block
// pins its own.
struct RunConfig {
    uint64_t master_seed = 1;
    std::string out_dir = "runs/toy";
    int threads = 0;  // 0 keeps the OpenMP default

    // corpus
    int vocab_size = 256;
    DatasetConfig corpus;

    // model
    TransformerConfig model;
    int lora_rank = 8;
    std::vector<std::string> lora_targets;  // empty selects decoder q/v
    PretrainConfig pretrain;

    // channel
    ChannelConfig channel{5, 2};

    // sfma
    SfmaConfig sfma;

    // embedders
    EmbedderConfig embedder;
    EmbedderConfig heldout;

    // eval
    EvalConfig eval;
    bool eval_svg = true;

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    void validate() const;
    uint64_t config_hash() const { return fnv1a64(to_json().dump()); }
};

RunConfig default_run_config();
RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides = {});

// Applies "path.to.field=value" onto a JSON document.
void apply_override(nlohmann::json& j, const std::string& spec);

// Manifest written beside every command's outputs.
nlohmann::json make_manifest(const std::string& command, const RunConfig& cfg,
                             const std::vector<std::string>& input_paths,
                             const std::vector<std::string>& output_paths);

}  // namespace tokcode
