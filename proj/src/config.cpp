#include "tokcode/config.hpp"

#include <filesystem>
#include <iostream>

namespace tokcode {

using nlohmann::json;

RunConfig default_run_config() {
    RunConfig cfg;
    cfg.master_seed = 1;

    cfg.vocab_size = 256;
    cfg.corpus.n_train = 2000;
    cfg.corpus.n_test = 200;
    cfg.corpus.n_min = 8;
    cfg.corpus.n_max = 24;

    cfg.model.layers = 2;
    cfg.model.d_model = 64;
    cfg.model.heads = 4;
    cfg.model.d_ff = 128;
    cfg.model.max_len = 32;
    cfg.lora_rank = 8;

    cfg.pretrain.steps = 2500;
    cfg.pretrain.batch = 32;
    cfg.pretrain.lr = 3e-3;
    cfg.pretrain.label_smooth = 0.2;

    cfg.channel = ChannelConfig{5, 2};

    cfg.sfma.lambda = 0.1;
    cfg.sfma.channel = cfg.channel;
    cfg.sfma.steps = 1200;
    cfg.sfma.batch = 16;
    cfg.sfma.lr = 1e-3;

    cfg.embedder.variant = EmbedderVariant::kPooled;
    cfg.embedder.dim = 32;
    cfg.embedder.seed = 101;
    cfg.heldout.variant = EmbedderVariant::kPooled;
    cfg.heldout.dim = 48;
    cfg.heldout.seed = 202;

    cfg.eval.rates = {0.2, 0.4, 0.6};
    cfg.eval.trials = 20;
    cfg.eval.packets = cfg.channel.packets;
    return cfg;
}

json RunConfig::to_json() const {
    json methods = json::array();
    for (MethodId m : eval.methods) methods.push_back(method_name(m));
    return json{
        {"master_seed", master_seed},
        {"out_dir", out_dir},
        {"threads", threads},
        {"corpus",
         {{"T", vocab_size},
          {"n_train", corpus.n_train},
          {"n_test", corpus.n_test},
          {"n_min", corpus.n_min},
          {"n_max", corpus.n_max}}},
        {"model",
         {{"layers", model.layers},
          {"d_model", model.d_model},
          {"heads", model.heads},
          {"d_ff", model.d_ff},
          {"max_len", model.max_len},
          {"rank", lora_rank},
          {"targets", lora_targets}}},
        {"pretrain",
         {{"steps", pretrain.steps},
          {"batch", pretrain.batch},
          {"lr", pretrain.lr},
          {"label_smooth", pretrain.label_smooth},
          {"mask_rate_min", pretrain.mask_rate_min},
          {"mask_rate_max", pretrain.mask_rate_max},
          {"clean_prob", pretrain.clean_prob},
          {"span_max", pretrain.span_max},
          {"lr_final_frac", pretrain.lr_final_frac},
          {"repeat_noise", pretrain.repeat_noise},
          {"repeat_slot_bias", pretrain.repeat_slot_bias}}},
        {"channel", {{"packets", channel.packets}, {"packets_lost", channel.packets_lost}}},
        {"sfma",
         {{"lambda", sfma.lambda},
          {"steps", sfma.steps},
          {"batch", sfma.batch},
          {"lr", sfma.lr},
          {"beta1", sfma.beta1},
          {"beta2", sfma.beta2},
          {"temperature", sfma.temperature},
          {"symmetric_eos", sfma.symmetric_eos},
          {"clip_norm", sfma.clip_norm},
          {"weight_decay", sfma.weight_decay},
          {"pattern_draws", sfma.pattern_draws},
          {"val_every", sfma.val_every},
          {"val_samples", sfma.val_samples}}},
        {"embedder",
         {{"variant", embedder_variant_name(embedder.variant)},
          {"dim", embedder.dim},
          {"seed", embedder.seed}}},
        {"heldout",
         {{"variant", embedder_variant_name(heldout.variant)},
          {"dim", heldout.dim},
          {"seed", heldout.seed}}},
        {"eval",
         {{"rates", eval.rates},
          {"trials", eval.trials},
          {"methods", methods},
          {"bootstrap_resamples", eval.bootstrap_resamples},
          {"svg", eval_svg}}},
    };
}

namespace {

// Pulls a field with a config error naming the full path on any mismatch.
template <class T>
void get_field(const json& j, const std::string& path, const std::string& key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: field '" + path + "." + key + "' has the wrong type");
    }
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
    RunConfig cfg = default_run_config();
    if (!j.is_object()) throw ConfigError("config: top level must be an object");

    get_field(j, "", "master_seed", cfg.master_seed);
    get_field(j, "", "out_dir", cfg.out_dir);
    get_field(j, "", "threads", cfg.threads);

    if (j.contains("corpus")) {
        const auto& c = j.at("corpus");
        get_field(c, "corpus", "T", cfg.vocab_size);
        get_field(c, "corpus", "n_train", cfg.corpus.n_train);
        get_field(c, "corpus", "n_test", cfg.corpus.n_test);
        get_field(c, "corpus", "n_min", cfg.corpus.n_min);
        get_field(c, "corpus", "n_max", cfg.corpus.n_max);
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        get_field(m, "model", "layers", cfg.model.layers);
        get_field(m, "model", "d_model", cfg.model.d_model);
        get_field(m, "model", "heads", cfg.model.heads);
        get_field(m, "model", "d_ff", cfg.model.d_ff);
        get_field(m, "model", "max_len", cfg.model.max_len);
        get_field(m, "model", "rank", cfg.lora_rank);
        get_field(m, "model", "targets", cfg.lora_targets);
    }
    if (j.contains("pretrain")) {
        const auto& p = j.at("pretrain");
        get_field(p, "pretrain", "steps", cfg.pretrain.steps);
        get_field(p, "pretrain", "batch", cfg.pretrain.batch);
        get_field(p, "pretrain", "lr", cfg.pretrain.lr);
        get_field(p, "pretrain", "label_smooth", cfg.pretrain.label_smooth);
        get_field(p, "pretrain", "mask_rate_min", cfg.pretrain.mask_rate_min);
        get_field(p, "pretrain", "mask_rate_max", cfg.pretrain.mask_rate_max);
        get_field(p, "pretrain", "clean_prob", cfg.pretrain.clean_prob);
        get_field(p, "pretrain", "span_max", cfg.pretrain.span_max);
        get_field(p, "pretrain", "lr_final_frac", cfg.pretrain.lr_final_frac);
        get_field(p, "pretrain", "repeat_noise", cfg.pretrain.repeat_noise);
        get_field(p, "pretrain", "repeat_slot_bias", cfg.pretrain.repeat_slot_bias);
    }
    if (j.contains("channel")) {
        const auto& c = j.at("channel");
        get_field(c, "channel", "packets", cfg.channel.packets);
        if (c.contains("p")) {
            double p = 0;
            get_field(c, "channel", "p", p);
            const double exact = p * cfg.channel.packets;
            if (std::abs(exact - std::round(exact)) > 1e-9) {
                throw ConfigError("config: channel.p times packets is not an integer");
            }
            cfg.channel.packets_lost = static_cast<int>(std::round(exact));
        }
        get_field(c, "channel", "packets_lost", cfg.channel.packets_lost);
    }
    if (j.contains("sfma")) {
        const auto& s = j.at("sfma");
        get_field(s, "sfma", "lambda", cfg.sfma.lambda);
        get_field(s, "sfma", "steps", cfg.sfma.steps);
        get_field(s, "sfma", "batch", cfg.sfma.batch);
        get_field(s, "sfma", "lr", cfg.sfma.lr);
        get_field(s, "sfma", "beta1", cfg.sfma.beta1);
        get_field(s, "sfma", "beta2", cfg.sfma.beta2);
        get_field(s, "sfma", "temperature", cfg.sfma.temperature);
        get_field(s, "sfma", "symmetric_eos", cfg.sfma.symmetric_eos);
        get_field(s, "sfma", "clip_norm", cfg.sfma.clip_norm);
        get_field(s, "sfma", "weight_decay", cfg.sfma.weight_decay);
        get_field(s, "sfma", "pattern_draws", cfg.sfma.pattern_draws);
        get_field(s, "sfma", "val_every", cfg.sfma.val_every);
        get_field(s, "sfma", "val_samples", cfg.sfma.val_samples);
    }
    if (j.contains("embedder")) {
        const auto& e = j.at("embedder");
        std::string variant = embedder_variant_name(cfg.embedder.variant);
        get_field(e, "embedder", "variant", variant);
        cfg.embedder.variant = embedder_variant_from_name(variant);
        get_field(e, "embedder", "dim", cfg.embedder.dim);
        get_field(e, "embedder", "seed", cfg.embedder.seed);
    }
    if (j.contains("heldout")) {
        const auto& e = j.at("heldout");
        std::string variant = embedder_variant_name(cfg.heldout.variant);
        get_field(e, "heldout", "variant", variant);
        cfg.heldout.variant = embedder_variant_from_name(variant);
        get_field(e, "heldout", "dim", cfg.heldout.dim);
        get_field(e, "heldout", "seed", cfg.heldout.seed);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        get_field(e, "eval", "rates", cfg.eval.rates);
        get_field(e, "eval", "trials", cfg.eval.trials);
        get_field(e, "eval", "bootstrap_resamples", cfg.eval.bootstrap_resamples);
        get_field(e, "eval", "svg", cfg.eval_svg);
        if (e.contains("methods")) {
            std::vector<std::string> names;
            get_field(e, "eval", "methods", names);
            cfg.eval.methods.clear();
            for (const auto& n : names) cfg.eval.methods.push_back(method_from_name(n));
        }
    }
    cfg.validate();
    return cfg;
}

void RunConfig::validate() const {
    if (vocab_size < kMinVocabSize) {
        throw ConfigError("config: corpus.T must be >= " + std::to_string(kMinVocabSize));
    }
    if (corpus.n_train < 1 || corpus.n_test < 1) {
        throw ConfigError("config: corpus.n_train and corpus.n_test must be >= 1");
    }
    if (corpus.n_min < 1 || corpus.n_min > corpus.n_max) {
        throw ConfigError("config: corpus length range invalid");
    }
    TransformerConfig m = model;
    m.vocab_total = vocab_size + 2 + kDefaultSentinels;
    m.validate();
    if (m.max_len < corpus.n_max + 1) {
        throw ConfigError("config: model.max_len must be >= corpus.n_max + 1");
    }
    if (lora_rank < 1) throw ConfigError("config: model.rank must be >= 1");
    pretrain.validate();
    channel.validate();
    SfmaConfig s = sfma;
    s.channel = channel;
    s.validate();
    embedder.validate_dims_only();
    heldout.validate_dims_only();
    EvalConfig e = eval;
    e.packets = channel.packets;
    e.validate();
}

void apply_override(json& j, const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override '" + spec + "' is not of the form path.to.field=value");
    }
    const std::string path = spec.substr(0, eq);
    const std::string value = spec.substr(eq + 1);

    json* node = &j;
    size_t start = 0;
    for (;;) {
        const size_t dot = path.find('.', start);
        const std::string key = path.substr(start, dot - start);
        if (key.empty()) throw ConfigError("override '" + spec + "' has an empty path segment");
        if (dot == std::string::npos) {
            json parsed;
            try {
                parsed = json::parse(value);
            } catch (const json::exception&) {
                parsed = value;  // bare strings stay strings
            }
            (*node)[key] = parsed;
            return;
        }
        node = &(*node)[key];
        start = dot + 1;
    }
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ConfigError("config: malformed JSON in " + path + ": " + e.what());
    }
    for (const auto& o : overrides) apply_override(j, o);
    return RunConfig::from_json(j);
}

json make_manifest(const std::string& command, const RunConfig& cfg,
                   const std::vector<std::string>& input_paths,
                   const std::vector<std::string>& output_paths) {
    json inputs = json::object();
    for (const auto& p : input_paths) inputs[p] = hash_hex(file_hash(p));
    // Outputs are keyed by file name so a rerun into another directory
    // produces an identical manifest.
    json outputs = json::object();
    for (const auto& p : output_paths) {
        outputs[std::filesystem::path(p).filename().string()] = hash_hex(file_hash(p));
    }
    return json{{"command", command},
                {"config", cfg.to_json()},
                {"config_hash", hash_hex(cfg.config_hash())},
                {"master_seed", cfg.master_seed},
                {"stage_seed", stage_seed(cfg.master_seed, command)},
                {"inputs", inputs},
                {"outputs", outputs},
                {"format_version", 1}};
}

}  // namespace tokcode
