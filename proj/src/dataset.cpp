#include "tokcode/dataset.hpp"

#include <set>

#include <json.hpp>

namespace tokcode {

using nlohmann::json;

Dataset make_dataset(const PromptGrammar& grammar, const Vocabulary& vocab,
                     const DatasetConfig& cfg) {
    grammar.validate();
    if (cfg.n_train < 1 || cfg.n_test < 1) {
        throw ConfigError("make_dataset: sample counts must be >= 1");
    }
    const int need = cfg.n_train + cfg.n_test;

    Dataset ds;
    ds.vocab = vocab;
    ds.grammar = grammar;
    ds.config = cfg;

    Rng rng(stage_seed(cfg.seed, "dataset"));
    std::set<std::vector<TokenId>> seen;
    std::vector<Sample> all;
    all.reserve(need);

    const long max_attempts = 200L * need + 1000;
    long attempts = 0;
    while (static_cast<int>(all.size()) < need) {
        if (++attempts > max_attempts) {
            throw ConfigError(
                "make_dataset: could not produce " + std::to_string(need) +
                " distinct sequences after " + std::to_string(attempts - 1) +
                " attempts; the grammar's output space is too small for the "
                "requested counts");
        }
        Sample s = sample_prompt(grammar, rng, cfg.n_min, cfg.n_max);
        if (seen.insert(s.seq.ids).second) {
            all.push_back(std::move(s));
        }
    }
    ds.train.assign(all.begin(), all.begin() + cfg.n_train);
    ds.test.assign(all.begin() + cfg.n_train, all.end());
    return ds;
}

namespace {

json vocab_to_json(const Vocabulary& v) {
    return json{{"size", v.size},
                {"pad_id", v.pad_id},
                {"eos_id", v.eos_id},
                {"sentinel_ids", v.sentinel_ids},
                {"seed", v.seed}};
}

Vocabulary vocab_from_json(const json& j) {
    Vocabulary v;
    v.size = j.at("size").get<int>();
    v.pad_id = j.at("pad_id").get<TokenId>();
    v.eos_id = j.at("eos_id").get<TokenId>();
    v.sentinel_ids = j.at("sentinel_ids").get<std::vector<TokenId>>();
    v.seed = j.at("seed").get<uint64_t>();
    return v;
}

json grammar_to_json(const PromptGrammar& g) {
    json pools = json::object();
    for (const auto& [name, pool] : g.slot_pools) pools[name] = pool;
    json templates = json::array();
    for (const auto& t : g.templates) {
        json fixed = json::object();
        for (const auto& [slot, id] : t.fixed_choices) fixed[slot] = id;
        templates.push_back(json{{"slots", t.slots}, {"fixed_choices", fixed}});
    }
    return json{{"slot_names", g.slot_names},
                {"slot_pools", pools},
                {"filler_pool", g.filler_pool},
                {"templates", templates},
                {"seed", g.seed}};
}

PromptGrammar grammar_from_json(const json& j) {
    PromptGrammar g;
    g.slot_names = j.at("slot_names").get<std::vector<std::string>>();
    for (const auto& [name, pool] : j.at("slot_pools").items()) {
        g.slot_pools[name] = pool.get<std::vector<TokenId>>();
    }
    g.filler_pool = j.at("filler_pool").get<std::vector<TokenId>>();
    for (const auto& t : j.at("templates")) {
        Template tpl;
        tpl.slots = t.at("slots").get<std::vector<std::string>>();
        for (const auto& [slot, id] : t.at("fixed_choices").items()) {
            tpl.fixed_choices[slot] = id.get<TokenId>();
        }
        g.templates.push_back(std::move(tpl));
    }
    g.seed = j.at("seed").get<uint64_t>();
    return g;
}

json samples_to_json(const std::vector<Sample>& samples) {
    json arr = json::array();
    for (const auto& s : samples) {
        json slots = json::object();
        for (const auto& [name, id] : s.slots) slots[name] = id;
        arr.push_back(json{{"ids", s.seq.ids}, {"slots", slots}});
    }
    return arr;
}

std::vector<Sample> samples_from_json(const json& arr) {
    std::vector<Sample> out;
    for (const auto& e : arr) {
        Sample s;
        s.seq.ids = e.at("ids").get<std::vector<TokenId>>();
        for (const auto& [name, id] : e.at("slots").items()) {
            s.slots[name] = id.get<TokenId>();
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

std::string dataset_to_json(const Dataset& ds) {
    json j{{"vocabulary", vocab_to_json(ds.vocab)},
           {"grammar", grammar_to_json(ds.grammar)},
           {"generation",
            json{{"n_train", ds.config.n_train},
                 {"n_test", ds.config.n_test},
                 {"n_min", ds.config.n_min},
                 {"n_max", ds.config.n_max},
                 {"seed", ds.config.seed}}},
           {"train", samples_to_json(ds.train)},
           {"test", samples_to_json(ds.test)}};
    return j.dump(1);
}

Dataset dataset_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("dataset: malformed JSON: ") + e.what());
    }
    try {
        Dataset ds;
        ds.vocab = vocab_from_json(j.at("vocabulary"));
        ds.grammar = grammar_from_json(j.at("grammar"));
        const auto& gen = j.at("generation");
        ds.config.n_train = gen.at("n_train").get<int>();
        ds.config.n_test = gen.at("n_test").get<int>();
        ds.config.n_min = gen.at("n_min").get<int>();
        ds.config.n_max = gen.at("n_max").get<int>();
        ds.config.seed = gen.at("seed").get<uint64_t>();
        ds.train = samples_from_json(j.at("train"));
        ds.test = samples_from_json(j.at("test"));
        return ds;
    } catch (const json::exception& e) {
        throw IoError(std::string("dataset: missing or invalid field: ") + e.what());
    }
}

void save_dataset(const Dataset& ds, const std::string& path) {
    write_file(path, dataset_to_json(ds));
}

Dataset load_dataset(const std::string& path) {
    return dataset_from_json(read_file(path));
}

}  // namespace tokcode
