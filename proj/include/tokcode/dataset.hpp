#pragma once

#include <string>
#include <vector>

#include "tokcode/grammar.hpp"

namespace tokcode {

struct DatasetConfig {
    int n_train = 2000;
    int n_test = 200;
    int n_min = 8;
    int n_max = 24;
    uint64_t seed = 0;
};

struct Dataset {
    Vocabulary vocab;
    PromptGrammar grammar;
    DatasetConfig config;
    std::vector<Sample> train;
    std::vector<Sample> test;
};

// Deterministic for fixed inputs; train and test are disjoint as sequences.
Dataset make_dataset(const PromptGrammar& grammar, const Vocabulary& vocab,
                     const DatasetConfig& cfg);

std::string dataset_to_json(const Dataset& ds);
Dataset dataset_from_json(const std::string& text);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace tokcode
