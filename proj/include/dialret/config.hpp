#pragma once

#include <string>
#include <vector>

#include "dialret/bm25.hpp"
#include "dialret/models.hpp"
#include "dialret/training.hpp"

namespace dialret {

/// Shared configuration for the pipeline commands. A JSON file loaded via
/// --config fills these fields; any same-named command-line flag overrides
/// the file value.
struct RunConfig {
    std::string corpus;
    std::string workdir = ".";

    // Dataset construction.
    int mc_size = 0;
    int sc_size = 0;
    double train_ratio = 0.5;
    int max_contexts = 50;
    int min_freq = 2;

    ModelConfig model;
    TrainConfig train;

    // Index parameters.
    Bm25Params bm25;
    int ivf_k = 0;        // 0 = ceil(sqrt(n))
    int nprobe = 0;       // 0 = ceil(sqrt(k))
    int kmeans_iters = 10;

    // Retrieval / evaluation.
    double lambda = 1.0;
    int fusion_multiplier = 10;  // fused DQS K' = multiplier * K
    std::vector<int> eval_ks = {1, 20, 100, 500};

    uint64_t seed = 0;

    static RunConfig from_json_file(const std::string& path);
};

}  // namespace dialret
