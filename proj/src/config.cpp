#include "dialret/config.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

namespace dialret {

using nlohmann::json;

namespace {

template <class T>
void maybe_set(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) {
        out = obj.at(key).get<T>();
    }
}

}  // namespace

RunConfig RunConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    DIALRET_REQUIRE(in.good(), "cannot open config file: ", path);
    json obj;
    try {
        in >> obj;
    } catch (const json::exception& e) {
        fail("malformed config ", path, ": ", e.what());
    }
    RunConfig cfg;
    maybe_set(obj, "corpus", cfg.corpus);
    maybe_set(obj, "workdir", cfg.workdir);
    maybe_set(obj, "mc_size", cfg.mc_size);
    maybe_set(obj, "sc_size", cfg.sc_size);
    maybe_set(obj, "train_ratio", cfg.train_ratio);
    maybe_set(obj, "max_contexts", cfg.max_contexts);
    maybe_set(obj, "min_freq", cfg.min_freq);
    if (obj.contains("model")) {
        const json& m = obj.at("model");
        maybe_set(m, "embed_dim", cfg.model.embed_dim);
        maybe_set(m, "output_dim", cfg.model.output_dim);
        maybe_set(m, "head_dim", cfg.model.head_dim);
        maybe_set(m, "max_joint_len", cfg.model.max_joint_len);
        maybe_set(m, "share_encoders", cfg.model.share_encoders);
    }
    if (obj.contains("train")) {
        const json& t = obj.at("train");
        maybe_set(t, "batch_size", cfg.train.batch_size);
        maybe_set(t, "epochs", cfg.train.epochs);
        maybe_set(t, "lr", cfg.train.lr);
        maybe_set(t, "warmup_steps", cfg.train.warmup_steps);
        maybe_set(t, "temperature", cfg.train.temperature);
        maybe_set(t, "distill_rate", cfg.train.distill_rate);
        maybe_set(t, "hard_weight", cfg.train.hard_weight);
        maybe_set(t, "dqs_context_weight", cfg.train.dqs_context_weight);
        maybe_set(t, "dqs_response_weight", cfg.train.dqs_response_weight);
    }
    if (obj.contains("index")) {
        const json& i = obj.at("index");
        maybe_set(i, "k1", cfg.bm25.k1);
        maybe_set(i, "b", cfg.bm25.b);
        maybe_set(i, "ivf_k", cfg.ivf_k);
        maybe_set(i, "nprobe", cfg.nprobe);
        maybe_set(i, "kmeans_iters", cfg.kmeans_iters);
    }
    maybe_set(obj, "lambda", cfg.lambda);
    maybe_set(obj, "fusion_multiplier", cfg.fusion_multiplier);
    maybe_set(obj, "eval_ks", cfg.eval_ks);
    maybe_set(obj, "seed", cfg.seed);
    return cfg;
}

}  // namespace dialret
