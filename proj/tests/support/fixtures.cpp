#include "fixtures.hpp"

#include <algorithm>
#include <random>

namespace dialret::testsupport {

namespace {

std::string join(const std::vector<std::string>& words) {
    std::string out;
    for (size_t i = 0; i < words.size(); ++i) {
        if (i > 0) out += ' ';
        out += words[i];
    }
    return out;
}

/// count distinct words from the pool, order randomized.
std::vector<std::string> sample_words(const std::vector<std::string>& pool, int count,
                                      Rng& rng) {
    std::vector<size_t> order(pool.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::string> out;
    for (int i = 0; i < count; ++i) {
        out.push_back(pool[order[static_cast<size_t>(i) % pool.size()]]);
    }
    return out;
}

std::vector<std::string> topic_pool(const std::string& prefix, int topic, int size) {
    std::vector<std::string> pool;
    for (int j = 0; j < size; ++j) {
        pool.push_back(prefix + std::to_string(topic) + "w" + std::to_string(j));
    }
    return pool;
}

}  // namespace

std::vector<DialoguePair> topical_corpus(const TopicalCorpusSpec& spec) {
    Rng rng(spec.seed);
    std::vector<DialoguePair> pairs;
    int64_t next_id = 1;

    auto add_group = [&](int topic, int contexts, const std::string& response) {
        auto pool = topic_pool("t", topic, 12);
        for (int c = 0; c < contexts; ++c) {
            DialoguePair pair;
            pair.id = next_id++;
            auto words = sample_words(pool, 7, rng);
            // Occasionally split into two utterances.
            if (std::uniform_int_distribution<int>(0, 2)(rng) == 0) {
                pair.context = {join({words.begin(), words.begin() + 3}),
                                join({words.begin() + 3, words.end()})};
            } else {
                pair.context = {join(words)};
            }
            pair.response = response;
            pairs.push_back(std::move(pair));
        }
    };

    int topic = 0;
    std::uniform_int_distribution<int> n_ctx(spec.min_contexts, spec.max_contexts);
    for (int g = 0; g < spec.multi_groups; ++g, ++topic) {
        add_group(topic, n_ctx(rng),
                  "reply r" + std::to_string(topic) + " about topic t" +
                      std::to_string(topic) + " thanks");
    }
    for (int g = 0; g < spec.mega_groups; ++g, ++topic) {
        add_group(topic, spec.mega_contexts,
                  "huge reply r" + std::to_string(topic) + " topic t" +
                      std::to_string(topic));
    }
    for (int s = 0; s < spec.singles; ++s, ++topic) {
        add_group(topic, 1,
                  "single s" + std::to_string(s) + " unique reply indeed");
    }
    return pairs;
}

std::vector<DialoguePair> contextual_corpus(const ContextualCorpusSpec& spec) {
    Rng rng(spec.seed);
    std::vector<DialoguePair> pairs;
    int64_t next_id = 1;
    for (int t = 0; t < spec.topics; ++t) {
        auto pool = topic_pool("c", t, spec.context_pool);
        // Response shares no tokens with any context: generic words plus one
        // topic-unique marker drawn from a disjoint prefix.
        std::string response =
            "ok sure r" + std::to_string(t) + "x thanks a lot";
        for (int c = 0; c < spec.contexts_per_topic; ++c) {
            DialoguePair pair;
            pair.id = next_id++;
            pair.context = {join(sample_words(pool, spec.context_len, rng))};
            pair.response = response;
            pairs.push_back(std::move(pair));
        }
    }
    return pairs;
}

std::vector<DialoguePair> ambiguous_corpus(const AmbiguousCorpusSpec& spec) {
    Rng rng(spec.seed);
    std::vector<DialoguePair> pairs;
    int64_t next_id = 1;
    for (int t = 0; t < spec.topics; ++t) {
        auto pool = topic_pool("a", t, spec.context_pool);
        for (int twin = 0; twin < 2; ++twin) {
            const char* marker = twin == 0 ? "alphamark" : "betamark";
            std::string response = twin == 0
                                       ? "fine fa" + std::to_string(t) + " reply one two"
                                       : "fine fb" + std::to_string(t) + " reply six seven";
            for (int c = 0; c < spec.contexts_per_group; ++c) {
                DialoguePair pair;
                pair.id = next_id++;
                auto words = sample_words(pool, spec.context_len - 1, rng);
                words.insert(words.begin() + static_cast<long>(words.size() / 2), marker);
                pair.context = {join(words)};
                pair.response = response;
                pairs.push_back(std::move(pair));
            }
        }
    }
    return pairs;
}

std::vector<DialoguePair> distractor_pairs(int count, int64_t id_start, uint64_t seed) {
    Rng rng(seed);
    std::vector<std::string> pool;
    for (int j = 0; j < 400; ++j) {
        pool.push_back("dw" + std::to_string(j));
    }
    std::vector<DialoguePair> pairs;
    for (int i = 0; i < count; ++i) {
        DialoguePair pair;
        pair.id = id_start + i;
        pair.context = {join(sample_words(pool, 8, rng))};
        pair.response = "extra reply dnum" + std::to_string(i) + " here okay";
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

Matf clustered_vectors(int n, int dim, int blobs, uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matd centers(blobs, dim);
    for (int b = 0; b < blobs; ++b) {
        for (int j = 0; j < dim; ++j) {
            centers(b, j) = normal(rng);
        }
        centers.row(b) /= centers.row(b).norm();
    }
    std::normal_distribution<double> noise(0.0, 0.08);
    std::uniform_int_distribution<int> pick(0, blobs - 1);
    Matf out(n, dim);
    for (int i = 0; i < n; ++i) {
        int b = pick(rng);
        for (int j = 0; j < dim; ++j) {
            out(i, j) = static_cast<float>(centers(b, j) + noise(rng));
        }
    }
    return out;
}

}  // namespace dialret::testsupport
