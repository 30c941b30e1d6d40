#include "dialret/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dialret/linalg.hpp"

namespace dialret {

using nlohmann::json;

namespace {

std::string normalize_response(const std::string& text) {
    auto tokens = tokenize(text);
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i > 0) out += ' ';
        out += tokens[i];
    }
    return out;
}

}  // namespace

std::map<int, double> coverage_at_k(const std::vector<RetrievalResult>& results,
                                    const std::vector<std::string>& gold_responses,
                                    const std::vector<int>& ks, bool strict) {
    DIALRET_REQUIRE(!ks.empty(), "coverage needs a non-empty K list");
    DIALRET_REQUIRE(results.size() == gold_responses.size(),
                    "results/gold count mismatch: ", results.size(), " vs ",
                    gold_responses.size());
    std::map<int, double> coverage;
    for (int k : ks) {
        DIALRET_REQUIRE(k >= 1, "coverage K must be >= 1, got ", k);
        coverage[k] = 0.0;
    }
    if (results.empty()) return coverage;
    for (size_t q = 0; q < results.size(); ++q) {
        std::string gold = strict ? gold_responses[q] : normalize_response(gold_responses[q]);
        // First rank (1-based) at which the gold response appears, if any.
        int hit_rank = -1;
        const auto& hits = results[q].hits;
        for (size_t r = 0; r < hits.size(); ++r) {
            std::string response =
                strict ? hits[r].response : normalize_response(hits[r].response);
            if (response == gold) {
                hit_rank = static_cast<int>(r) + 1;
                break;
            }
        }
        if (hit_rank < 0) continue;
        for (int k : ks) {
            if (hit_rank <= k) coverage[k] += 1.0;
        }
    }
    for (auto& [k, value] : coverage) {
        value /= static_cast<double>(results.size());
    }
    return coverage;
}

// ---------------------------------------------------------------------------
// Bigram LM

ConditionalLm ConditionalLm::build(const std::vector<std::vector<int>>& token_streams,
                                   int vocab_size, double add_k) {
    DIALRET_REQUIRE(vocab_size >= 1, "LM vocab size must be >= 1, got ", vocab_size);
    DIALRET_REQUIRE(add_k > 0.0, "add-k smoothing constant must be positive, got ", add_k);
    ConditionalLm lm;
    lm.vocab_size_ = vocab_size;
    lm.add_k_ = add_k;
    for (const auto& stream : token_streams) {
        for (size_t i = 0; i + 1 < stream.size(); ++i) {
            DIALRET_REQUIRE(stream[i] >= 0 && stream[i] < vocab_size &&
                                stream[i + 1] >= 0 && stream[i + 1] < vocab_size,
                            "LM token id outside vocabulary");
            ++lm.bigram_counts_[{stream[i], stream[i + 1]}];
            ++lm.history_counts_[stream[i]];
        }
    }
    return lm;
}

double ConditionalLm::prob(int prev, int next) const {
    DIALRET_REQUIRE(prev >= 0 && prev < vocab_size_ && next >= 0 && next < vocab_size_,
                    "LM token id outside vocabulary");
    auto big = bigram_counts_.find({prev, next});
    double big_count = big == bigram_counts_.end() ? 0.0 : static_cast<double>(big->second);
    auto hist = history_counts_.find(prev);
    double hist_count = hist == history_counts_.end() ? 0.0 : static_cast<double>(hist->second);
    return (big_count + add_k_) / (hist_count + add_k_ * static_cast<double>(vocab_size_));
}

double ConditionalLm::perplexity(const std::vector<int>& response_tokens,
                                 int query_last_token) const {
    DIALRET_REQUIRE(!response_tokens.empty(), "perplexity of an empty response");
    double log_sum = 0.0;
    int prev = query_last_token;
    for (int token : response_tokens) {
        log_sum += std::log(prob(prev, token));
        prev = token;
    }
    return std::exp(-log_sum / static_cast<double>(response_tokens.size()));
}

PerplexityResult proxy_perplexity_at_k(const ConditionalLm& lm,
                                       const std::vector<int>& query_tokens,
                                       const std::vector<std::vector<int>>& topk_responses) {
    DIALRET_REQUIRE(!query_tokens.empty(), "perplexity needs a non-empty query");
    PerplexityResult result;
    double total = 0.0;
    int counted = 0;
    for (const auto& response : topk_responses) {
        if (response.empty()) {
            ++result.skipped_empty;
            continue;
        }
        total += lm.perplexity(response, query_tokens.back());
        ++counted;
    }
    result.mean_ppl = counted > 0 ? total / counted : 0.0;
    return result;
}

double proxy_relevance_at_k(const CrossScorer& teacher, const std::vector<int>& query_tokens,
                            const std::vector<std::vector<int>>& topk_responses) {
    if (topk_responses.empty()) return 0.0;
    double total = 0.0;
    for (const auto& response : topk_responses) {
        total += stable_sigmoid(teacher.score(query_tokens, response));
    }
    return total / static_cast<double>(topk_responses.size());
}

// ---------------------------------------------------------------------------
// Latency and sweeps

LatencyStats bench_latency(const std::function<void()>& run_batch, int repeats,
                           int batch_size, int warmup) {
    DIALRET_REQUIRE(repeats >= 1, "bench needs repeats >= 1, got ", repeats);
    using Clock = std::chrono::steady_clock;
    for (int w = 0; w < warmup; ++w) {
        run_batch();
    }
    std::vector<double> times;
    times.reserve(static_cast<size_t>(repeats));
    for (int r = 0; r < repeats; ++r) {
        auto start = Clock::now();
        run_batch();
        times.push_back(
            std::chrono::duration<double, std::milli>(Clock::now() - start).count());
    }
    LatencyStats stats;
    stats.batch_size = batch_size;
    stats.repeats = repeats;
    double mean = 0.0;
    for (double t : times) mean += t;
    mean /= static_cast<double>(times.size());
    double var = 0.0;
    for (double t : times) var += (t - mean) * (t - mean);
    var = times.size() > 1 ? var / static_cast<double>(times.size() - 1) : 0.0;
    stats.mean_ms = mean;
    stats.stddev_ms = std::sqrt(var);
    return stats;
}

std::vector<double> db_size_sweep(
    const std::function<std::function<RetrievalResult(size_t query_index)>(size_t size)>&
        retriever_factory,
    const std::vector<size_t>& sizes, size_t query_count,
    const std::vector<std::string>& gold_responses, int k) {
    DIALRET_REQUIRE(!sizes.empty(), "sweep needs at least one database size");
    for (size_t i = 1; i < sizes.size(); ++i) {
        DIALRET_REQUIRE(sizes[i] > sizes[i - 1],
                        "sweep sizes must be strictly increasing (nested databases), got ",
                        sizes[i - 1], " then ", sizes[i]);
    }
    DIALRET_REQUIRE(gold_responses.size() == query_count, "gold/query count mismatch");
    std::vector<double> coverages;
    for (size_t size : sizes) {
        auto retrieve = retriever_factory(size);
        std::vector<RetrievalResult> results;
        results.reserve(query_count);
        for (size_t q = 0; q < query_count; ++q) {
            results.push_back(retrieve(q));
        }
        coverages.push_back(coverage_at_k(results, gold_responses, {k}).at(k));
    }
    return coverages;
}

// ---------------------------------------------------------------------------
// Report

std::string EvalReport::to_json() const {
    json obj;
    obj["proxy"] = true;  // perplexity/relevance come from proxy scorers
    json cov;
    for (const auto& [k, v] : coverage) cov[std::to_string(k)] = v;
    obj["coverage"] = std::move(cov);
    json ppl_obj;
    for (const auto& [k, v] : ppl) ppl_obj[std::to_string(k)] = v;
    obj["ppl"] = std::move(ppl_obj);
    json rel;
    for (const auto& [k, v] : relevance) rel[std::to_string(k)] = v;
    obj["rel"] = std::move(rel);
    obj["ppl_skipped_empty"] = ppl_skipped_empty;
    if (latency) {
        obj["latency"] = {{"mean_ms", latency->mean_ms},
                          {"stddev_ms", latency->stddev_ms},
                          {"batch_size", latency->batch_size},
                          {"repeats", latency->repeats}};
    } else {
        obj["latency"] = nullptr;
    }
    json echo;
    for (const auto& [key, value] : config_echo) echo[key] = value;
    obj["config"] = std::move(echo);
    return obj.dump(2);
}

std::string EvalReport::pretty() const {
    std::ostringstream out;
    out << "== evaluation report (perplexity/relevance are proxy metrics) ==\n";
    for (const auto& [k, v] : coverage) {
        out << "  coverage@" << k << ": " << v << "\n";
    }
    for (const auto& [k, v] : ppl) {
        out << "  proxy-ppl@" << k << ": " << v << "\n";
    }
    for (const auto& [k, v] : relevance) {
        out << "  proxy-rel@" << k << ": " << v << "\n";
    }
    if (ppl_skipped_empty > 0) {
        out << "  warning: " << ppl_skipped_empty << " empty responses skipped in ppl\n";
    }
    if (latency) {
        out << "  latency: " << latency->mean_ms << " +- " << latency->stddev_ms
            << " ms/batch of " << latency->batch_size << "\n";
    }
    return out.str();
}

}  // namespace dialret
