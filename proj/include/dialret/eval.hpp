#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dialret/corpus.hpp"
#include "dialret/models.hpp"
#include "dialret/retrieval.hpp"

namespace dialret {

/// Coverage@K: fraction of queries whose gold response appears among the
/// top-K retrieved responses. Matching is by normalized string equality
/// (tokenize and re-join) unless strict is set.
std::map<int, double> coverage_at_k(const std::vector<RetrievalResult>& results,
                                    const std::vector<std::string>& gold_responses,
                                    const std::vector<int>& ks, bool strict = false);

/// Bigram language model with add-k smoothing over session token streams.
/// Conditional probabilities per history sum to 1 over the vocabulary.
class ConditionalLm {
public:
    static ConditionalLm build(const std::vector<std::vector<int>>& token_streams,
                               int vocab_size, double add_k = 0.1);

    double prob(int prev, int next) const;

    /// exp(-(1/m) * sum ln p(r_t | prev)); prev for the first token is the
    /// query's final token.
    double perplexity(const std::vector<int>& response_tokens, int query_last_token) const;

    int vocab_size() const { return vocab_size_; }

private:
    std::map<std::pair<int, int>, int64_t> bigram_counts_;
    std::map<int, int64_t> history_counts_;
    int vocab_size_ = 0;
    double add_k_ = 0.1;
};

struct PerplexityResult {
    double mean_ppl = 0.0;
    int skipped_empty = 0;  // empty responses skipped with a warning count
};

/// Mean conditional perplexity of the top-K responses given the query.
PerplexityResult proxy_perplexity_at_k(const ConditionalLm& lm,
                                       const std::vector<int>& query_tokens,
                                       const std::vector<std::vector<int>>& topk_responses);

/// Mean sigmoid(teacher logit) over the top-K responses.
double proxy_relevance_at_k(const CrossScorer& teacher, const std::vector<int>& query_tokens,
                            const std::vector<std::vector<int>>& topk_responses);

struct LatencyStats {
    double mean_ms = 0.0;
    double stddev_ms = 0.0;
    int batch_size = 32;
    int repeats = 0;
};

/// Wall-clock time per batch of queries; warmup runs are excluded.
LatencyStats bench_latency(const std::function<void()>& run_batch, int repeats,
                           int batch_size = 32, int warmup = 1);

/// Coverage@K per database size. The factory receives a size and returns a
/// per-query retrieval function over a database of exactly that size; sizes
/// must be strictly increasing and each database a superset of the previous.
std::vector<double> db_size_sweep(
    const std::function<std::function<RetrievalResult(size_t query_index)>(size_t size)>&
        retriever_factory,
    const std::vector<size_t>& sizes, size_t query_count,
    const std::vector<std::string>& gold_responses, int k);

struct EvalReport {
    std::map<int, double> coverage;
    std::map<int, double> ppl;        // proxy
    std::map<int, double> relevance;  // proxy
    int ppl_skipped_empty = 0;
    std::optional<LatencyStats> latency;
    std::map<std::string, std::string> config_echo;

    /// JSON form; every perplexity/relevance figure is flagged as a proxy.
    std::string to_json() const;
    std::string pretty() const;
};

}  // namespace dialret
