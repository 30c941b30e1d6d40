#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "dialret/bm25.hpp"
#include "dialret/corpus.hpp"
#include "dialret/dense.hpp"
#include "dialret/models.hpp"

namespace dialret {

struct RetrievalHit {
    int64_t pair_id;
    std::string response;
    double score;
};

struct RetrievalResult {
    std::string mode;  // e.g. "sparse-qc", "dense-qs", "ivf-qr", "dqs-exact"
    std::vector<RetrievalHit> hits;  // scores non-increasing, pair ids unique
    double elapsed_ms = 0.0;
};

/// Pair id -> response lookup over the candidate database.
class CandidateCatalog {
public:
    explicit CandidateCatalog(const std::vector<DialoguePair>& database);
    const std::string& response_of(int64_t pair_id) const;
    size_t size() const { return responses_.size(); }

private:
    std::unordered_map<int64_t, std::string> responses_;
};

RetrievalResult retrieve_sparse(const InvertedIndex& index, const CandidateCatalog& catalog,
                                const std::vector<std::string>& query_tokens, int k);

RetrievalResult retrieve_dense_exact(const EmbeddingShard& shard,
                                     const CandidateCatalog& catalog, const Embedding& query,
                                     int k, const std::string& mode_tag,
                                     SearchStats* stats = nullptr);

RetrievalResult retrieve_dense_ivf(const IvfIndex& index, const CandidateCatalog& catalog,
                                   const Embedding& query, int k, int nprobe,
                                   const std::string& mode_tag, SearchStats* stats = nullptr);

/// The two aligned indexes of decoupled query-session matching plus the
/// session weighting factor lambda.
struct DqsIndexes {
    const EmbeddingShard* context_shard = nullptr;
    const EmbeddingShard* response_shard = nullptr;
    // Optional coarse indexes for fused-mode probing.
    const IvfIndex* context_ivf = nullptr;
    const IvfIndex* response_ivf = nullptr;
    double lambda = 1.0;
    int nprobe = 0;  // 0 = exact per-side top-K' in fused mode

    void check_aligned() const;
};

/// Scores every pair: sim(q, context) + lambda * sim(q, response).
RetrievalResult retrieve_dqs_exact(const DqsIndexes& indexes, const CandidateCatalog& catalog,
                                   const Embedding& query, int k,
                                   SearchStats* stats = nullptr);

/// Takes the union of per-side top-K', completes the missing side scores from
/// the shards, re-ranks by the weighted sum and returns the top-K.
RetrievalResult retrieve_dqs_fused(const DqsIndexes& indexes, const CandidateCatalog& catalog,
                                   const Embedding& query, int k, int k_prime,
                                   SearchStats* stats = nullptr);

void save_results_jsonl(const std::vector<RetrievalResult>& results,
                        const std::vector<int64_t>& query_ids, const std::string& path);
struct LoadedResults {
    std::vector<int64_t> query_ids;
    std::vector<RetrievalResult> results;
};
LoadedResults load_results_jsonl(const std::string& path);

}  // namespace dialret
