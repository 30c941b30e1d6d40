#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "dialret/bm25.hpp"  // ScoredDoc
#include "dialret/linalg.hpp"
#include "dialret/models.hpp"

namespace dialret {

/// Scan accounting for latency/efficiency assertions.
struct SearchStats {
    size_t vectors_scanned = 0;
};

/// Precomputed candidate embeddings: 32-bit rows aligned with doc ids.
/// Scoring always accumulates in double.
struct EmbeddingShard {
    std::vector<int64_t> doc_ids;
    Matf vectors;  // n x d

    int64_t size() const { return static_cast<int64_t>(doc_ids.size()); }
    int dim() const { return static_cast<int>(vectors.cols()); }

    /// Row index of a doc id; error if absent.
    Eigen::Index row_of(int64_t doc_id) const;

    void save(const std::string& path) const;  // magic "EMB1"
    static EmbeddingShard load(const std::string& path);

private:
    mutable std::unordered_map<int64_t, Eigen::Index> id_to_row_;  // built lazily
};

/// Encodes every document with a frozen tower, in input order. Encoder
/// failures are rethrown with the offending doc id attached.
EmbeddingShard precompute(const TowerEncoder& encoder,
                          const std::vector<std::pair<int64_t, std::vector<int>>>& docs);

/// Exact top-K by descending dot product; ties broken by ascending doc id.
std::vector<ScoredDoc> exact_topk(const EmbeddingShard& shard, const Embedding& query,
                                  int k, SearchStats* stats = nullptr);

struct KmeansResult {
    Matd centroids;  // k x d
    double inertia;  // sum of squared distances to the assigned centroid
};

/// Seeded k-means++ initialization followed by Lloyd iterations. Empty
/// clusters are reseeded to the point farthest from its current centroid.
KmeansResult kmeans(const Matd& vectors, int k, int iters, uint64_t seed);

/// Inverted-file index: a k-means coarse quantizer whose lists are probed by
/// query/centroid dot product, matching the retrieval similarity.
class IvfIndex {
public:
    /// k defaults to ceil(sqrt(n)) when 0.
    static IvfIndex build(const EmbeddingShard& shard, int k = 0, uint64_t seed = 0,
                          int kmeans_iters = 10);

    std::vector<ScoredDoc> search(const Embedding& query, int k_results, int nprobe,
                                  SearchStats* stats = nullptr) const;

    int num_lists() const { return static_cast<int>(centroids_.rows()); }
    int dim() const { return static_cast<int>(centroids_.cols()); }
    int64_t size() const;
    int default_nprobe() const;  // ceil(sqrt(num_lists))

    void save(const std::string& path) const;  // magic "IVF1"
    static IvfIndex load(const std::string& path);

private:
    Matf centroids_;                             // k x d
    std::vector<std::vector<int64_t>> list_ids_; // per-centroid doc ids
    std::vector<Matf> list_vectors_;             // per-centroid row blocks
};

}  // namespace dialret
