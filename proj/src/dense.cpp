#include "dialret/dense.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dialret/binio.hpp"

namespace dialret {

namespace {

constexpr char kShardMagic[4] = {'E', 'M', 'B', '1'};
constexpr char kIvfMagic[4] = {'I', 'V', 'F', '1'};

void sort_topk(std::vector<ScoredDoc>& scored, int k) {
    auto better = [](const ScoredDoc& a, const ScoredDoc& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.doc_id < b.doc_id;
    };
    size_t keep = std::min(static_cast<size_t>(k), scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<long>(keep), scored.end(),
                      better);
    scored.resize(keep);
}

double dot_f64(const Eigen::Ref<const RowVec<float>>& row, const Embedding& query) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < row.cols(); ++j) {
        acc += static_cast<double>(row(j)) * query(j);
    }
    return acc;
}

}  // namespace

// ---------------------------------------------------------------------------
// EmbeddingShard

Eigen::Index EmbeddingShard::row_of(int64_t doc_id) const {
    if (id_to_row_.empty() && !doc_ids.empty()) {
        id_to_row_.reserve(doc_ids.size());
        for (size_t i = 0; i < doc_ids.size(); ++i) {
            id_to_row_.emplace(doc_ids[i], static_cast<Eigen::Index>(i));
        }
    }
    auto it = id_to_row_.find(doc_id);
    DIALRET_REQUIRE(it != id_to_row_.end(), "doc id ", doc_id, " not in embedding shard");
    return it->second;
}

void EmbeddingShard::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    DIALRET_REQUIRE(out.good(), "cannot open shard file for writing: ", path);
    binio::write_magic(out, kShardMagic);
    binio::write_pod<uint64_t>(out, doc_ids.size());
    binio::write_pod<uint32_t>(out, static_cast<uint32_t>(vectors.cols()));
    for (int64_t id : doc_ids) {
        binio::write_pod<int64_t>(out, id);
    }
    out.write(reinterpret_cast<const char*>(vectors.data()),
              static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(vectors.size())));
    DIALRET_REQUIRE(out.good(), "write failure on shard file: ", path);
}

EmbeddingShard EmbeddingShard::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    DIALRET_REQUIRE(in.good(), "cannot open shard file: ", path);
    binio::check_magic(in, kShardMagic, path);
    uint64_t n = binio::read_pod<uint64_t>(in, "shard size");
    uint32_t d = binio::read_pod<uint32_t>(in, "shard dim");
    EmbeddingShard shard;
    shard.doc_ids.resize(n);
    for (uint64_t i = 0; i < n; ++i) {
        shard.doc_ids[i] = binio::read_pod<int64_t>(in, "shard doc id");
    }
    shard.vectors.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    in.read(reinterpret_cast<char*>(shard.vectors.data()),
            static_cast<std::streamsize>(sizeof(float) * n * d));
    DIALRET_REQUIRE(in.good(), "truncated shard file: ", path);
    return shard;
}

EmbeddingShard precompute(const TowerEncoder& encoder,
                          const std::vector<std::pair<int64_t, std::vector<int>>>& docs) {
    EmbeddingShard shard;
    shard.doc_ids.reserve(docs.size());
    shard.vectors.resize(static_cast<Eigen::Index>(docs.size()),
                         encoder.proj.value.cols());
    Eigen::Index row = 0;
    for (const auto& [doc_id, tokens] : docs) {
        try {
            Embedding e = encoder.encode(tokens);
            shard.vectors.row(row) = e.cast<float>();
        } catch (const Error& e) {
            fail("failed to encode doc ", doc_id, ": ", e.what());
        }
        shard.doc_ids.push_back(doc_id);
        ++row;
    }
    return shard;
}

std::vector<ScoredDoc> exact_topk(const EmbeddingShard& shard, const Embedding& query,
                                  int k, SearchStats* stats) {
    DIALRET_REQUIRE(k >= 1, "top-K requires k >= 1, got ", k);
    DIALRET_REQUIRE(shard.dim() == query.cols(), "query dim ", query.cols(),
                    " does not match shard dim ", shard.dim());
    std::vector<ScoredDoc> scored;
    scored.reserve(static_cast<size_t>(shard.size()));
    for (Eigen::Index i = 0; i < shard.size(); ++i) {
        scored.push_back({shard.doc_ids[static_cast<size_t>(i)],
                          dot_f64(shard.vectors.row(i), query)});
    }
    if (stats) stats->vectors_scanned += static_cast<size_t>(shard.size());
    sort_topk(scored, k);
    return scored;
}

// ---------------------------------------------------------------------------
// k-means

KmeansResult kmeans(const Matd& vectors, int k, int iters, uint64_t seed) {
    const Eigen::Index n = vectors.rows();
    const Eigen::Index d = vectors.cols();
    DIALRET_REQUIRE(k >= 1, "kmeans needs k >= 1, got ", k);
    DIALRET_REQUIRE(static_cast<Eigen::Index>(k) <= n, "kmeans with k = ", k,
                    " but only ", n, " vectors");
    Rng rng(seed);

    // k-means++ seeding: first centroid uniform, the rest proportional to the
    // squared distance to the nearest centroid chosen so far.
    Matd centroids(k, d);
    std::uniform_int_distribution<Eigen::Index> uniform_row(0, n - 1);
    centroids.row(0) = vectors.row(uniform_row(rng));
    Eigen::VectorXd min_dist2 =
        (vectors.rowwise() - centroids.row(0)).rowwise().squaredNorm();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int c = 1; c < k; ++c) {
        double total = min_dist2.sum();
        Eigen::Index chosen = 0;
        if (total > 0.0) {
            double target = unit(rng) * total;
            double cum = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                cum += min_dist2(i);
                if (cum >= target) {
                    chosen = i;
                    break;
                }
            }
        } else {
            chosen = uniform_row(rng);  // all points coincide with a centroid
        }
        centroids.row(c) = vectors.row(chosen);
        min_dist2 = min_dist2.cwiseMin(
            (vectors.rowwise() - centroids.row(c)).rowwise().squaredNorm());
    }

    std::vector<Eigen::Index> assignment(static_cast<size_t>(n), 0);
    double inertia = 0.0;
    for (int iter = 0; iter < iters; ++iter) {
        // Assignment step.
        inertia = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::Index best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                double dist = (vectors.row(i) - centroids.row(c)).squaredNorm();
                if (dist < best_d) {
                    best_d = dist;
                    best = c;
                }
            }
            assignment[static_cast<size_t>(i)] = best;
            inertia += best_d;
        }
        // Update step.
        Matd sums = Matd::Zero(k, d);
        std::vector<int64_t> counts(static_cast<size_t>(k), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(assignment[static_cast<size_t>(i)]) += vectors.row(i);
            ++counts[static_cast<size_t>(assignment[static_cast<size_t>(i)])];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<size_t>(c)] > 0) {
                centroids.row(c) =
                    sums.row(c) / static_cast<double>(counts[static_cast<size_t>(c)]);
            } else {
                // Reseed an empty cluster to the point farthest from its centroid.
                Eigen::Index farthest = 0;
                double far_d = -1.0;
                for (Eigen::Index i = 0; i < n; ++i) {
                    double dist =
                        (vectors.row(i) - centroids.row(assignment[static_cast<size_t>(i)]))
                            .squaredNorm();
                    if (dist > far_d) {
                        far_d = dist;
                        farthest = i;
                    }
                }
                centroids.row(c) = vectors.row(farthest);
            }
        }
    }
    // Final inertia against the updated centroids.
    inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        double best_d = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
            best_d = std::min(best_d, (vectors.row(i) - centroids.row(c)).squaredNorm());
        }
        inertia += best_d;
    }
    return {std::move(centroids), inertia};
}

// ---------------------------------------------------------------------------
// IVF

IvfIndex IvfIndex::build(const EmbeddingShard& shard, int k, uint64_t seed,
                         int kmeans_iters) {
    const Eigen::Index n = shard.size();
    DIALRET_REQUIRE(n > 0, "cannot build an IVF index over an empty shard");
    if (k == 0) {
        k = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
    }
    DIALRET_REQUIRE(static_cast<Eigen::Index>(k) <= n, "IVF k = ", k, " exceeds shard size ",
                    n);
    Matd train = shard.vectors.cast<double>();
    KmeansResult km = kmeans(train, k, kmeans_iters, seed);

    IvfIndex index;
    index.centroids_ = km.centroids.cast<float>();
    index.list_ids_.resize(static_cast<size_t>(k));
    std::vector<std::vector<Eigen::Index>> list_rows(static_cast<size_t>(k));
    // Assignment metric is the dot product, the same similarity the searches
    // rank by.
    Matd cents = index.centroids_.cast<double>();
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::VectorXd sims = cents * train.row(i).transpose();
        Eigen::Index best = 0;
        sims.maxCoeff(&best);
        index.list_ids_[static_cast<size_t>(best)].push_back(
            shard.doc_ids[static_cast<size_t>(i)]);
        list_rows[static_cast<size_t>(best)].push_back(i);
    }
    index.list_vectors_.resize(static_cast<size_t>(k));
    for (int c = 0; c < k; ++c) {
        const auto& rows = list_rows[static_cast<size_t>(c)];
        Matf block(static_cast<Eigen::Index>(rows.size()), shard.dim());
        for (size_t r = 0; r < rows.size(); ++r) {
            block.row(static_cast<Eigen::Index>(r)) = shard.vectors.row(rows[r]);
        }
        index.list_vectors_[static_cast<size_t>(c)] = std::move(block);
    }
    return index;
}

int64_t IvfIndex::size() const {
    int64_t total = 0;
    for (const auto& ids : list_ids_) {
        total += static_cast<int64_t>(ids.size());
    }
    return total;
}

int IvfIndex::default_nprobe() const {
    return static_cast<int>(std::ceil(std::sqrt(static_cast<double>(num_lists()))));
}

std::vector<ScoredDoc> IvfIndex::search(const Embedding& query, int k_results, int nprobe,
                                        SearchStats* stats) const {
    DIALRET_REQUIRE(k_results >= 1, "top-K requires k >= 1, got ", k_results);
    DIALRET_REQUIRE(dim() == query.cols(), "query dim ", query.cols(),
                    " does not match index dim ", dim());
    DIALRET_REQUIRE(nprobe >= 1 && nprobe <= num_lists(), "nprobe ", nprobe,
                    " outside [1, ", num_lists(), "]");
    // Rank lists by centroid dot product; ties by ascending list index.
    std::vector<std::pair<double, int>> ranked;
    ranked.reserve(static_cast<size_t>(num_lists()));
    for (int c = 0; c < num_lists(); ++c) {
        ranked.emplace_back(dot_f64(centroids_.row(c), query), c);
    }
    std::partial_sort(ranked.begin(), ranked.begin() + nprobe, ranked.end(),
                      [](const auto& a, const auto& b) {
                          if (a.first != b.first) return a.first > b.first;
                          return a.second < b.second;
                      });

    std::vector<ScoredDoc> scored;
    for (int p = 0; p < nprobe; ++p) {
        int c = ranked[static_cast<size_t>(p)].second;
        const auto& ids = list_ids_[static_cast<size_t>(c)];
        const Matf& block = list_vectors_[static_cast<size_t>(c)];
        for (Eigen::Index i = 0; i < block.rows(); ++i) {
            scored.push_back({ids[static_cast<size_t>(i)], dot_f64(block.row(i), query)});
        }
        if (stats) stats->vectors_scanned += static_cast<size_t>(block.rows());
    }
    sort_topk(scored, k_results);
    return scored;
}

void IvfIndex::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    DIALRET_REQUIRE(out.good(), "cannot open IVF file for writing: ", path);
    binio::write_magic(out, kIvfMagic);
    binio::write_pod<uint32_t>(out, static_cast<uint32_t>(num_lists()));
    binio::write_pod<uint32_t>(out, static_cast<uint32_t>(dim()));
    out.write(reinterpret_cast<const char*>(centroids_.data()),
              static_cast<std::streamsize>(sizeof(float) *
                                           static_cast<size_t>(centroids_.size())));
    for (int c = 0; c < num_lists(); ++c) {
        const auto& ids = list_ids_[static_cast<size_t>(c)];
        const Matf& block = list_vectors_[static_cast<size_t>(c)];
        binio::write_pod<uint64_t>(out, ids.size());
        for (size_t i = 0; i < ids.size(); ++i) {
            binio::write_pod<int64_t>(out, ids[i]);
            out.write(reinterpret_cast<const char*>(block.row(static_cast<Eigen::Index>(i)).data()),
                      static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(dim())));
        }
    }
    DIALRET_REQUIRE(out.good(), "write failure on IVF file: ", path);
}

IvfIndex IvfIndex::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    DIALRET_REQUIRE(in.good(), "cannot open IVF file: ", path);
    binio::check_magic(in, kIvfMagic, path);
    uint32_t k = binio::read_pod<uint32_t>(in, "IVF k");
    uint32_t d = binio::read_pod<uint32_t>(in, "IVF dim");
    IvfIndex index;
    index.centroids_.resize(k, d);
    in.read(reinterpret_cast<char*>(index.centroids_.data()),
            static_cast<std::streamsize>(sizeof(float) * k * d));
    DIALRET_REQUIRE(in.good(), "truncated IVF file: ", path);
    index.list_ids_.resize(k);
    index.list_vectors_.resize(k);
    for (uint32_t c = 0; c < k; ++c) {
        uint64_t count = binio::read_pod<uint64_t>(in, "IVF list size");
        auto& ids = index.list_ids_[c];
        ids.resize(count);
        Matf block(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(d));
        for (uint64_t i = 0; i < count; ++i) {
            ids[i] = binio::read_pod<int64_t>(in, "IVF doc id");
            in.read(reinterpret_cast<char*>(block.row(static_cast<Eigen::Index>(i)).data()),
                    static_cast<std::streamsize>(sizeof(float) * d));
            DIALRET_REQUIRE(in.good(), "truncated IVF file: ", path);
        }
        index.list_vectors_[c] = std::move(block);
    }
    return index;
}

}  // namespace dialret
