#include "dialret/retrieval.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>

#include <nlohmann/json.hpp>

namespace dialret {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

RetrievalResult to_result(const std::vector<ScoredDoc>& scored,
                          const CandidateCatalog& catalog, const std::string& mode_tag,
                          double elapsed_ms) {
    RetrievalResult result;
    result.mode = mode_tag;
    result.elapsed_ms = elapsed_ms;
    result.hits.reserve(scored.size());
    for (const ScoredDoc& doc : scored) {
        result.hits.push_back({doc.doc_id, catalog.response_of(doc.doc_id), doc.score});
    }
    return result;
}

}  // namespace

CandidateCatalog::CandidateCatalog(const std::vector<DialoguePair>& database) {
    responses_.reserve(database.size());
    for (const auto& pair : database) {
        DIALRET_REQUIRE(responses_.emplace(pair.id, pair.response).second,
                        "duplicate pair id ", pair.id, " in candidate database");
    }
}

const std::string& CandidateCatalog::response_of(int64_t pair_id) const {
    auto it = responses_.find(pair_id);
    DIALRET_REQUIRE(it != responses_.end(), "pair id ", pair_id,
                    " not in candidate database");
    return it->second;
}

RetrievalResult retrieve_sparse(const InvertedIndex& index, const CandidateCatalog& catalog,
                                const std::vector<std::string>& query_tokens, int k) {
    auto start = Clock::now();
    auto scored = index.search_topk(query_tokens, k);
    return to_result(scored, catalog, "sparse-" + field_name(index.field()),
                     ms_since(start));
}

RetrievalResult retrieve_dense_exact(const EmbeddingShard& shard,
                                     const CandidateCatalog& catalog, const Embedding& query,
                                     int k, const std::string& mode_tag, SearchStats* stats) {
    auto start = Clock::now();
    auto scored = exact_topk(shard, query, k, stats);
    return to_result(scored, catalog, mode_tag, ms_since(start));
}

RetrievalResult retrieve_dense_ivf(const IvfIndex& index, const CandidateCatalog& catalog,
                                   const Embedding& query, int k, int nprobe,
                                   const std::string& mode_tag, SearchStats* stats) {
    auto start = Clock::now();
    auto scored = index.search(query, k, nprobe, stats);
    return to_result(scored, catalog, mode_tag, ms_since(start));
}

void DqsIndexes::check_aligned() const {
    DIALRET_REQUIRE(context_shard != nullptr && response_shard != nullptr,
                    "DQS needs both the context and response shards");
    DIALRET_REQUIRE(context_shard->doc_ids == response_shard->doc_ids,
                    "DQS shards are misaligned: context shard has ", context_shard->size(),
                    " ids, response shard has ", response_shard->size(),
                    " ids or a different order");
}

RetrievalResult retrieve_dqs_exact(const DqsIndexes& indexes, const CandidateCatalog& catalog,
                                   const Embedding& query, int k, SearchStats* stats) {
    indexes.check_aligned();
    const EmbeddingShard& ctx = *indexes.context_shard;
    const EmbeddingShard& resp = *indexes.response_shard;
    DIALRET_REQUIRE(ctx.dim() == query.cols(), "query dim ", query.cols(),
                    " does not match shard dim ", ctx.dim());
    auto start = Clock::now();
    std::vector<ScoredDoc> scored;
    scored.reserve(static_cast<size_t>(ctx.size()));
    for (Eigen::Index i = 0; i < ctx.size(); ++i) {
        double ctx_score = 0.0, resp_score = 0.0;
        for (Eigen::Index j = 0; j < query.cols(); ++j) {
            ctx_score += static_cast<double>(ctx.vectors(i, j)) * query(j);
            resp_score += static_cast<double>(resp.vectors(i, j)) * query(j);
        }
        scored.push_back({ctx.doc_ids[static_cast<size_t>(i)],
                          ctx_score + indexes.lambda * resp_score});
    }
    if (stats) stats->vectors_scanned += 2 * static_cast<size_t>(ctx.size());
    auto better = [](const ScoredDoc& a, const ScoredDoc& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.doc_id < b.doc_id;
    };
    size_t keep = std::min(static_cast<size_t>(k), scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<long>(keep), scored.end(),
                      better);
    scored.resize(keep);
    return to_result(scored, catalog, "dqs-exact", ms_since(start));
}

RetrievalResult retrieve_dqs_fused(const DqsIndexes& indexes, const CandidateCatalog& catalog,
                                   const Embedding& query, int k, int k_prime,
                                   SearchStats* stats) {
    indexes.check_aligned();
    DIALRET_REQUIRE(k_prime >= 1, "fused DQS needs K' >= 1, got ", k_prime);
    const EmbeddingShard& ctx = *indexes.context_shard;
    const EmbeddingShard& resp = *indexes.response_shard;
    auto start = Clock::now();

    auto side_topk = [&](const EmbeddingShard& shard, const IvfIndex* ivf) {
        if (ivf != nullptr) {
            int nprobe = indexes.nprobe > 0 ? indexes.nprobe : ivf->default_nprobe();
            return ivf->search(query, k_prime, nprobe, stats);
        }
        return exact_topk(shard, query, k_prime, stats);
    };
    auto ctx_top = side_topk(ctx, indexes.context_ivf);
    auto resp_top = side_topk(resp, indexes.response_ivf);

    // Union of both candidate sets, then complete the missing side from the
    // shards and re-rank by the weighted sum.
    std::vector<int64_t> union_ids;
    std::unordered_map<int64_t, double> ctx_scores, resp_scores;
    for (const ScoredDoc& doc : ctx_top) {
        ctx_scores.emplace(doc.doc_id, doc.score);
        union_ids.push_back(doc.doc_id);
    }
    for (const ScoredDoc& doc : resp_top) {
        if (resp_scores.emplace(doc.doc_id, doc.score).second &&
            !ctx_scores.count(doc.doc_id)) {
            union_ids.push_back(doc.doc_id);
        }
    }
    auto complete = [&](const EmbeddingShard& shard, int64_t id) {
        Eigen::Index row = shard.row_of(id);
        double acc = 0.0;
        for (Eigen::Index j = 0; j < query.cols(); ++j) {
            acc += static_cast<double>(shard.vectors(row, j)) * query(j);
        }
        return acc;
    };
    std::vector<ScoredDoc> scored;
    scored.reserve(union_ids.size());
    for (int64_t id : union_ids) {
        auto cit = ctx_scores.find(id);
        double ctx_score = cit != ctx_scores.end() ? cit->second : complete(ctx, id);
        auto rit = resp_scores.find(id);
        double resp_score = rit != resp_scores.end() ? rit->second : complete(resp, id);
        scored.push_back({id, ctx_score + indexes.lambda * resp_score});
    }
    auto better = [](const ScoredDoc& a, const ScoredDoc& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.doc_id < b.doc_id;
    };
    std::sort(scored.begin(), scored.end(), better);
    if (scored.size() > static_cast<size_t>(k)) {
        scored.resize(static_cast<size_t>(k));
    }
    return to_result(scored, catalog, "dqs-fused", ms_since(start));
}

void save_results_jsonl(const std::vector<RetrievalResult>& results,
                        const std::vector<int64_t>& query_ids, const std::string& path) {
    DIALRET_REQUIRE(results.size() == query_ids.size(), "results/query id count mismatch: ",
                    results.size(), " vs ", query_ids.size());
    std::ofstream out(path);
    DIALRET_REQUIRE(out.good(), "cannot open results file for writing: ", path);
    for (size_t i = 0; i < results.size(); ++i) {
        json obj;
        obj["query_id"] = query_ids[i];
        obj["mode"] = results[i].mode;
        json hits = json::array();
        for (const RetrievalHit& hit : results[i].hits) {
            hits.push_back({{"pair_id", hit.pair_id},
                            {"response", hit.response},
                            {"score", hit.score}});
        }
        obj["hits"] = std::move(hits);
        obj["elapsed_ms"] = results[i].elapsed_ms;
        out << obj.dump() << '\n';
    }
}

LoadedResults load_results_jsonl(const std::string& path) {
    std::ifstream in(path);
    DIALRET_REQUIRE(in.good(), "cannot open results file: ", path);
    LoadedResults loaded;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::exception& e) {
            fail("malformed JSON at ", path, ":", line_no, ": ", e.what());
        }
        loaded.query_ids.push_back(obj.at("query_id").get<int64_t>());
        RetrievalResult result;
        result.mode = obj.at("mode").get<std::string>();
        result.elapsed_ms = obj.at("elapsed_ms").get<double>();
        for (const auto& hit : obj.at("hits")) {
            result.hits.push_back({hit.at("pair_id").get<int64_t>(),
                                   hit.at("response").get<std::string>(),
                                   hit.at("score").get<double>()});
        }
        loaded.results.push_back(std::move(result));
    }
    return loaded;
}

}  // namespace dialret
