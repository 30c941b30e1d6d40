#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "dialret/common.hpp"

namespace dialret {

/// Which document field an index was built over.
enum class IndexField { Context, Session, Response };

std::string field_name(IndexField field);
IndexField parse_field(const std::string& name);

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

struct Posting {
    int64_t doc_id;
    int32_t tf;
};

struct ScoredDoc {
    int64_t doc_id;
    double score;
};

/// Okapi BM25 inverted index over tokenized documents. Immutable after
/// build; concurrent searches are safe.
///
/// IDF uses ln(1 + (N - n_t + 0.5)/(n_t + 0.5)), which never goes negative.
/// Queries are scored with unique-term semantics.
class InvertedIndex {
public:
    static InvertedIndex build(
        const std::vector<std::pair<int64_t, std::vector<std::string>>>& docs,
        IndexField field);

    /// Full Okapi score of one document; unknown doc_id is an error.
    double score(const std::vector<std::string>& query_tokens, int64_t doc_id,
                 const Bm25Params& params = {}) const;

    /// Exact top-K over every document sharing at least one query term.
    /// Descending score, ties broken by ascending doc_id.
    std::vector<ScoredDoc> search_topk(const std::vector<std::string>& query_tokens, int k,
                                       const Bm25Params& params = {}) const;

    int64_t doc_count() const { return doc_count_; }
    double avgdl() const { return avgdl_; }
    IndexField field() const { return field_; }
    const std::map<std::string, std::vector<Posting>>& postings() const { return postings_; }
    int32_t doc_length(int64_t doc_id) const;

    void save(const std::string& path) const;
    static InvertedIndex load(const std::string& path);

private:
    double idf(const std::string& term) const;
    double term_doc_score(double idf_value, int32_t tf, int32_t doc_len,
                          const Bm25Params& params) const;

    std::map<std::string, std::vector<Posting>> postings_;
    std::unordered_map<int64_t, int32_t> doc_lengths_;
    int64_t doc_count_ = 0;
    double avgdl_ = 0.0;
    IndexField field_ = IndexField::Context;
};

}  // namespace dialret
