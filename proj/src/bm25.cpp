#include "dialret/bm25.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "dialret/binio.hpp"

namespace dialret {

namespace {

constexpr char kMagic[4] = {'B', 'M', '2', '5'};
constexpr uint32_t kVersion = 1;

}  // namespace

std::string field_name(IndexField field) {
    switch (field) {
        case IndexField::Context: return "context";
        case IndexField::Session: return "session";
        case IndexField::Response: return "response";
    }
    fail("invalid index field");
}

IndexField parse_field(const std::string& name) {
    if (name == "context") return IndexField::Context;
    if (name == "session") return IndexField::Session;
    if (name == "response") return IndexField::Response;
    fail("unknown index field \"", name, "\" (expected context, session or response)");
}

InvertedIndex InvertedIndex::build(
    const std::vector<std::pair<int64_t, std::vector<std::string>>>& docs,
    IndexField field) {
    InvertedIndex index;
    index.field_ = field;
    index.doc_count_ = static_cast<int64_t>(docs.size());
    int64_t total_len = 0;
    for (const auto& [doc_id, tokens] : docs) {
        DIALRET_REQUIRE(index.doc_lengths_.emplace(doc_id, static_cast<int32_t>(tokens.size()))
                            .second,
                        "duplicate doc id ", doc_id, " in index build");
        total_len += static_cast<int64_t>(tokens.size());
        std::map<std::string, int32_t> freq;
        for (const auto& tok : tokens) {
            ++freq[tok];
        }
        for (const auto& [term, tf] : freq) {
            index.postings_[term].push_back({doc_id, tf});
        }
    }
    for (auto& [term, list] : index.postings_) {
        std::sort(list.begin(), list.end(),
                  [](const Posting& a, const Posting& b) { return a.doc_id < b.doc_id; });
    }
    index.avgdl_ = docs.empty() ? 0.0
                                : static_cast<double>(total_len) /
                                      static_cast<double>(index.doc_count_);
    return index;
}

int32_t InvertedIndex::doc_length(int64_t doc_id) const {
    auto it = doc_lengths_.find(doc_id);
    DIALRET_REQUIRE(it != doc_lengths_.end(), "doc id ", doc_id, " not in index");
    return it->second;
}

double InvertedIndex::idf(const std::string& term) const {
    auto it = postings_.find(term);
    if (it == postings_.end()) return 0.0;
    double n_t = static_cast<double>(it->second.size());
    double n = static_cast<double>(doc_count_);
    return std::log(1.0 + (n - n_t + 0.5) / (n_t + 0.5));
}

double InvertedIndex::term_doc_score(double idf_value, int32_t tf, int32_t doc_len,
                                     const Bm25Params& params) const {
    double tfd = static_cast<double>(tf);
    double norm = params.k1 * (1.0 - params.b + params.b * static_cast<double>(doc_len) / avgdl_);
    return idf_value * (tfd * (params.k1 + 1.0)) / (tfd + norm);
}

double InvertedIndex::score(const std::vector<std::string>& query_tokens, int64_t doc_id,
                            const Bm25Params& params) const {
    int32_t doc_len = doc_length(doc_id);
    std::set<std::string> unique(query_tokens.begin(), query_tokens.end());
    double total = 0.0;
    for (const auto& term : unique) {
        auto it = postings_.find(term);
        if (it == postings_.end()) continue;
        const auto& list = it->second;
        auto pos = std::lower_bound(list.begin(), list.end(), doc_id,
                                    [](const Posting& p, int64_t id) { return p.doc_id < id; });
        if (pos == list.end() || pos->doc_id != doc_id) continue;
        total += term_doc_score(idf(term), pos->tf, doc_len, params);
    }
    return total;
}

std::vector<ScoredDoc> InvertedIndex::search_topk(const std::vector<std::string>& query_tokens,
                                                  int k, const Bm25Params& params) const {
    DIALRET_REQUIRE(k >= 1, "top-K requires k >= 1, got ", k);
    std::set<std::string> unique(query_tokens.begin(), query_tokens.end());
    std::map<int64_t, double> accumulator;
    for (const auto& term : unique) {
        auto it = postings_.find(term);
        if (it == postings_.end()) continue;
        double idf_value = idf(term);
        for (const Posting& posting : it->second) {
            accumulator[posting.doc_id] +=
                term_doc_score(idf_value, posting.tf, doc_lengths_.at(posting.doc_id), params);
        }
    }
    std::vector<ScoredDoc> scored;
    scored.reserve(accumulator.size());
    for (const auto& [doc_id, score] : accumulator) {
        scored.push_back({doc_id, score});
    }
    auto better = [](const ScoredDoc& a, const ScoredDoc& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.doc_id < b.doc_id;
    };
    size_t keep = std::min(static_cast<size_t>(k), scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<long>(keep), scored.end(),
                      better);
    scored.resize(keep);
    return scored;
}

void InvertedIndex::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    DIALRET_REQUIRE(out.good(), "cannot open index file for writing: ", path);
    binio::write_magic(out, kMagic);
    binio::write_pod<uint32_t>(out, kVersion);
    binio::write_pod<uint8_t>(out, static_cast<uint8_t>(field_));
    binio::write_pod<int64_t>(out, doc_count_);
    binio::write_pod<double>(out, avgdl_);
    // Doc lengths in ascending id order for deterministic bytes.
    std::map<int64_t, int32_t> ordered(doc_lengths_.begin(), doc_lengths_.end());
    binio::write_pod<uint64_t>(out, ordered.size());
    for (const auto& [doc_id, len] : ordered) {
        binio::write_pod<int64_t>(out, doc_id);
        binio::write_pod<int32_t>(out, len);
    }
    binio::write_pod<uint64_t>(out, postings_.size());
    for (const auto& [term, list] : postings_) {
        binio::write_string(out, term);
        binio::write_pod<uint64_t>(out, list.size());
        for (const Posting& posting : list) {
            binio::write_pod<int64_t>(out, posting.doc_id);
            binio::write_pod<int32_t>(out, posting.tf);
        }
    }
    DIALRET_REQUIRE(out.good(), "write failure on index file: ", path);
}

InvertedIndex InvertedIndex::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    DIALRET_REQUIRE(in.good(), "cannot open index file: ", path);
    binio::check_magic(in, kMagic, path);
    uint32_t version = binio::read_pod<uint32_t>(in, "index version");
    DIALRET_REQUIRE(version == kVersion, "unsupported index version ", version, " in ", path);
    InvertedIndex index;
    index.field_ = static_cast<IndexField>(binio::read_pod<uint8_t>(in, "field tag"));
    index.doc_count_ = binio::read_pod<int64_t>(in, "doc count");
    index.avgdl_ = binio::read_pod<double>(in, "avgdl");
    uint64_t len_count = binio::read_pod<uint64_t>(in, "doc length count");
    for (uint64_t i = 0; i < len_count; ++i) {
        int64_t doc_id = binio::read_pod<int64_t>(in, "doc id");
        int32_t len = binio::read_pod<int32_t>(in, "doc length");
        index.doc_lengths_[doc_id] = len;
    }
    uint64_t term_count = binio::read_pod<uint64_t>(in, "term count");
    for (uint64_t i = 0; i < term_count; ++i) {
        std::string term = binio::read_string(in, "term");
        uint64_t postings_count = binio::read_pod<uint64_t>(in, "postings count");
        auto& list = index.postings_[term];
        list.reserve(postings_count);
        for (uint64_t j = 0; j < postings_count; ++j) {
            int64_t doc_id = binio::read_pod<int64_t>(in, "posting doc id");
            int32_t tf = binio::read_pod<int32_t>(in, "posting tf");
            list.push_back({doc_id, tf});
        }
    }
    return index;
}

}  // namespace dialret
