#include "dialret/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace dialret {

using nlohmann::json;

namespace {

bool is_strippable(unsigned char c) {
    return std::ispunct(c) != 0 && c != '_';
}

std::string normalize_token(const std::string& raw) {
    size_t begin = 0;
    size_t end = raw.size();
    while (begin < end && is_strippable(static_cast<unsigned char>(raw[begin]))) {
        ++begin;
    }
    while (end > begin && is_strippable(static_cast<unsigned char>(raw[end - 1]))) {
        --end;
    }
    std::string out;
    out.reserve(end - begin);
    for (size_t i = begin; i < end; ++i) {
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(raw[i]))));
    }
    return out;
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    size_t i = 0;
    const size_t n = text.size();
    while (i < n) {
        while (i < n && std::isspace(static_cast<unsigned char>(text[i]))) {
            ++i;
        }
        size_t start = i;
        while (i < n && !std::isspace(static_cast<unsigned char>(text[i]))) {
            ++i;
        }
        if (i > start) {
            std::string tok = normalize_token(text.substr(start, i - start));
            if (!tok.empty()) {
                tokens.push_back(std::move(tok));
            }
        }
    }
    return tokens;
}

std::vector<int> tokenize_ids(const std::string& text, const Vocabulary& vocab) {
    std::vector<int> ids;
    for (const auto& tok : tokenize(text)) {
        ids.push_back(vocab.id(tok));
    }
    return ids;
}

int word_count(const std::string& text) {
    int count = 0;
    bool in_word = false;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            in_word = false;
        } else if (!in_word) {
            in_word = true;
            ++count;
        }
    }
    return count;
}

int context_word_count(const DialoguePair& pair) {
    int total = 0;
    for (const auto& utt : pair.context) {
        total += word_count(utt);
    }
    return total;
}

std::string flatten_context(const std::vector<std::string>& context) {
    std::string out;
    for (size_t i = 0; i < context.size(); ++i) {
        if (i > 0) {
            out += ' ';
            out += kSepToken;
            out += ' ';
        }
        out += context[i];
    }
    return out;
}

std::string session_text(const DialoguePair& pair) {
    return flatten_context(pair.context) + ' ' + kSepToken + ' ' + pair.response;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() {
    insert("<unk>");
    insert(kSepToken);
}

void Vocabulary::insert(const std::string& token) {
    token_to_id_[token] = static_cast<int>(id_to_token_.size());
    id_to_token_.push_back(token);
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& token_lists,
                             int min_freq) {
    std::map<std::string, int64_t> freq;
    for (const auto& list : token_lists) {
        for (const auto& tok : list) {
            ++freq[tok];
        }
    }
    std::vector<std::pair<std::string, int64_t>> kept;
    for (const auto& [tok, count] : freq) {
        if (count >= min_freq && tok != kSepToken && tok != "<unk>") {
            kept.emplace_back(tok, count);
        }
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocabulary vocab;
    for (const auto& [tok, count] : kept) {
        (void)count;
        vocab.insert(tok);
    }
    return vocab;
}

int Vocabulary::id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnkId : it->second;
}

bool Vocabulary::contains(const std::string& token) const {
    return token_to_id_.count(token) > 0;
}

const std::string& Vocabulary::token(int id) const {
    DIALRET_REQUIRE(id >= 0 && id < size(), "vocabulary id out of range: ", id,
                    " (size ", size(), ")");
    return id_to_token_[static_cast<size_t>(id)];
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path);
    DIALRET_REQUIRE(out.good(), "cannot open vocabulary file for writing: ", path);
    for (int i = 0; i < size(); ++i) {
        out << id_to_token_[static_cast<size_t>(i)] << '\t' << i << '\n';
    }
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path);
    DIALRET_REQUIRE(in.good(), "cannot open vocabulary file: ", path);
    Vocabulary vocab;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto tab = line.find('\t');
        DIALRET_REQUIRE(tab != std::string::npos, "malformed vocabulary line ", line_no,
                        " in ", path);
        std::string tok = line.substr(0, tab);
        int id = std::stoi(line.substr(tab + 1));
        if (id < 2) {
            DIALRET_REQUIRE(vocab.token(id) == tok || id == kUnkId,
                            "reserved vocabulary id mismatch at line ", line_no);
            continue;  // reserved entries already present
        }
        DIALRET_REQUIRE(id == vocab.size(), "non-dense vocabulary id ", id, " at line ",
                        line_no, " in ", path);
        vocab.insert(tok);
    }
    return vocab;
}

// ---------------------------------------------------------------------------
// Filtering and splits

std::vector<DialoguePair> filter_pairs(const std::vector<DialoguePair>& pairs) {
    std::vector<DialoguePair> kept;
    for (const auto& pair : pairs) {
        if (pair.context.empty()) continue;
        int ctx_words = context_word_count(pair);
        int resp_words = word_count(pair.response);
        if (ctx_words < 5 || ctx_words >= 128) continue;
        if (resp_words < 5 || resp_words >= 64) continue;
        if (tokenize(pair.response).empty()) continue;
        if (tokenize(flatten_context(pair.context)).empty()) continue;
        kept.push_back(pair);
    }
    return kept;
}

std::vector<DialoguePair> dedup_pairs(const std::vector<DialoguePair>& pairs) {
    std::vector<DialoguePair> kept;
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& pair : pairs) {
        auto key = std::make_pair(flatten_context(pair.context), pair.response);
        if (seen.insert(key).second) {
            kept.push_back(pair);
        }
    }
    return kept;
}

std::vector<TrainGroup> build_train_groups(const std::vector<DialoguePair>& pairs) {
    // Preserve first-appearance order of responses for determinism.
    std::vector<std::string> order;
    std::unordered_map<std::string, TrainGroup> by_response;
    std::unordered_map<std::string, std::unordered_set<std::string>> seen_contexts;
    for (const auto& pair : pairs) {
        auto it = by_response.find(pair.response);
        if (it == by_response.end()) {
            order.push_back(pair.response);
            it = by_response.emplace(pair.response, TrainGroup{pair.response, {}}).first;
        }
        if (seen_contexts[pair.response].insert(flatten_context(pair.context)).second) {
            it->second.contexts.push_back(pair.context);
        }
    }
    std::vector<TrainGroup> groups;
    for (const auto& response : order) {
        auto& group = by_response.at(response);
        if (group.contexts.size() >= 2) {
            groups.push_back(std::move(group));
        }
    }
    return groups;
}

SplitResult build_splits(const std::vector<DialoguePair>& pairs, const SplitConfig& cfg) {
    DIALRET_REQUIRE(cfg.mc_size >= 0 && cfg.sc_size >= 0, "split sizes must be >= 0");
    DIALRET_REQUIRE(cfg.train_ratio >= 0.0 && cfg.train_ratio <= 1.0,
                    "train_ratio must lie in [0, 1], got ", cfg.train_ratio);
    Rng rng(cfg.seed);
    const auto deduped = dedup_pairs(pairs);

    // Group pair indices by response string, preserving first-appearance order.
    std::vector<std::string> order;
    std::unordered_map<std::string, std::vector<size_t>> by_response;
    for (size_t i = 0; i < deduped.size(); ++i) {
        const auto& resp = deduped[i].response;
        if (by_response.find(resp) == by_response.end()) {
            order.push_back(resp);
        }
        by_response[resp].push_back(i);
    }

    std::vector<std::string> multi;       // responses with >= 2 source contexts
    std::vector<std::string> single;      // responses with exactly 1 source context
    for (const auto& resp : order) {
        (by_response.at(resp).size() >= 2 ? multi : single).push_back(resp);
    }

    // Reserve a portion of the multi-context responses for training; their
    // contexts never reach the database.
    std::shuffle(multi.begin(), multi.end(), rng);
    size_t train_count = static_cast<size_t>(cfg.train_ratio * static_cast<double>(multi.size()) + 0.5);
    std::vector<DialoguePair> train_pairs;
    std::unordered_set<std::string> train_contexts;
    for (size_t g = 0; g < train_count; ++g) {
        for (size_t idx : by_response.at(multi[g])) {
            train_pairs.push_back(deduped[idx]);
            train_contexts.insert(flatten_context(deduped[idx].context));
        }
    }
    SplitResult split;
    split.train_groups = build_train_groups(train_pairs);

    // Pool = everything not reserved for training, minus pairs whose context
    // string collides with a training context (the no-leakage requirement).
    std::vector<std::string> pool_multi(multi.begin() + static_cast<long>(train_count),
                                        multi.end());
    std::unordered_map<std::string, std::vector<size_t>> pool;
    auto add_to_pool = [&](const std::string& resp) {
        std::vector<size_t> kept;
        for (size_t idx : by_response.at(resp)) {
            if (!train_contexts.count(flatten_context(deduped[idx].context))) {
                kept.push_back(idx);
            }
        }
        if (!kept.empty()) {
            pool.emplace(resp, std::move(kept));
        }
    };
    for (const auto& resp : pool_multi) add_to_pool(resp);
    for (const auto& resp : single) add_to_pool(resp);

    // MC eligibility: >= 2 contexts still in the pool and a source multiplicity
    // within [2, max_contexts].
    std::vector<std::string> mc_eligible;
    for (const auto& resp : pool_multi) {
        auto it = pool.find(resp);
        if (it == pool.end() || it->second.size() < 2) continue;
        size_t source_count = by_response.at(resp).size();
        if (source_count <= static_cast<size_t>(cfg.max_contexts)) {
            mc_eligible.push_back(resp);
        }
    }
    DIALRET_REQUIRE(static_cast<size_t>(cfg.mc_size) <= mc_eligible.size(),
                    "MC test set needs ", cfg.mc_size, " eligible responses but only ",
                    mc_eligible.size(), " are available");

    std::vector<std::string> sc_eligible;
    for (const auto& resp : single) {
        if (pool.count(resp)) {
            sc_eligible.push_back(resp);
        }
    }
    DIALRET_REQUIRE(static_cast<size_t>(cfg.sc_size) <= sc_eligible.size(),
                    "SC test set needs ", cfg.sc_size, " single-context responses but only ",
                    sc_eligible.size(), " are available");

    std::shuffle(mc_eligible.begin(), mc_eligible.end(), rng);
    std::shuffle(sc_eligible.begin(), sc_eligible.end(), rng);

    std::unordered_set<size_t> test_indices;
    for (int m = 0; m < cfg.mc_size; ++m) {
        const auto& indices = pool.at(mc_eligible[static_cast<size_t>(m)]);
        std::uniform_int_distribution<size_t> pick(0, indices.size() - 1);
        size_t chosen = indices[pick(rng)];
        split.mc_test.push_back(deduped[chosen]);
        test_indices.insert(chosen);
    }
    for (int s = 0; s < cfg.sc_size; ++s) {
        size_t chosen = pool.at(sc_eligible[static_cast<size_t>(s)]).front();
        split.sc_test.push_back(deduped[chosen]);
        test_indices.insert(chosen);
    }

    // Remaining pool pairs, including every unselected C_r^- sibling, form the
    // candidate database.
    for (const auto& resp : pool_multi) {
        auto it = pool.find(resp);
        if (it == pool.end()) continue;
        for (size_t idx : it->second) {
            if (!test_indices.count(idx)) split.database.push_back(deduped[idx]);
        }
    }
    for (const auto& resp : single) {
        auto it = pool.find(resp);
        if (it == pool.end()) continue;
        for (size_t idx : it->second) {
            if (!test_indices.count(idx)) split.database.push_back(deduped[idx]);
        }
    }
    return split;
}

void check_split(const SplitResult& split, const std::vector<DialoguePair>& pairs,
                 const SplitConfig& cfg) {
    const auto deduped = dedup_pairs(pairs);
    std::unordered_map<std::string, size_t> source_multiplicity;
    std::unordered_set<int64_t> source_ids;
    for (const auto& pair : deduped) {
        ++source_multiplicity[pair.response];
        source_ids.insert(pair.id);
    }

    std::unordered_map<std::string, size_t> db_contexts_per_response;
    std::unordered_set<std::string> db_context_strings;
    std::unordered_set<int64_t> db_ids;
    for (const auto& pair : split.database) {
        ++db_contexts_per_response[pair.response];
        db_context_strings.insert(flatten_context(pair.context));
        DIALRET_REQUIRE(db_ids.insert(pair.id).second, "duplicate pair id ", pair.id,
                        " in database");
        DIALRET_REQUIRE(source_ids.count(pair.id), "database pair id ", pair.id,
                        " missing from source corpus");
    }

    for (const auto& pair : split.mc_test) {
        DIALRET_REQUIRE(db_contexts_per_response[pair.response] >= 1,
                        "MC pair ", pair.id, " has no residual context in the database");
        size_t mult = source_multiplicity[pair.response];
        DIALRET_REQUIRE(mult >= 2 && mult <= static_cast<size_t>(cfg.max_contexts),
                        "MC pair ", pair.id, " source multiplicity ", mult,
                        " outside [2, ", cfg.max_contexts, "]");
        DIALRET_REQUIRE(!db_ids.count(pair.id), "MC pair id ", pair.id,
                        " leaked into the database");
    }
    for (const auto& pair : split.sc_test) {
        DIALRET_REQUIRE(db_contexts_per_response[pair.response] == 0,
                        "SC pair ", pair.id, " has contexts in the database");
        DIALRET_REQUIRE(source_multiplicity[pair.response] == 1, "SC pair ", pair.id,
                        " response has multiple source contexts");
        DIALRET_REQUIRE(!db_ids.count(pair.id), "SC pair id ", pair.id,
                        " leaked into the database");
    }
    for (const auto& group : split.train_groups) {
        DIALRET_REQUIRE(group.contexts.size() >= 2, "train group for response \"",
                        group.response, "\" has fewer than 2 contexts");
        for (const auto& ctx : group.contexts) {
            DIALRET_REQUIRE(!db_context_strings.count(flatten_context(ctx)),
                            "train-group context leaked into the database (response \"",
                            group.response, "\")");
        }
    }
}

// ---------------------------------------------------------------------------
// JSON-lines IO

std::vector<DialoguePair> load_pairs_jsonl(const std::string& path) {
    std::ifstream in(path);
    DIALRET_REQUIRE(in.good(), "cannot open corpus file: ", path);
    std::vector<DialoguePair> pairs;
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
        DIALRET_REQUIRE(obj.contains("id") && obj.contains("context") && obj.contains("response"),
                        "missing field at ", path, ":", line_no);
        DialoguePair pair;
        pair.id = obj.at("id").get<int64_t>();
        pair.context = obj.at("context").get<std::vector<std::string>>();
        pair.response = obj.at("response").get<std::string>();
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

void save_pairs_jsonl(const std::vector<DialoguePair>& pairs, const std::string& path) {
    std::ofstream out(path);
    DIALRET_REQUIRE(out.good(), "cannot open corpus file for writing: ", path);
    for (const auto& pair : pairs) {
        json obj;
        obj["id"] = pair.id;
        obj["context"] = pair.context;
        obj["response"] = pair.response;
        out << obj.dump() << '\n';
    }
}

std::vector<TrainGroup> load_groups_jsonl(const std::string& path) {
    std::ifstream in(path);
    DIALRET_REQUIRE(in.good(), "cannot open train-group file: ", path);
    std::vector<TrainGroup> groups;
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
        TrainGroup group;
        group.response = obj.at("response").get<std::string>();
        group.contexts = obj.at("contexts").get<std::vector<std::vector<std::string>>>();
        groups.push_back(std::move(group));
    }
    return groups;
}

void save_groups_jsonl(const std::vector<TrainGroup>& groups, const std::string& path) {
    std::ofstream out(path);
    DIALRET_REQUIRE(out.good(), "cannot open train-group file for writing: ", path);
    for (const auto& group : groups) {
        json obj;
        obj["response"] = group.response;
        obj["contexts"] = group.contexts;
        out << obj.dump() << '\n';
    }
}

}  // namespace dialret
