#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dialret/common.hpp"

namespace dialret {

/// Separator written between utterances when a context is flattened to text
/// and between context and response inside a session. The token survives
/// tokenization (underscores are not stripped) and owns a reserved vocab id.
inline constexpr const char* kSepToken = "__eou__";

inline constexpr int kUnkId = 0;
inline constexpr int kSepId = 1;

/// One context/response pair; the atom of corpora, databases and test sets.
struct DialoguePair {
    int64_t id = 0;
    std::vector<std::string> context;  // ordered utterances, oldest first
    std::string response;
};

/// A response together with all (>= 2) distinct contexts that produced it.
struct TrainGroup {
    std::string response;
    std::vector<std::vector<std::string>> contexts;
};

/// Token -> dense id map with reserved UNK and SEP entries.
class Vocabulary {
public:
    Vocabulary();

    /// Builds from tokenized text: every token with frequency >= min_freq gets
    /// an id. Ids are assigned by (frequency desc, token asc) after the
    /// reserved entries, so the result is a pure function of the corpus.
    static Vocabulary build(const std::vector<std::vector<std::string>>& token_lists,
                            int min_freq = 2);

    int id(const std::string& token) const;  // UNK id for unknown tokens
    const std::string& token(int id) const;
    bool contains(const std::string& token) const;
    int size() const { return static_cast<int>(id_to_token_.size()); }

    void save(const std::string& path) const;  // "token<TAB>id" sorted by id
    static Vocabulary load(const std::string& path);

private:
    std::map<std::string, int> token_to_id_;
    std::vector<std::string> id_to_token_;
    void insert(const std::string& token);
};

/// Lowercases, splits on whitespace and strips leading/trailing punctuation
/// from each token (underscore excepted so that __eou__ survives). Empty
/// tokens are dropped.
std::vector<std::string> tokenize(const std::string& text);

/// tokenize() followed by vocab lookup; unknown tokens map to the UNK id.
std::vector<int> tokenize_ids(const std::string& text, const Vocabulary& vocab);

/// Whitespace word count of raw text, the unit of the corpus length filters.
int word_count(const std::string& text);
int context_word_count(const DialoguePair& pair);

/// Context utterances joined with the separator token.
std::string flatten_context(const std::vector<std::string>& context);

/// Flattened context, separator, response: the session text of a pair.
std::string session_text(const DialoguePair& pair);

/// Keeps exactly the pairs with context word count in [5, 128), response word
/// count in [5, 64) and non-empty tokenization of both sides.
std::vector<DialoguePair> filter_pairs(const std::vector<DialoguePair>& pairs);

/// Drops rows whose (flattened context, response) equals an earlier row's.
std::vector<DialoguePair> dedup_pairs(const std::vector<DialoguePair>& pairs);

/// One group per response string with >= 2 distinct contexts; contexts are
/// deduplicated by flattened text and groups that fall below 2 are discarded.
std::vector<TrainGroup> build_train_groups(const std::vector<DialoguePair>& pairs);

struct SplitResult {
    std::vector<DialoguePair> mc_test;
    std::vector<DialoguePair> sc_test;
    std::vector<DialoguePair> database;
    std::vector<TrainGroup> train_groups;
};

struct SplitConfig {
    int mc_size = 0;
    int sc_size = 0;
    /// Fraction of multi-context responses reserved for training; the rest
    /// stay eligible for the MC test set.
    double train_ratio = 0.5;
    /// MC eligibility window for the number of source contexts per response.
    int max_contexts = 50;
    uint64_t seed = 0;
};

/// Splits a filtered corpus into MC/SC test sets, candidate database and
/// train groups. Multi-context responses are partitioned into a training
/// reservation and an MC pool; for each selected MC response one random
/// context becomes the query and the siblings go to the database. Responses
/// with a single source context feed the SC set. No train-group context
/// string ever reaches the database. Deterministic under cfg.seed.
SplitResult build_splits(const std::vector<DialoguePair>& pairs, const SplitConfig& cfg);

/// Exhaustively validates the split invariants against the source corpus;
/// throws on the first violation. `pairs` must be the build_splits input.
void check_split(const SplitResult& split, const std::vector<DialoguePair>& pairs,
                 const SplitConfig& cfg);

// JSON-lines corpus files: {"id": int, "context": [string,...], "response": string}
std::vector<DialoguePair> load_pairs_jsonl(const std::string& path);
void save_pairs_jsonl(const std::vector<DialoguePair>& pairs, const std::string& path);

// Train groups: {"response": string, "contexts": [[string,...],...]}
std::vector<TrainGroup> load_groups_jsonl(const std::string& path);
void save_groups_jsonl(const std::vector<TrainGroup>& groups, const std::string& path);

}  // namespace dialret
