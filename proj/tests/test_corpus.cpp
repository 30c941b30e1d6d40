#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "dialret/corpus.hpp"
#include "support/fixtures.hpp"
#include "support/testutil.hpp"

using namespace dialret;
namespace fs = std::filesystem;
using testsupport::contains;
using testsupport::error_message;
using testsupport::TopicalCorpusSpec;
using testsupport::topical_corpus;

namespace {

std::string temp_path(const std::string& name) {
    return (fs::temp_directory_path() / name).string();
}

DialoguePair make_pair(int64_t id, std::vector<std::string> context, std::string response) {
    DialoguePair pair;
    pair.id = id;
    pair.context = std::move(context);
    pair.response = std::move(response);
    return pair;
}

std::string words(int n, const std::string& prefix = "w") {
    std::string out;
    for (int i = 0; i < n; ++i) {
        if (i > 0) out += ' ';
        out += prefix + std::to_string(i);
    }
    return out;
}

}  // namespace

TEST_CASE("tokenize lowercases and strips punctuation") {
    CHECK(tokenize("Hello, World!") == std::vector<std::string>{"hello", "world"});
    CHECK(tokenize("").empty());
    CHECK(tokenize("  spaced\tout \n") == std::vector<std::string>{"spaced", "out"});
    CHECK(tokenize("'quoted' (braced)") == std::vector<std::string>{"quoted", "braced"});
    // Underscore survives so the separator token keeps its identity.
    CHECK(tokenize("__eou__") == std::vector<std::string>{"__eou__"});
    CHECK(tokenize("!!! ???").empty());
}

TEST_CASE("tokenize with vocabulary maps unknown tokens to UNK") {
    Vocabulary vocab = Vocabulary::build({{"cat", "cat", "sat", "sat"}}, 2);
    std::vector<int> ids = tokenize_ids("cat cat sat dog", vocab);
    REQUIRE(ids.size() == 4);
    CHECK(ids[0] == ids[1]);
    CHECK(ids[0] != ids[2]);
    CHECK(ids[3] == kUnkId);
}

TEST_CASE("tokenize is idempotent on its own rejoined output") {
    const std::string text = "Mixed CASE, with... lots; of -- punctuation!";
    auto once = tokenize(text);
    std::string rejoined;
    for (size_t i = 0; i < once.size(); ++i) {
        if (i > 0) rejoined += ' ';
        rejoined += once[i];
    }
    CHECK(tokenize(rejoined) == once);
}

TEST_CASE("vocabulary is deterministic and reserves UNK and SEP") {
    Vocabulary vocab = Vocabulary::build({{"b", "b", "a", "a", "a", "once"}}, 2);
    CHECK(vocab.token(kUnkId) == "<unk>");
    CHECK(vocab.token(kSepId) == kSepToken);
    CHECK(vocab.size() == 4);           // reserved + a + b
    CHECK(vocab.id("a") == 2);          // higher frequency first
    CHECK(vocab.id("b") == 3);
    CHECK(vocab.id("once") == kUnkId);  // below min frequency
    CHECK_FALSE(vocab.contains("once"));
}

TEST_CASE("vocabulary round-trips through its text format") {
    Vocabulary vocab = Vocabulary::build({{"x", "x", "y", "y", "y"}}, 2);
    auto path = temp_path("dialret_vocab_test.txt");
    vocab.save(path);
    Vocabulary loaded = Vocabulary::load(path);
    CHECK(loaded.size() == vocab.size());
    for (int i = 0; i < vocab.size(); ++i) {
        CHECK(loaded.token(i) == vocab.token(i));
    }
    fs::remove(path);
}

TEST_CASE("filter keeps the documented word-count window") {
    auto kept_pair = make_pair(1, {words(5)}, words(5, "r"));
    auto short_ctx = make_pair(2, {words(4)}, words(5, "r"));
    auto long_resp = make_pair(3, {words(5)}, words(64, "r"));
    auto edge_ctx = make_pair(4, {words(127)}, words(5, "r"));
    auto too_long_ctx = make_pair(5, {words(128)}, words(5, "r"));
    auto filtered = filter_pairs({kept_pair, short_ctx, long_resp, edge_ctx, too_long_ctx});
    REQUIRE(filtered.size() == 2);
    CHECK(filtered[0].id == 1);
    CHECK(filtered[1].id == 4);
}

TEST_CASE("multi-utterance contexts count words across utterances") {
    auto split_ok = make_pair(1, {words(3), words(2, "u")}, words(5, "r"));
    auto split_short = make_pair(2, {words(2), words(2, "u")}, words(5, "r"));
    auto filtered = filter_pairs({split_ok, split_short});
    REQUIRE(filtered.size() == 1);
    CHECK(filtered[0].id == 1);
}

TEST_CASE("filter is idempotent") {
    auto corpus = topical_corpus({});
    auto once = filter_pairs(corpus);
    auto twice = filter_pairs(once);
    REQUIRE(once.size() == twice.size());
    for (size_t i = 0; i < once.size(); ++i) {
        CHECK(once[i].id == twice[i].id);
    }
}

TEST_CASE("session text inserts the separator between utterances and response") {
    auto pair = make_pair(1, {"a b", "c d"}, "r s");
    CHECK(session_text(pair) == "a b __eou__ c d __eou__ r s");
    CHECK(flatten_context(pair.context) == "a b __eou__ c d");
}

TEST_CASE("train groups require two distinct contexts per response") {
    auto g1 = make_pair(1, {"c one"}, "r");
    auto g2 = make_pair(2, {"c two"}, "r");
    auto other = make_pair(3, {"c three"}, "s");
    auto groups = build_train_groups({g1, g2, other});
    REQUIRE(groups.size() == 1);
    CHECK(groups[0].response == "r");
    CHECK(groups[0].contexts.size() == 2);
}

TEST_CASE("all-unique responses produce no train groups") {
    auto groups = build_train_groups({make_pair(1, {"a"}, "r1"), make_pair(2, {"b"}, "r2")});
    CHECK(groups.empty());
}

TEST_CASE("duplicate rows deduplicate to below the group threshold") {
    auto dup1 = make_pair(1, {"same context"}, "r");
    auto dup2 = make_pair(2, {"same context"}, "r");
    auto groups = build_train_groups({dup1, dup2});
    CHECK(groups.empty());  // set semantics: one distinct context
}

TEST_CASE("build_splits satisfies every split invariant on a synthetic corpus") {
    TopicalCorpusSpec spec;
    spec.multi_groups = 60;
    spec.singles = 30;
    spec.mega_groups = 2;
    auto pairs = filter_pairs(topical_corpus(spec));
    SplitConfig cfg;
    cfg.mc_size = 12;
    cfg.sc_size = 8;
    cfg.train_ratio = 0.4;
    cfg.seed = 11;
    SplitResult split = build_splits(pairs, cfg);
    CHECK(split.mc_test.size() == 12);
    CHECK(split.sc_test.size() == 8);
    CHECK(split.train_groups.size() > 0);
    check_split(split, pairs, cfg);
}

TEST_CASE("mega groups are excluded from MC eligibility but feed the database") {
    TopicalCorpusSpec spec;
    spec.multi_groups = 3;
    spec.singles = 0;
    spec.mega_groups = 1;
    spec.mega_contexts = 51;
    auto pairs = filter_pairs(topical_corpus(spec));
    SplitConfig cfg;
    cfg.mc_size = 3;
    cfg.sc_size = 0;
    cfg.train_ratio = 0.0;
    SplitResult split = build_splits(pairs, cfg);
    check_split(split, pairs, cfg);

    // Asking for one more MC pair than the non-mega groups can provide fails.
    cfg.mc_size = 4;
    std::string msg = error_message([&] { build_splits(pairs, cfg); });
    CHECK(contains(msg, "4"));
    CHECK(contains(msg, "3"));
    CHECK(contains(msg, "MC"));
}

TEST_CASE("split construction is deterministic under a seed") {
    auto pairs = filter_pairs(topical_corpus({}));
    SplitConfig cfg;
    cfg.mc_size = 6;
    cfg.sc_size = 5;
    cfg.seed = 99;
    SplitResult a = build_splits(pairs, cfg);
    SplitResult b = build_splits(pairs, cfg);
    REQUIRE(a.mc_test.size() == b.mc_test.size());
    for (size_t i = 0; i < a.mc_test.size(); ++i) {
        CHECK(a.mc_test[i].id == b.mc_test[i].id);
    }
    REQUIRE(a.database.size() == b.database.size());
    for (size_t i = 0; i < a.database.size(); ++i) {
        CHECK(a.database[i].id == b.database[i].id);
    }
    REQUIRE(a.train_groups.size() == b.train_groups.size());
    for (size_t i = 0; i < a.train_groups.size(); ++i) {
        CHECK(a.train_groups[i].response == b.train_groups[i].response);
    }

    SplitConfig other = cfg;
    other.seed = 100;
    SplitResult c = build_splits(pairs, other);
    bool any_difference = c.mc_test.size() != a.mc_test.size();
    for (size_t i = 0; !any_difference && i < a.mc_test.size(); ++i) {
        any_difference = a.mc_test[i].id != c.mc_test[i].id;
    }
    CHECK(any_difference);
}

TEST_CASE("split parts cover only source pairs and stay disjoint") {
    auto pairs = filter_pairs(topical_corpus({}));
    SplitConfig cfg;
    cfg.mc_size = 6;
    cfg.sc_size = 5;
    cfg.seed = 5;
    SplitResult split = build_splits(pairs, cfg);

    std::set<int64_t> source_ids;
    for (const auto& pair : pairs) source_ids.insert(pair.id);
    std::set<int64_t> db_ids, mc_ids, sc_ids;
    for (const auto& pair : split.database) db_ids.insert(pair.id);
    for (const auto& pair : split.mc_test) mc_ids.insert(pair.id);
    for (const auto& pair : split.sc_test) sc_ids.insert(pair.id);
    for (int64_t id : db_ids) CHECK(source_ids.count(id) == 1);
    for (int64_t id : mc_ids) {
        CHECK(source_ids.count(id) == 1);
        CHECK(db_ids.count(id) == 0);
    }
    for (int64_t id : sc_ids) {
        CHECK(source_ids.count(id) == 1);
        CHECK(db_ids.count(id) == 0);
    }
}

TEST_CASE("pairs round-trip through JSON lines") {
    auto pairs = topical_corpus({});
    auto path = temp_path("dialret_pairs_test.jsonl");
    save_pairs_jsonl(pairs, path);
    auto loaded = load_pairs_jsonl(path);
    REQUIRE(loaded.size() == pairs.size());
    for (size_t i = 0; i < pairs.size(); ++i) {
        CHECK(loaded[i].id == pairs[i].id);
        CHECK(loaded[i].context == pairs[i].context);
        CHECK(loaded[i].response == pairs[i].response);
    }
    fs::remove(path);
}

TEST_CASE("train groups round-trip through JSON lines") {
    auto groups = build_train_groups(filter_pairs(topical_corpus({})));
    REQUIRE(!groups.empty());
    auto path = temp_path("dialret_groups_test.jsonl");
    save_groups_jsonl(groups, path);
    auto loaded = load_groups_jsonl(path);
    REQUIRE(loaded.size() == groups.size());
    for (size_t i = 0; i < groups.size(); ++i) {
        CHECK(loaded[i].response == groups[i].response);
        CHECK(loaded[i].contexts == groups[i].contexts);
    }
    fs::remove(path);
}

TEST_CASE("malformed corpus lines are rejected with the line number") {
    auto path = temp_path("dialret_bad_corpus.jsonl");
    {
        std::ofstream out(path);
        out << "{\"id\": 1, \"context\": [\"a\"], \"response\": \"b\"}\n";
        out << "not json\n";
    }
    CHECK(contains(error_message([&] { load_pairs_jsonl(path); }), ":2"));
    fs::remove(path);
}
