#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dialret/corpus.hpp"
#include "dialret/linalg.hpp"

namespace dialret::testsupport {

struct TopicalCorpusSpec {
    int multi_groups = 40;       // responses with several contexts
    int min_contexts = 2;
    int max_contexts = 5;
    int singles = 20;            // single-context responses (SC candidates)
    int mega_groups = 0;         // responses with more than 50 contexts
    int mega_contexts = 60;
    uint64_t seed = 7;
};

/// Synthetic dialogue corpus with controllable response multiplicities; every
/// pair passes the corpus length filters.
std::vector<DialoguePair> topical_corpus(const TopicalCorpusSpec& spec);

struct ContextualCorpusSpec {
    int topics = 60;             // one multi-context response per topic
    int contexts_per_topic = 4;
    int context_pool = 18;       // distinct topic words available per context
    int context_len = 10;        // words per context
    uint64_t seed = 7;
};

/// Corpus where sibling contexts share many topic words while responses share
/// almost none with their contexts: contextual matching has a lexical path,
/// query-response matching does not.
std::vector<DialoguePair> contextual_corpus(const ContextualCorpusSpec& spec);

struct AmbiguousCorpusSpec {
    int topics = 30;             // each topic yields a twin pair of groups
    int contexts_per_group = 4;
    int context_pool = 12;
    int context_len = 9;
    uint64_t seed = 7;
};

/// Twin groups share a topic word pool and differ only in a global marker
/// token and the response. One-hot in-batch training keeps pushing apart
/// near-identical twins; a cross-attention teacher grades them instead.
std::vector<DialoguePair> ambiguous_corpus(const AmbiguousCorpusSpec& spec);

/// Distractor pairs with responses disjoint from every other fixture's.
std::vector<DialoguePair> distractor_pairs(int count, int64_t id_start, uint64_t seed);

/// Gaussian blobs with centers on a sphere; rows are the vectors.
Matf clustered_vectors(int n, int dim, int blobs, uint64_t seed);

}  // namespace dialret::testsupport
