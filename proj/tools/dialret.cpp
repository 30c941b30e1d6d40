// Command-line pipeline: build-dataset, train-student, train-teacher,
// distill, build-index, retrieve, evaluate, sweep-db, bench. A JSON config
// (--config) supplies defaults; any same-named flag overrides it. Every
// command takes --seed and reproduces its artifacts byte for byte.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "dialret/config.hpp"
#include "dialret/corpus.hpp"
#include "dialret/dense.hpp"
#include "dialret/eval.hpp"
#include "dialret/models.hpp"
#include "dialret/retrieval.hpp"
#include "dialret/training.hpp"

namespace fs = std::filesystem;
using namespace dialret;

namespace {

std::string workpath(const RunConfig& cfg, const std::string& name) {
    return (fs::path(cfg.workdir) / name).string();
}

void require_file(const std::string& path, const char* what) {
    DIALRET_REQUIRE(fs::exists(path), "missing ", what, ": ", path);
}

Vocabulary load_vocab(const RunConfig& cfg) {
    std::string path = workpath(cfg, "vocab.txt");
    require_file(path, "vocabulary");
    return Vocabulary::load(path);
}

std::vector<TrainGroup> load_train_groups(const RunConfig& cfg) {
    std::string path = workpath(cfg, "train_groups.jsonl");
    require_file(path, "train groups");
    return load_groups_jsonl(path);
}

std::vector<DialoguePair> load_database(const RunConfig& cfg) {
    std::string path = workpath(cfg, "database.jsonl");
    require_file(path, "candidate database");
    return load_pairs_jsonl(path);
}

std::string field_text(const DialoguePair& pair, IndexField field) {
    switch (field) {
        case IndexField::Context: return flatten_context(pair.context);
        case IndexField::Session: return session_text(pair);
        case IndexField::Response: return pair.response;
    }
    fail("invalid field");
}

Role role_for_field(IndexField field) {
    switch (field) {
        case IndexField::Context: return Role::Context;
        case IndexField::Session: return Role::Session;
        case IndexField::Response: return Role::Response;
    }
    fail("invalid field");
}

IndexField field_for_mode(MatchMode mode) {
    switch (mode) {
        case MatchMode::QC: return IndexField::Context;
        case MatchMode::QS: return IndexField::Session;
        case MatchMode::QR: return IndexField::Response;
        case MatchMode::DQS: fail("DQS uses two fields");
    }
    fail("invalid mode");
}

EmbeddingShard embed_field(const StudentModel& student, const Vocabulary& vocab,
                           const std::vector<DialoguePair>& database, IndexField field) {
    Role role = role_for_field(field);
    std::vector<std::pair<int64_t, std::vector<int>>> docs;
    docs.reserve(database.size());
    for (const auto& pair : database) {
        docs.emplace_back(pair.id, tokenize_ids(field_text(pair, field), vocab));
    }
    return precompute(student.tower(role), docs);
}

Embedding encode_query(const StudentModel& student, const Vocabulary& vocab,
                       const DialoguePair& query) {
    return student.encode(Role::Query,
                          tokenize_ids(flatten_context(query.context), vocab));
}

/// Everything a retrieve/bench invocation needs, resolved lazily from the
/// flag set so each backend only loads what it uses.
struct RetrieveArgs {
    std::string mode = "qs";
    std::string backend = "dense";  // sparse | dense | ivf
    int k = 20;
    int nprobe = 0;
    double lambda = 1.0;
    int k_prime = 0;
    std::string fusion = "exact";  // DQS: exact | fused
    std::string index_path;        // sparse index
    std::string shard_path;        // dense shard (non-DQS)
    std::string ivf_path;          // ivf index (non-DQS)
    std::string context_shard_path, response_shard_path;
    std::string context_ivf_path, response_ivf_path;
    std::string student_path;
};

void add_retrieve_options(CLI::App* cmd, RetrieveArgs& args) {
    cmd->add_option("--mode", args.mode, "matching mode: qc, qs, qr or dqs");
    cmd->add_option("--backend", args.backend, "sparse, dense or ivf");
    cmd->add_option("--k", args.k, "result list size");
    cmd->add_option("--nprobe", args.nprobe, "IVF lists to probe (0 = sqrt heuristic)");
    cmd->add_option("--lambda", args.lambda, "DQS response weight");
    cmd->add_option("--kprime", args.k_prime, "DQS fused per-side depth (0 = 10*k)");
    cmd->add_option("--fusion", args.fusion, "DQS serving mode: exact or fused");
    cmd->add_option("--index", args.index_path, "sparse index file");
    cmd->add_option("--shard", args.shard_path, "embedding shard file");
    cmd->add_option("--ivf", args.ivf_path, "IVF index file");
    cmd->add_option("--context-shard", args.context_shard_path, "DQS context shard");
    cmd->add_option("--response-shard", args.response_shard_path, "DQS response shard");
    cmd->add_option("--context-ivf", args.context_ivf_path, "DQS context IVF index");
    cmd->add_option("--response-ivf", args.response_ivf_path, "DQS response IVF index");
    cmd->add_option("--student", args.student_path, "student checkpoint (dense backends)");
}

/// Loaded retrieval state shared by retrieve and bench.
struct Retriever {
    RunConfig cfg;
    RetrieveArgs args;
    MatchMode mode = MatchMode::QS;
    std::optional<Vocabulary> vocab;
    std::optional<StudentModel> student;
    std::optional<InvertedIndex> sparse;
    std::optional<EmbeddingShard> shard;
    std::optional<IvfIndex> ivf;
    std::optional<EmbeddingShard> ctx_shard, resp_shard;
    std::optional<IvfIndex> ctx_ivf, resp_ivf;

    static Retriever open(const RunConfig& cfg, const RetrieveArgs& args);
    RetrievalResult run(const CandidateCatalog& catalog, const DialoguePair& query,
                        SearchStats* stats = nullptr) const;
};

Retriever Retriever::open(const RunConfig& cfg, const RetrieveArgs& args) {
    Retriever r;
    r.cfg = cfg;
    r.args = args;
    r.mode = parse_mode(args.mode);
    bool dense_backend = args.backend == "dense" || args.backend == "ivf";
    DIALRET_REQUIRE(args.backend == "sparse" || dense_backend,
                    "unknown backend \"", args.backend, "\"");
    DIALRET_REQUIRE(!(r.mode == MatchMode::DQS && args.backend == "sparse"),
                    "DQS has no sparse backend");
    r.vocab = load_vocab(cfg);

    auto load_student = [&]() {
        std::string path = args.student_path.empty()
                               ? workpath(cfg, "student_" + args.mode + ".ckpt")
                               : args.student_path;
        require_file(path, "student checkpoint");
        StudentModel model = StudentModel::load(path);
        DIALRET_REQUIRE(model.config().vocab_size == r.vocab->size(),
                        "checkpoint/vocabulary conflict: checkpoint ", path, " has V = ",
                        model.config().vocab_size, ", vocab.txt has V = ", r.vocab->size());
        DIALRET_REQUIRE(mode_name(model.mode()) == args.mode, "student checkpoint ", path,
                        " was trained for mode ", mode_name(model.mode()),
                        " but --mode is ", args.mode);
        return model;
    };

    if (r.mode == MatchMode::DQS) {
        std::string ctx_path = args.context_shard_path.empty()
                                   ? workpath(cfg, "db_context.emb")
                                   : args.context_shard_path;
        std::string resp_path = args.response_shard_path.empty()
                                    ? workpath(cfg, "db_response.emb")
                                    : args.response_shard_path;
        require_file(ctx_path, "context shard");
        require_file(resp_path, "response shard");
        r.ctx_shard = EmbeddingShard::load(ctx_path);
        r.resp_shard = EmbeddingShard::load(resp_path);
        if (args.backend == "ivf") {
            std::string ci = args.context_ivf_path.empty() ? workpath(cfg, "db_context.ivf")
                                                           : args.context_ivf_path;
            std::string ri = args.response_ivf_path.empty()
                                 ? workpath(cfg, "db_response.ivf")
                                 : args.response_ivf_path;
            require_file(ci, "context IVF index");
            require_file(ri, "response IVF index");
            r.ctx_ivf = IvfIndex::load(ci);
            r.resp_ivf = IvfIndex::load(ri);
        }
        r.student = load_student();
    } else if (args.backend == "sparse") {
        IndexField field = field_for_mode(r.mode);
        std::string path = args.index_path.empty()
                               ? workpath(cfg, "bm25_" + field_name(field) + ".idx")
                               : args.index_path;
        require_file(path, "sparse index");
        r.sparse = InvertedIndex::load(path);
        DIALRET_REQUIRE(r.sparse->field() == field, "sparse index ", path,
                        " was built over the ", field_name(r.sparse->field()),
                        " field but mode ", args.mode, " needs ", field_name(field));
    } else {
        IndexField field = field_for_mode(r.mode);
        std::string shard_path = args.shard_path.empty()
                                     ? workpath(cfg, "db_" + field_name(field) + ".emb")
                                     : args.shard_path;
        require_file(shard_path, "embedding shard");
        r.shard = EmbeddingShard::load(shard_path);
        if (args.backend == "ivf") {
            std::string ivf_path = args.ivf_path.empty()
                                       ? workpath(cfg, "db_" + field_name(field) + ".ivf")
                                       : args.ivf_path;
            require_file(ivf_path, "IVF index");
            r.ivf = IvfIndex::load(ivf_path);
        }
        r.student = load_student();
        DIALRET_REQUIRE(r.shard->dim() == r.student->config().output_dim,
                        "shard/checkpoint conflict: shard ", shard_path, " has dim ",
                        r.shard->dim(), ", student outputs dim ",
                        r.student->config().output_dim);
    }
    return r;
}

RetrievalResult Retriever::run(const CandidateCatalog& catalog, const DialoguePair& query,
                               SearchStats* stats) const {
    if (mode != MatchMode::DQS && args.backend == "sparse") {
        return retrieve_sparse(*sparse, catalog, tokenize(flatten_context(query.context)),
                               args.k);
    }
    Embedding q = encode_query(*student, *vocab, query);
    if (mode == MatchMode::DQS) {
        DqsIndexes indexes;
        indexes.context_shard = &*ctx_shard;
        indexes.response_shard = &*resp_shard;
        indexes.context_ivf = ctx_ivf ? &*ctx_ivf : nullptr;
        indexes.response_ivf = resp_ivf ? &*resp_ivf : nullptr;
        indexes.lambda = args.lambda;
        indexes.nprobe = args.nprobe;
        if (args.fusion == "exact") {
            return retrieve_dqs_exact(indexes, catalog, q, args.k, stats);
        }
        DIALRET_REQUIRE(args.fusion == "fused", "unknown DQS fusion mode \"", args.fusion,
                        "\"");
        int k_prime = args.k_prime > 0 ? args.k_prime : cfg.fusion_multiplier * args.k;
        return retrieve_dqs_fused(indexes, catalog, q, args.k, k_prime, stats);
    }
    std::string tag = args.backend + "-" + field_name(field_for_mode(mode));
    if (args.backend == "ivf") {
        int nprobe = args.nprobe > 0 ? args.nprobe : ivf->default_nprobe();
        return retrieve_dense_ivf(*ivf, catalog, q, args.k, nprobe, tag, stats);
    }
    return retrieve_dense_exact(*shard, catalog, q, args.k, tag, stats);
}

// ---------------------------------------------------------------------------
// Commands

int cmd_build_dataset(const RunConfig& cfg) {
    require_file(cfg.corpus, "corpus file");
    fs::create_directories(cfg.workdir);
    auto raw = load_pairs_jsonl(cfg.corpus);
    auto filtered = filter_pairs(raw);
    DIALRET_REQUIRE(!filtered.empty(), "no pairs survive the length filters");

    SplitConfig split_cfg;
    split_cfg.mc_size = cfg.mc_size;
    split_cfg.sc_size = cfg.sc_size;
    split_cfg.train_ratio = cfg.train_ratio;
    split_cfg.max_contexts = cfg.max_contexts;
    split_cfg.seed = cfg.seed;
    SplitResult split = build_splits(filtered, split_cfg);
    check_split(split, filtered, split_cfg);

    std::vector<std::vector<std::string>> token_lists;
    token_lists.reserve(filtered.size());
    for (const auto& pair : filtered) {
        token_lists.push_back(tokenize(session_text(pair)));
    }
    Vocabulary vocab = Vocabulary::build(token_lists, cfg.min_freq);

    save_pairs_jsonl(split.mc_test, workpath(cfg, "mc.jsonl"));
    save_pairs_jsonl(split.sc_test, workpath(cfg, "sc.jsonl"));
    save_pairs_jsonl(split.database, workpath(cfg, "database.jsonl"));
    save_groups_jsonl(split.train_groups, workpath(cfg, "train_groups.jsonl"));
    vocab.save(workpath(cfg, "vocab.txt"));

    std::cout << "dataset: " << filtered.size() << " filtered pairs -> mc "
              << split.mc_test.size() << ", sc " << split.sc_test.size() << ", database "
              << split.database.size() << ", train groups " << split.train_groups.size()
              << ", vocab " << vocab.size() << "\n";
    return 0;
}

int cmd_train_student(const RunConfig& cfg, const std::string& mode_str,
                      const std::string& out, const std::string& log_path) {
    Vocabulary vocab = load_vocab(cfg);
    auto groups = load_train_groups(cfg);
    MatchMode mode = parse_mode(mode_str);
    ModelConfig mc = cfg.model;
    mc.vocab_size = vocab.size();
    mc.seed = cfg.seed;
    StudentModel model = StudentModel::init(mode, mc);
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    TrainResult result = train_student(model, groups, vocab, tc);
    std::string out_path = out.empty() ? workpath(cfg, "student_" + mode_str + ".ckpt") : out;
    model.save(out_path);
    if (!log_path.empty()) save_train_log(result.log, log_path);
    std::cout << "student " << mode_str << ": " << result.log.size() << " steps, final loss "
              << (result.log.empty() ? 0.0 : result.log.back().loss) << " -> " << out_path
              << "\n";
    return 0;
}

int cmd_train_teacher(const RunConfig& cfg, const std::string& mode_str,
                      const std::string& out, const std::string& log_path) {
    Vocabulary vocab = load_vocab(cfg);
    auto groups = load_train_groups(cfg);
    TeacherMode mode = parse_teacher_mode(mode_str);
    ModelConfig mc = cfg.model;
    mc.vocab_size = vocab.size();
    mc.seed = cfg.seed;
    CrossScorer teacher = CrossScorer::init(mode, mc);
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    TrainResult result = train_teacher(teacher, groups, vocab, tc);
    std::string out_path = out.empty() ? workpath(cfg, "teacher_" + mode_str + ".ckpt") : out;
    teacher.save(out_path);
    if (!log_path.empty()) save_train_log(result.log, log_path);
    std::cout << "teacher " << mode_str << ": " << result.log.size() << " steps, final loss "
              << (result.log.empty() ? 0.0 : result.log.back().loss) << " -> " << out_path
              << "\n";
    return 0;
}

int cmd_distill(const RunConfig& cfg, const std::string& student_path,
                const std::string& teacher_path, const std::string& teacher_resp_path,
                const std::string& out, const std::string& log_path) {
    Vocabulary vocab = load_vocab(cfg);
    auto groups = load_train_groups(cfg);
    require_file(student_path, "student checkpoint");
    require_file(teacher_path, "teacher checkpoint");
    StudentModel student = StudentModel::load(student_path);
    CrossScorer teacher = CrossScorer::load(teacher_path);
    std::vector<CrossScorer*> teachers = {&teacher};
    std::optional<CrossScorer> teacher_resp;
    if (!teacher_resp_path.empty()) {
        require_file(teacher_resp_path, "response teacher checkpoint");
        teacher_resp = CrossScorer::load(teacher_resp_path);
        teachers.push_back(&*teacher_resp);
    }
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    TrainResult result = distill_student(student, teachers, groups, vocab, tc);
    std::string out_path = out.empty()
                               ? workpath(cfg, "student_" + mode_name(student.mode()) +
                                                   "_distilled.ckpt")
                               : out;
    student.save(out_path);
    if (!log_path.empty()) save_train_log(result.log, log_path);
    std::cout << "distilled " << mode_name(student.mode()) << ": " << result.log.size()
              << " steps, final loss "
              << (result.log.empty() ? 0.0 : result.log.back().loss) << " -> " << out_path
              << "\n";
    return 0;
}

int cmd_build_index(const RunConfig& cfg, const std::string& type,
                    const std::string& field_str, const std::string& student_path,
                    const std::string& shard_path, const std::string& out) {
    if (type == "ivf") {
        std::string src = shard_path.empty() ? workpath(cfg, "db_" + field_str + ".emb")
                                             : shard_path;
        require_file(src, "embedding shard");
        EmbeddingShard shard = EmbeddingShard::load(src);
        IvfIndex index = IvfIndex::build(shard, cfg.ivf_k, cfg.seed, cfg.kmeans_iters);
        std::string out_path = out.empty() ? workpath(cfg, "db_" + field_str + ".ivf") : out;
        index.save(out_path);
        std::cout << "ivf index over " << index.size() << " vectors, " << index.num_lists()
                  << " lists -> " << out_path << "\n";
        return 0;
    }
    IndexField field = parse_field(field_str);
    auto database = load_database(cfg);
    if (type == "sparse") {
        std::vector<std::pair<int64_t, std::vector<std::string>>> docs;
        docs.reserve(database.size());
        for (const auto& pair : database) {
            docs.emplace_back(pair.id, tokenize(field_text(pair, field)));
        }
        InvertedIndex index = InvertedIndex::build(docs, field);
        std::string out_path =
            out.empty() ? workpath(cfg, "bm25_" + field_str + ".idx") : out;
        index.save(out_path);
        std::cout << "sparse index over " << index.doc_count() << " docs -> " << out_path
                  << "\n";
        return 0;
    }
    DIALRET_REQUIRE(type == "dense", "unknown index type \"", type,
                    "\" (expected sparse, dense or ivf)");
    Vocabulary vocab = load_vocab(cfg);
    require_file(student_path, "student checkpoint");
    StudentModel student = StudentModel::load(student_path);
    DIALRET_REQUIRE(student.config().vocab_size == vocab.size(),
                    "checkpoint/vocabulary conflict: checkpoint ", student_path,
                    " has V = ", student.config().vocab_size, ", vocab.txt has V = ",
                    vocab.size());
    EmbeddingShard shard = embed_field(student, vocab, database, field);
    std::string out_path = out.empty() ? workpath(cfg, "db_" + field_str + ".emb") : out;
    shard.save(out_path);
    std::cout << "dense shard " << shard.size() << " x " << shard.dim() << " -> " << out_path
              << "\n";
    return 0;
}

int cmd_retrieve(const RunConfig& cfg, const RetrieveArgs& args,
                 const std::string& queries_path, const std::string& out) {
    Retriever retriever = Retriever::open(cfg, args);
    std::string qpath = queries_path.empty() ? workpath(cfg, "mc.jsonl") : queries_path;
    require_file(qpath, "query file");
    auto queries = load_pairs_jsonl(qpath);
    auto database = load_database(cfg);
    CandidateCatalog catalog(database);
    std::vector<RetrievalResult> results;
    std::vector<int64_t> query_ids;
    results.reserve(queries.size());
    for (const auto& query : queries) {
        results.push_back(retriever.run(catalog, query));
        query_ids.push_back(query.id);
    }
    std::string out_path =
        out.empty() ? workpath(cfg, "results_" + args.mode + "_" + args.backend + ".jsonl")
                    : out;
    save_results_jsonl(results, query_ids, out_path);
    std::cout << "retrieved top-" << args.k << " for " << queries.size() << " queries -> "
              << out_path << "\n";
    return 0;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& results_path,
                 const std::string& queries_path, const std::string& teacher_path,
                 const std::string& out) {
    require_file(results_path, "results file");
    LoadedResults loaded = load_results_jsonl(results_path);
    std::string qpath = queries_path.empty() ? workpath(cfg, "mc.jsonl") : queries_path;
    require_file(qpath, "query file");
    auto queries = load_pairs_jsonl(qpath);
    std::map<int64_t, const DialoguePair*> by_id;
    for (const auto& pair : queries) by_id[pair.id] = &pair;
    std::vector<std::string> golds;
    std::vector<const DialoguePair*> query_pairs;
    for (int64_t id : loaded.query_ids) {
        auto it = by_id.find(id);
        DIALRET_REQUIRE(it != by_id.end(), "result query id ", id, " not in ", qpath);
        golds.push_back(it->second->response);
        query_pairs.push_back(it->second);
    }

    Vocabulary vocab = load_vocab(cfg);
    auto groups = load_train_groups(cfg);
    std::vector<std::vector<int>> streams;
    for (const auto& group : groups) {
        for (const auto& ctx : group.contexts) {
            std::vector<int> stream = tokenize_ids(flatten_context(ctx), vocab);
            stream.push_back(kSepId);
            auto resp = tokenize_ids(group.response, vocab);
            stream.insert(stream.end(), resp.begin(), resp.end());
            streams.push_back(std::move(stream));
        }
    }
    ConditionalLm lm = ConditionalLm::build(streams, vocab.size(), 0.1);

    std::optional<CrossScorer> teacher;
    if (!teacher_path.empty()) {
        require_file(teacher_path, "teacher checkpoint");
        teacher = CrossScorer::load(teacher_path);
        DIALRET_REQUIRE(teacher->config().vocab_size == vocab.size(),
                        "checkpoint/vocabulary conflict: checkpoint ", teacher_path,
                        " has V = ", teacher->config().vocab_size, ", vocab.txt has V = ",
                        vocab.size());
    }

    EvalReport report;
    report.coverage = coverage_at_k(loaded.results, golds, cfg.eval_ks);
    for (int k : cfg.eval_ks) {
        double ppl_total = 0.0;
        double rel_total = 0.0;
        int ppl_queries = 0;
        for (size_t qi = 0; qi < loaded.results.size(); ++qi) {
            auto query_tokens =
                tokenize_ids(flatten_context(query_pairs[qi]->context), vocab);
            if (query_tokens.empty()) continue;
            std::vector<std::vector<int>> responses;
            const auto& hits = loaded.results[qi].hits;
            for (size_t r = 0; r < hits.size() && r < static_cast<size_t>(k); ++r) {
                responses.push_back(tokenize_ids(hits[r].response, vocab));
            }
            if (responses.empty()) continue;
            auto ppl = proxy_perplexity_at_k(lm, query_tokens, responses);
            ppl_total += ppl.mean_ppl;
            report.ppl_skipped_empty += ppl.skipped_empty;
            ++ppl_queries;
            if (teacher) {
                rel_total += proxy_relevance_at_k(*teacher, query_tokens, responses);
            }
        }
        if (ppl_queries > 0) {
            report.ppl[k] = ppl_total / ppl_queries;
            if (teacher) report.relevance[k] = rel_total / ppl_queries;
        }
    }
    report.config_echo["results"] = results_path;
    report.config_echo["queries"] = qpath;
    report.config_echo["mode"] = loaded.results.empty() ? "" : loaded.results.front().mode;

    std::string out_path = out.empty() ? workpath(cfg, "report.json") : out;
    std::ofstream out_file(out_path);
    DIALRET_REQUIRE(out_file.good(), "cannot open report for writing: ", out_path);
    out_file << report.to_json() << "\n";
    std::cout << report.pretty();
    std::cout << "report -> " << out_path << "\n";
    return 0;
}

int cmd_sweep_db(const RunConfig& cfg, const RetrieveArgs& args,
                 const std::string& queries_path, const std::string& distractors_path,
                 std::vector<size_t> sizes, const std::string& out) {
    DIALRET_REQUIRE(!sizes.empty(), "sweep needs --sizes");
    DIALRET_REQUIRE(args.backend == "dense" && parse_mode(args.mode) != MatchMode::DQS,
                    "sweep-db supports the exact dense backend for qc/qs/qr");
    require_file(distractors_path, "distractor corpus");
    std::string qpath = queries_path.empty() ? workpath(cfg, "mc.jsonl") : queries_path;
    require_file(qpath, "query file");

    Vocabulary vocab = load_vocab(cfg);
    auto queries = load_pairs_jsonl(qpath);
    auto database = load_database(cfg);
    auto distractors = load_pairs_jsonl(distractors_path);
    DIALRET_REQUIRE(sizes.back() <= distractors.size(), "sweep wants ", sizes.back(),
                    " distractors but ", distractors_path, " holds ", distractors.size());

    std::string student_path = args.student_path.empty()
                                   ? workpath(cfg, "student_" + args.mode + ".ckpt")
                                   : args.student_path;
    require_file(student_path, "student checkpoint");
    StudentModel student = StudentModel::load(student_path);
    IndexField field = field_for_mode(parse_mode(args.mode));

    std::vector<std::string> golds;
    std::vector<Embedding> query_vecs;
    for (const auto& query : queries) {
        golds.push_back(query.response);
        query_vecs.push_back(encode_query(student, vocab, query));
    }

    // The largest database embeds once; smaller ones reuse prefixes of the
    // distractor block appended to the base.
    std::vector<DialoguePair> full = database;
    full.insert(full.end(), distractors.begin(),
                distractors.begin() + static_cast<long>(sizes.back()));
    CandidateCatalog catalog(full);
    EmbeddingShard full_shard = embed_field(student, vocab, full, field);

    auto factory = [&](size_t size) {
        auto shard = std::make_shared<EmbeddingShard>();
        size_t total = database.size() + size;
        shard->doc_ids.assign(full_shard.doc_ids.begin(),
                              full_shard.doc_ids.begin() + static_cast<long>(total));
        shard->vectors = full_shard.vectors.topRows(static_cast<Eigen::Index>(total));
        return [&, shard](size_t qi) {
            return retrieve_dense_exact(*shard, catalog, query_vecs[qi], args.k,
                                        "dense-" + field_name(field));
        };
    };
    auto coverages = db_size_sweep(factory, sizes, queries.size(), golds, args.k);

    nlohmann::json obj;
    obj["k"] = args.k;
    obj["base_database"] = database.size();
    nlohmann::json points = nlohmann::json::array();
    for (size_t i = 0; i < sizes.size(); ++i) {
        points.push_back({{"distractors", sizes[i]}, {"coverage", coverages[i]}});
    }
    obj["points"] = std::move(points);
    std::string out_path = out.empty() ? workpath(cfg, "sweep.json") : out;
    std::ofstream out_file(out_path);
    out_file << obj.dump(2) << "\n";
    for (size_t i = 0; i < sizes.size(); ++i) {
        std::cout << "coverage@" << args.k << " with " << sizes[i]
                  << " distractors: " << coverages[i] << "\n";
    }
    std::cout << "sweep -> " << out_path << "\n";
    return 0;
}

int cmd_bench(const RunConfig& cfg, const RetrieveArgs& args,
              const std::string& queries_path, int repeats, int batch_size,
              const std::string& out) {
    Retriever retriever = Retriever::open(cfg, args);
    std::string qpath = queries_path.empty() ? workpath(cfg, "mc.jsonl") : queries_path;
    require_file(qpath, "query file");
    auto queries = load_pairs_jsonl(qpath);
    DIALRET_REQUIRE(!queries.empty(), "bench needs at least one query");
    auto database = load_database(cfg);
    CandidateCatalog catalog(database);

    size_t cursor = 0;
    SearchStats stats;
    auto run_batch = [&] {
        for (int i = 0; i < batch_size; ++i) {
            retriever.run(catalog, queries[cursor % queries.size()], &stats);
            ++cursor;
        }
    };
    LatencyStats latency = bench_latency(run_batch, repeats, batch_size);

    nlohmann::json obj;
    obj["mode"] = args.mode;
    obj["backend"] = args.backend;
    obj["k"] = args.k;
    obj["batch_size"] = latency.batch_size;
    obj["repeats"] = latency.repeats;
    obj["mean_ms_per_batch"] = latency.mean_ms;
    obj["stddev_ms_per_batch"] = latency.stddev_ms;
    obj["vectors_scanned"] = stats.vectors_scanned;
    std::string out_path = out.empty() ? workpath(cfg, "bench.json") : out;
    std::ofstream out_file(out_path);
    out_file << obj.dump(2) << "\n";
    std::cout << "latency: " << latency.mean_ms << " +- " << latency.stddev_ms
              << " ms per batch of " << batch_size << " -> " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"coarse-grained dialogue response retrieval pipeline"};
    app.require_subcommand(1);

    // --config is applied before the flag parse so flags override the file.
    RunConfig cfg;
    for (int i = 1; i + 1 < argc; ++i) {
        if (std::string(argv[i]) == "--config") {
            try {
                cfg = RunConfig::from_json_file(argv[i + 1]);
            } catch (const std::exception& e) {
                std::cerr << "error: " << e.what() << "\n";
                return 1;
            }
        }
    }
    std::string config_dummy;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_dummy, "JSON config file");
        cmd->add_option("--workdir", cfg.workdir, "artifact directory");
        cmd->add_option("--seed", cfg.seed, "RNG seed");
    };

    auto* build_dataset = app.add_subcommand("build-dataset",
                                             "filter a corpus and build the splits");
    add_common(build_dataset);
    build_dataset->add_option("--corpus", cfg.corpus, "JSON-lines corpus");
    build_dataset->add_option("--mc-size", cfg.mc_size, "MC test set size");
    build_dataset->add_option("--sc-size", cfg.sc_size, "SC test set size");
    build_dataset->add_option("--train-ratio", cfg.train_ratio,
                              "fraction of multi-context responses reserved for training");
    build_dataset->add_option("--max-contexts", cfg.max_contexts,
                              "MC source-multiplicity cap");
    build_dataset->add_option("--min-freq", cfg.min_freq, "vocabulary frequency cutoff");

    std::string mode = "qs", out, log_path;
    auto add_model_options = [&](CLI::App* cmd) {
        cmd->add_option("--embed-dim", cfg.model.embed_dim, "token embedding width");
        cmd->add_option("--dim", cfg.model.output_dim, "tower output width");
        cmd->add_option("--head-dim", cfg.model.head_dim, "teacher head width");
        cmd->add_option("--max-joint-len", cfg.model.max_joint_len,
                        "teacher position table size");
        cmd->add_flag("--share-encoders", cfg.model.share_encoders,
                      "share the query tower with the candidate tower");
    };
    auto add_train_options = [&](CLI::App* cmd) {
        cmd->add_option("--epochs", cfg.train.epochs, "training epochs");
        cmd->add_option("--batch-size", cfg.train.batch_size, "batch size");
        cmd->add_option("--lr", cfg.train.lr, "Adam learning rate");
        cmd->add_option("--warmup", cfg.train.warmup_steps, "linear warmup steps");
        cmd->add_option("--out", out, "output checkpoint");
        cmd->add_option("--log", log_path, "JSON-lines step log");
    };

    auto* train_student_cmd =
        app.add_subcommand("train-student", "contrastive multi-tower training");
    add_common(train_student_cmd);
    add_model_options(train_student_cmd);
    add_train_options(train_student_cmd);
    train_student_cmd->add_option("--mode", mode, "qc, qs, qr or dqs");

    auto* train_teacher_cmd =
        app.add_subcommand("train-teacher", "one-tower BCE teacher training");
    add_common(train_teacher_cmd);
    add_model_options(train_teacher_cmd);
    add_train_options(train_teacher_cmd);
    train_teacher_cmd->add_option("--mode", mode, "qc, qs or qr");

    std::string student_path, teacher_path, teacher_resp_path;
    auto* distill_cmd = app.add_subcommand(
        "distill", "fine-to-coarse distillation from one-tower teachers");
    add_common(distill_cmd);
    add_train_options(distill_cmd);
    distill_cmd->add_option("--student", student_path, "student checkpoint to distill");
    distill_cmd->add_option("--teacher", teacher_path,
                            "teacher checkpoint (QC teacher for DQS)");
    distill_cmd->add_option("--teacher-response", teacher_resp_path,
                            "QR teacher checkpoint (DQS only)");
    distill_cmd->add_option("--temperature", cfg.train.temperature,
                            "distillation temperature");
    distill_cmd->add_option("--rate", cfg.train.distill_rate, "KL term weight");
    distill_cmd->add_option("--hard-weight", cfg.train.hard_weight,
                            "one-hot term weight (0 = soft targets only)");

    std::string index_type = "sparse", field_str = "context", shard_path;
    auto* build_index_cmd = app.add_subcommand("build-index",
                                               "build a sparse, dense or IVF index");
    add_common(build_index_cmd);
    build_index_cmd->add_option("--type", index_type, "sparse, dense or ivf");
    build_index_cmd->add_option("--field", field_str, "context, session or response");
    build_index_cmd->add_option("--student", student_path, "student checkpoint (dense)");
    build_index_cmd->add_option("--shard", shard_path, "embedding shard (ivf input)");
    build_index_cmd->add_option("--ivf-k", cfg.ivf_k, "IVF list count (0 = sqrt(n))");
    build_index_cmd->add_option("--kmeans-iters", cfg.kmeans_iters, "Lloyd iterations");
    build_index_cmd->add_option("--out", out, "output index file");

    RetrieveArgs rargs;
    std::string queries_path;
    auto* retrieve_cmd = app.add_subcommand("retrieve", "run a retriever over queries");
    add_common(retrieve_cmd);
    add_retrieve_options(retrieve_cmd, rargs);
    retrieve_cmd->add_option("--queries", queries_path, "query pairs (default mc.jsonl)");
    retrieve_cmd->add_option("--out", out, "output results file");

    std::string results_path;
    auto* evaluate_cmd = app.add_subcommand("evaluate",
                                            "score retrieval results against the gold");
    add_common(evaluate_cmd);
    evaluate_cmd->add_option("--results", results_path, "retrieval results JSON-lines");
    evaluate_cmd->add_option("--queries", queries_path, "query pairs (default mc.jsonl)");
    evaluate_cmd->add_option("--teacher", teacher_path,
                             "teacher checkpoint for proxy relevance");
    evaluate_cmd->add_option("--ks", cfg.eval_ks, "coverage cutoffs");
    evaluate_cmd->add_option("--out", out, "report file");

    std::string distractors_path;
    std::vector<size_t> sizes;
    auto* sweep_cmd = app.add_subcommand("sweep-db",
                                         "coverage across nested database sizes");
    add_common(sweep_cmd);
    add_retrieve_options(sweep_cmd, rargs);
    sweep_cmd->add_option("--queries", queries_path, "query pairs (default mc.jsonl)");
    sweep_cmd->add_option("--distractors", distractors_path, "distractor pair corpus");
    sweep_cmd->add_option("--sizes", sizes, "distractor counts, strictly increasing");
    sweep_cmd->add_option("--out", out, "sweep output file");

    int repeats = 5, batch_size = 32;
    auto* bench_cmd = app.add_subcommand("bench", "retrieval latency benchmark");
    add_common(bench_cmd);
    add_retrieve_options(bench_cmd, rargs);
    bench_cmd->add_option("--queries", queries_path, "query pairs (default mc.jsonl)");
    bench_cmd->add_option("--repeats", repeats, "timed repeats");
    bench_cmd->add_option("--batch-size", batch_size, "queries per batch");
    bench_cmd->add_option("--out", out, "bench output file");

    CLI11_PARSE(app, argc, argv);

    try {
        if (build_dataset->parsed()) return cmd_build_dataset(cfg);
        if (train_student_cmd->parsed()) return cmd_train_student(cfg, mode, out, log_path);
        if (train_teacher_cmd->parsed()) {
            // Teachers default to half the student batch unless given.
            if (train_teacher_cmd->count("--batch-size") == 0 &&
                cfg.train.batch_size == 32) {
                cfg.train.batch_size = 16;
            }
            return cmd_train_teacher(cfg, mode, out, log_path);
        }
        if (distill_cmd->parsed()) {
            return cmd_distill(cfg, student_path, teacher_path, teacher_resp_path, out,
                               log_path);
        }
        if (build_index_cmd->parsed()) {
            return cmd_build_index(cfg, index_type, field_str, student_path, shard_path,
                                   out);
        }
        if (retrieve_cmd->parsed()) return cmd_retrieve(cfg, rargs, queries_path, out);
        if (evaluate_cmd->parsed()) {
            return cmd_evaluate(cfg, results_path, queries_path, teacher_path, out);
        }
        if (sweep_cmd->parsed()) {
            return cmd_sweep_db(cfg, rargs, queries_path, distractors_path, sizes, out);
        }
        if (bench_cmd->parsed()) {
            return cmd_bench(cfg, rargs, queries_path, repeats, batch_size, out);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
