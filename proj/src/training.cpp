#include "dialret/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace dialret {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Batch sampling

std::vector<TokenizedGroup> tokenize_groups(const std::vector<TrainGroup>& groups,
                                            const Vocabulary& vocab) {
    std::vector<TokenizedGroup> out;
    out.reserve(groups.size());
    for (const auto& group : groups) {
        TokenizedGroup tg;
        tg.response = tokenize_ids(group.response, vocab);
        DIALRET_REQUIRE(!tg.response.empty(), "train-group response tokenizes to nothing: \"",
                        group.response, "\"");
        for (const auto& ctx : group.contexts) {
            auto ids = tokenize_ids(flatten_context(ctx), vocab);
            DIALRET_REQUIRE(!ids.empty(), "train-group context tokenizes to nothing");
            tg.contexts.push_back(std::move(ids));
        }
        out.push_back(std::move(tg));
    }
    return out;
}

Batch sample_batch(const std::vector<TokenizedGroup>& groups, int batch_size, Rng& rng) {
    DIALRET_REQUIRE(batch_size >= 2, "batch size must be >= 2 for in-batch negatives, got ",
                    batch_size);
    DIALRET_REQUIRE(groups.size() >= static_cast<size_t>(batch_size),
                    "need at least ", batch_size, " train groups, have ", groups.size());
    std::vector<size_t> order(groups.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);

    Batch batch;
    for (int b = 0; b < batch_size; ++b) {
        const TokenizedGroup& group = groups[order[static_cast<size_t>(b)]];
        std::uniform_int_distribution<size_t> pick(0, group.contexts.size() - 1);
        BatchInstance inst;
        inst.query = group.contexts[pick(rng)];
        inst.pos_context = group.contexts[pick(rng)];  // with replacement
        inst.pos_response = group.response;
        inst.pos_session = inst.pos_context;
        inst.pos_session.push_back(kSepId);
        inst.pos_session.insert(inst.pos_session.end(), group.response.begin(),
                                group.response.end());
        batch.instances.push_back(std::move(inst));
    }
    return batch;
}

// ---------------------------------------------------------------------------
// Losses

ad::Var contrastive_loss(ad::Var scores_row, const std::vector<int>& positive_cols) {
    DIALRET_REQUIRE(!positive_cols.empty(), "contrastive loss needs at least one positive");
    DIALRET_REQUIRE(scores_row.rows() == 1, "contrastive loss expects a 1 x n score row");
    ad::Var pos = ad::gather_cols(scores_row, positive_cols);
    return ad::sub(ad::logsumexp(scores_row), ad::logsumexp(pos));
}

double contrastive_loss_value(const std::vector<double>& pos_scores,
                              const std::vector<double>& neg_scores) {
    DIALRET_REQUIRE(!pos_scores.empty(), "contrastive loss needs at least one positive");
    ad::Tape tape;
    Matd row(1, static_cast<Eigen::Index>(pos_scores.size() + neg_scores.size()));
    std::vector<int> positive_cols;
    for (size_t i = 0; i < pos_scores.size(); ++i) {
        row(0, static_cast<Eigen::Index>(i)) = pos_scores[i];
        positive_cols.push_back(static_cast<int>(i));
    }
    for (size_t i = 0; i < neg_scores.size(); ++i) {
        row(0, static_cast<Eigen::Index>(pos_scores.size() + i)) = neg_scores[i];
    }
    return contrastive_loss(tape.constant(row), positive_cols).scalar();
}

ad::Var teacher_loss(ad::Var logit, double label) {
    DIALRET_REQUIRE(label == 0.0 || label == 1.0, "teacher label must be 0 or 1, got ",
                    label);
    // softplus(z) - y*z == -[y ln(sigmoid) + (1-y) ln(1-sigmoid)]
    ad::Var sp = ad::softplus(logit);
    if (label == 0.0) return sp;
    return ad::sub(sp, logit);
}

double teacher_loss_value(double logit, double label) {
    ad::Tape tape;
    return teacher_loss(tape.constant(Matd::Constant(1, 1, logit)), label).scalar();
}

ad::Var soft_target_kl(ad::Var student_row, const RowVec<double>& teacher_row,
                       double temperature) {
    DIALRET_REQUIRE(temperature > 0.0, "temperature must be positive, got ", temperature);
    DIALRET_REQUIRE(student_row.cols() == teacher_row.cols(),
                    "score length mismatch: student ", student_row.cols(), " vs teacher ",
                    teacher_row.cols());
    ad::Tape* tape = student_row.tape();
    RowVec<double> soft_t = softmax_rows((teacher_row / temperature).eval()).row(0);
    double teacher_entropy_term = 0.0;  // sum p ln p
    for (Eigen::Index i = 0; i < soft_t.cols(); ++i) {
        if (soft_t(i) > 0.0) teacher_entropy_term += soft_t(i) * std::log(soft_t(i));
    }
    ad::Var student_log_soft =
        ad::log_softmax(ad::scalar_mul(student_row, 1.0 / temperature));
    // KL = sum p_T ln p_T - sum p_T ln p_S
    ad::Var cross = ad::matmul(tape->constant(soft_t), ad::transpose(student_log_soft));
    ad::Var kl = ad::sub(tape->constant(Matd::Constant(1, 1, teacher_entropy_term)), cross);
    return ad::scalar_mul(kl, temperature * temperature);
}

ad::Var distill_loss(ad::Var student_row, const RowVec<double>& teacher_row,
                     int positive_col, double temperature, double rate, double hard_weight) {
    ad::Var hard = contrastive_loss(student_row, {positive_col});
    ad::Var kl = soft_target_kl(student_row, teacher_row, temperature);
    return ad::add(ad::scalar_mul(hard, hard_weight), ad::scalar_mul(kl, rate));
}

double distill_loss_value(const std::vector<double>& student_scores,
                          const std::vector<double>& teacher_scores, int positive_col,
                          double temperature, double rate, double hard_weight) {
    DIALRET_REQUIRE(student_scores.size() == teacher_scores.size(),
                    "score length mismatch: student ", student_scores.size(), " vs teacher ",
                    teacher_scores.size());
    ad::Tape tape;
    Matd s(1, static_cast<Eigen::Index>(student_scores.size()));
    RowVec<double> t(static_cast<Eigen::Index>(teacher_scores.size()));
    for (size_t i = 0; i < student_scores.size(); ++i) {
        s(0, static_cast<Eigen::Index>(i)) = student_scores[i];
        t(static_cast<Eigen::Index>(i)) = teacher_scores[i];
    }
    return distill_loss(tape.constant(s), t, positive_col, temperature, rate, hard_weight)
        .scalar();
}

// ---------------------------------------------------------------------------
// Training loops

namespace {

/// Key role of the in-batch candidates for a student mode (DQS handled apart).
Role key_role(MatchMode mode) {
    switch (mode) {
        case MatchMode::QC: return Role::Context;
        case MatchMode::QS: return Role::Session;
        case MatchMode::QR: return Role::Response;
        case MatchMode::DQS: fail("DQS has two key roles");
    }
    fail("invalid mode");
}

const std::vector<int>& key_tokens(const BatchInstance& inst, Role role) {
    switch (role) {
        case Role::Context: return inst.pos_context;
        case Role::Session: return inst.pos_session;
        case Role::Response: return inst.pos_response;
        case Role::Query: return inst.query;
    }
    fail("invalid role");
}

/// B x d matrix of tape encodings for one tower over a token list per row.
ad::Var encode_matrix(ad::Tape& tape, TowerEncoder& tower,
                      const std::vector<const std::vector<int>*>& token_lists) {
    std::vector<ad::Var> rows;
    rows.reserve(token_lists.size());
    for (const auto* tokens : token_lists) {
        rows.push_back(tower.encode_on(tape, *tokens));
    }
    return ad::concat_rows(rows);
}

ad::Var mean_of(ad::Tape& tape, const std::vector<ad::Var>& losses) {
    (void)tape;
    return ad::row_mean(ad::concat_rows(losses));
}

int64_t steps_per_epoch(size_t group_count, int batch_size) {
    return std::max<int64_t>(1, static_cast<int64_t>(group_count) / batch_size);
}

void check_finite_loss(double loss, int64_t step, const char* what) {
    DIALRET_REQUIRE(std::isfinite(loss), "non-finite ", what, " loss ", loss, " at step ",
                    step, "; aborting");
}

/// 1 x 2B row [context scores, response scores] for one DQS query.
ad::Var dqs_score_row(ad::Var ctx_scores, ad::Var resp_scores, int row) {
    ad::Var ctx_row = ad::gather_rows(ctx_scores, {row});
    ad::Var resp_row = ad::gather_rows(resp_scores, {row});
    return ad::transpose(
        ad::concat_rows({ad::transpose(ctx_row), ad::transpose(resp_row)}));
}

}  // namespace

TrainResult train_student(StudentModel& model, const std::vector<TrainGroup>& groups,
                          const Vocabulary& vocab, const TrainConfig& cfg) {
    auto tokenized = tokenize_groups(groups, vocab);
    Rng rng(cfg.seed);
    ad::AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8, cfg.warmup_steps};
    auto params = model.parameters();

    TrainResult result;
    const int64_t steps = steps_per_epoch(tokenized.size(), cfg.batch_size) * cfg.epochs;
    for (int64_t step = 1; step <= steps; ++step) {
        Batch batch = sample_batch(tokenized, cfg.batch_size, rng);
        const int b = batch.size();

        ad::Tape tape;
        std::vector<const std::vector<int>*> queries;
        for (const auto& inst : batch.instances) queries.push_back(&inst.query);
        ad::Var q = encode_matrix(tape, model.tower(Role::Query), queries);

        std::vector<ad::Var> losses;
        if (model.mode() == MatchMode::DQS) {
            std::vector<const std::vector<int>*> ctxs, resps;
            for (const auto& inst : batch.instances) {
                ctxs.push_back(&inst.pos_context);
                resps.push_back(&inst.pos_response);
            }
            ad::Var c = encode_matrix(tape, model.tower(Role::Context), ctxs);
            ad::Var r = encode_matrix(tape, model.tower(Role::Response), resps);
            ad::Var ctx_scores = ad::matmul(q, ad::transpose(c));
            ad::Var resp_scores = ad::matmul(q, ad::transpose(r));
            for (int i = 0; i < b; ++i) {
                ad::Var row = dqs_score_row(ctx_scores, resp_scores, i);
                losses.push_back(contrastive_loss(row, {i, b + i}));
            }
        } else {
            Role role = key_role(model.mode());
            std::vector<const std::vector<int>*> keys;
            for (const auto& inst : batch.instances) keys.push_back(&key_tokens(inst, role));
            ad::Var k = encode_matrix(tape, model.tower(role), keys);
            ad::Var scores = ad::matmul(q, ad::transpose(k));
            for (int i = 0; i < b; ++i) {
                losses.push_back(contrastive_loss(ad::gather_rows(scores, {i}), {i}));
            }
        }
        ad::Var loss = mean_of(tape, losses);
        double loss_value = loss.scalar();
        check_finite_loss(loss_value, step, "student");

        for (auto* p : params) p->zero_grad();
        tape.backward(loss);
        ad::adam_step(params, adam);

        double warm = adam.warmup_steps > 0
                          ? std::min(1.0, static_cast<double>(step) /
                                              static_cast<double>(adam.warmup_steps))
                          : 1.0;
        result.log.push_back({step, loss_value, loss_value, 0.0, cfg.lr * warm});
    }
    return result;
}

TrainResult train_teacher(CrossScorer& scorer, const std::vector<TrainGroup>& groups,
                          const Vocabulary& vocab, const TrainConfig& cfg) {
    auto tokenized = tokenize_groups(groups, vocab);
    DIALRET_REQUIRE(tokenized.size() >= 2, "teacher training needs >= 2 groups to draw "
                    "negatives, have ", tokenized.size());
    Rng rng(cfg.seed);
    ad::AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8, cfg.warmup_steps};
    auto params = scorer.parameters();

    auto candidate_of = [&](const TokenizedGroup& group, Rng& r) -> std::vector<int> {
        std::uniform_int_distribution<size_t> pick(0, group.contexts.size() - 1);
        switch (scorer.mode()) {
            case TeacherMode::QC: return group.contexts[pick(r)];
            case TeacherMode::QR: return group.response;
            case TeacherMode::QS: {
                std::vector<int> session = group.contexts[pick(r)];
                session.push_back(kSepId);
                session.insert(session.end(), group.response.begin(), group.response.end());
                return session;
            }
        }
        fail("invalid teacher mode");
    };

    TrainResult result;
    const int64_t steps = steps_per_epoch(tokenized.size(), cfg.batch_size) * cfg.epochs;
    for (int64_t step = 1; step <= steps; ++step) {
        // B groups -> B positive pairs plus B negatives from other groups.
        std::vector<size_t> order(tokenized.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);

        ad::Tape tape;
        std::vector<ad::Var> losses;
        int b = std::min<int>(cfg.batch_size, static_cast<int>(tokenized.size()));
        for (int i = 0; i < b; ++i) {
            const TokenizedGroup& group = tokenized[order[static_cast<size_t>(i)]];
            std::uniform_int_distribution<size_t> pick_ctx(0, group.contexts.size() - 1);
            const std::vector<int>& query = group.contexts[pick_ctx(rng)];
            losses.push_back(
                teacher_loss(scorer.score_on(tape, query, candidate_of(group, rng)), 1.0));
            std::uniform_int_distribution<size_t> pick_other(0, tokenized.size() - 2);
            size_t other = pick_other(rng);
            if (other >= order[static_cast<size_t>(i)]) ++other;
            losses.push_back(
                teacher_loss(scorer.score_on(tape, query, candidate_of(tokenized[other], rng)),
                             0.0));
        }
        ad::Var loss = mean_of(tape, losses);
        double loss_value = loss.scalar();
        check_finite_loss(loss_value, step, "teacher");

        for (auto* p : params) p->zero_grad();
        tape.backward(loss);
        ad::adam_step(params, adam);

        double warm = adam.warmup_steps > 0
                          ? std::min(1.0, static_cast<double>(step) /
                                              static_cast<double>(adam.warmup_steps))
                          : 1.0;
        result.log.push_back({step, loss_value, loss_value, 0.0, cfg.lr * warm});
    }
    return result;
}

TrainResult distill_student(StudentModel& student, const std::vector<CrossScorer*>& teachers,
                            const std::vector<TrainGroup>& groups, const Vocabulary& vocab,
                            const TrainConfig& cfg) {
    DIALRET_REQUIRE(!teachers.empty(), "distillation needs at least one teacher");
    if (student.mode() == MatchMode::DQS) {
        DIALRET_REQUIRE(teachers.size() == 2, "DQS distillation needs the QC and QR "
                        "teachers, got ", teachers.size());
        DIALRET_REQUIRE(teachers[0]->mode() == TeacherMode::QC,
                        "first DQS teacher must be QC, got ",
                        teacher_mode_name(teachers[0]->mode()));
        DIALRET_REQUIRE(teachers[1]->mode() == TeacherMode::QR,
                        "second DQS teacher must be QR, got ",
                        teacher_mode_name(teachers[1]->mode()));
    } else {
        DIALRET_REQUIRE(teachers.size() == 1, "mode ", mode_name(student.mode()),
                        " takes exactly one teacher, got ", teachers.size());
        DIALRET_REQUIRE(teacher_mode_name(teachers[0]->mode()) == mode_name(student.mode()),
                        "teacher mode ", teacher_mode_name(teachers[0]->mode()),
                        " does not match student mode ", mode_name(student.mode()));
    }
    for (const CrossScorer* teacher : teachers) {
        DIALRET_REQUIRE(teacher->config().vocab_size == student.config().vocab_size,
                        "teacher/student vocabulary mismatch: teacher ",
                        teacher->config().vocab_size, " vs student ",
                        student.config().vocab_size);
    }

    auto tokenized = tokenize_groups(groups, vocab);
    Rng rng(cfg.seed);
    ad::AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8, cfg.warmup_steps};
    auto params = student.parameters();

    TrainResult result;
    const int64_t steps = steps_per_epoch(tokenized.size(), cfg.batch_size) * cfg.epochs;
    for (int64_t step = 1; step <= steps; ++step) {
        Batch batch = sample_batch(tokenized, cfg.batch_size, rng);
        const int b = batch.size();

        ad::Tape tape;
        std::vector<const std::vector<int>*> queries;
        for (const auto& inst : batch.instances) queries.push_back(&inst.query);
        ad::Var q = encode_matrix(tape, student.tower(Role::Query), queries);

        std::vector<ad::Var> losses;
        double hard_total = 0.0, kl_total = 0.0;
        if (student.mode() == MatchMode::DQS) {
            std::vector<const std::vector<int>*> ctxs, resps;
            for (const auto& inst : batch.instances) {
                ctxs.push_back(&inst.pos_context);
                resps.push_back(&inst.pos_response);
            }
            ad::Var c = encode_matrix(tape, student.tower(Role::Context), ctxs);
            ad::Var r = encode_matrix(tape, student.tower(Role::Response), resps);
            ad::Var ctx_scores = ad::matmul(q, ad::transpose(c));
            ad::Var resp_scores = ad::matmul(q, ad::transpose(r));
            for (int i = 0; i < b; ++i) {
                const auto& query = batch.instances[static_cast<size_t>(i)].query;
                RowVec<double> t_ctx(b), t_resp(b);
                for (int j = 0; j < b; ++j) {
                    t_ctx(j) = teachers[0]->score(
                        query, batch.instances[static_cast<size_t>(j)].pos_context);
                    t_resp(j) = teachers[1]->score(
                        query, batch.instances[static_cast<size_t>(j)].pos_response);
                }
                ad::Var row = dqs_score_row(ctx_scores, resp_scores, i);
                ad::Var hard = contrastive_loss(row, {i, b + i});
                ad::Var kl_ctx =
                    soft_target_kl(ad::gather_rows(ctx_scores, {i}), t_ctx, cfg.temperature);
                ad::Var kl_resp = soft_target_kl(ad::gather_rows(resp_scores, {i}), t_resp,
                                                 cfg.temperature);
                ad::Var kl = ad::add(ad::scalar_mul(kl_ctx, cfg.dqs_context_weight),
                                     ad::scalar_mul(kl_resp, cfg.dqs_response_weight));
                hard_total += hard.scalar();
                kl_total += kl.scalar();
                losses.push_back(ad::add(ad::scalar_mul(hard, cfg.hard_weight),
                                         ad::scalar_mul(kl, cfg.distill_rate)));
            }
        } else {
            Role role = key_role(student.mode());
            std::vector<const std::vector<int>*> keys;
            for (const auto& inst : batch.instances) keys.push_back(&key_tokens(inst, role));
            ad::Var k = encode_matrix(tape, student.tower(role), keys);
            ad::Var scores = ad::matmul(q, ad::transpose(k));
            for (int i = 0; i < b; ++i) {
                const auto& query = batch.instances[static_cast<size_t>(i)].query;
                RowVec<double> t_scores(b);
                for (int j = 0; j < b; ++j) {
                    t_scores(j) = teachers[0]->score(
                        query, key_tokens(batch.instances[static_cast<size_t>(j)], role));
                }
                ad::Var row = ad::gather_rows(scores, {i});
                ad::Var hard = contrastive_loss(row, {i});
                ad::Var kl = soft_target_kl(row, t_scores, cfg.temperature);
                hard_total += hard.scalar();
                kl_total += kl.scalar();
                losses.push_back(ad::add(ad::scalar_mul(hard, cfg.hard_weight),
                                         ad::scalar_mul(kl, cfg.distill_rate)));
            }
        }
        ad::Var loss = mean_of(tape, losses);
        double loss_value = loss.scalar();
        check_finite_loss(loss_value, step, "distillation");

        for (auto* p : params) p->zero_grad();
        tape.backward(loss);
        ad::adam_step(params, adam);

        double warm = adam.warmup_steps > 0
                          ? std::min(1.0, static_cast<double>(step) /
                                              static_cast<double>(adam.warmup_steps))
                          : 1.0;
        result.log.push_back({step, loss_value, hard_total / b, kl_total / b, cfg.lr * warm});
    }
    return result;
}

void save_train_log(const std::vector<StepLog>& log, const std::string& path) {
    std::ofstream out(path);
    DIALRET_REQUIRE(out.good(), "cannot open training log for writing: ", path);
    for (const StepLog& entry : log) {
        json obj;
        obj["step"] = entry.step;
        obj["loss"] = entry.loss;
        obj["hard"] = entry.hard;
        obj["kl"] = entry.kl;
        obj["lr"] = entry.lr;
        out << obj.dump() << '\n';
    }
}

}  // namespace dialret
