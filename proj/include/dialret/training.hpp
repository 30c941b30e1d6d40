#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dialret/autodiff.hpp"
#include "dialret/corpus.hpp"
#include "dialret/models.hpp"

namespace dialret {

struct TrainConfig {
    int batch_size = 32;
    int epochs = 10;
    double lr = 2e-4;
    int64_t warmup_steps = 200;
    uint64_t seed = 0;
    double temperature = 3.0;   // distillation softmax temperature
    double distill_rate = 1.0;  // weight of the KL term
    double hard_weight = 1.0;   // weight of the one-hot term (0 = pure soft targets)
    // Relative weights of the two DQS teachers' KL terms.
    double dqs_context_weight = 0.5;
    double dqs_response_weight = 0.5;
};

/// A train group with every text pre-tokenized to vocabulary ids.
struct TokenizedGroup {
    std::vector<std::vector<int>> contexts;
    std::vector<int> response;
};

std::vector<TokenizedGroup> tokenize_groups(const std::vector<TrainGroup>& groups,
                                            const Vocabulary& vocab);

/// One sampled instance: the query and its positives; everything else in the
/// batch serves as negatives.
struct BatchInstance {
    std::vector<int> query;
    std::vector<int> pos_context;
    std::vector<int> pos_response;
    std::vector<int> pos_session;  // pos_context, SEP, pos_response
};

struct Batch {
    std::vector<BatchInstance> instances;
    int size() const { return static_cast<int>(instances.size()); }
};

/// Draws batch_size distinct groups; per group the query and positive context
/// are two independent draws with replacement, so they may coincide.
Batch sample_batch(const std::vector<TokenizedGroup>& groups, int batch_size, Rng& rng);

// ---------------------------------------------------------------------------
// Losses (tape expressions; *_value helpers evaluate on a throwaway tape)

/// -log( sum_{pos} e^s / sum_{all} e^s ) over a 1 x n score row.
ad::Var contrastive_loss(ad::Var scores_row, const std::vector<int>& positive_cols);
double contrastive_loss_value(const std::vector<double>& pos_scores,
                              const std::vector<double>& neg_scores);

/// Binary cross entropy from a logit, computed via stable softplus.
ad::Var teacher_loss(ad::Var logit, double label);
double teacher_loss_value(double logit, double label);

/// T^2-scaled KL(softmax(z_T / T) || softmax(z_S / T)); gradients flow only
/// through the student scores.
ad::Var soft_target_kl(ad::Var student_row, const RowVec<double>& teacher_row,
                       double temperature);
/// hard_weight * CE(one-hot, softmax(z_S)) + rate * soft_target_kl.
ad::Var distill_loss(ad::Var student_row, const RowVec<double>& teacher_row,
                     int positive_col, double temperature, double rate,
                     double hard_weight = 1.0);
double distill_loss_value(const std::vector<double>& student_scores,
                          const std::vector<double>& teacher_scores, int positive_col,
                          double temperature, double rate, double hard_weight = 1.0);

// ---------------------------------------------------------------------------
// Training loops

struct StepLog {
    int64_t step;
    double loss;
    double hard;
    double kl;
    double lr;
};

struct TrainResult {
    std::vector<StepLog> log;
};

void save_train_log(const std::vector<StepLog>& log, const std::string& path);

/// In-batch contrastive training of a multi-tower student (any mode).
TrainResult train_student(StudentModel& model, const std::vector<TrainGroup>& groups,
                          const Vocabulary& vocab, const TrainConfig& cfg);

/// BCE training of a one-tower teacher on 1:1 positive/negative pairs; the
/// negatives are drawn uniformly from other groups.
TrainResult train_teacher(CrossScorer& scorer, const std::vector<TrainGroup>& groups,
                          const Vocabulary& vocab, const TrainConfig& cfg);

/// Fine-to-coarse distillation over the in-batch candidate lists. QC/QS/QR
/// students take one teacher of the matching mode; DQS takes the QC teacher
/// first and the QR teacher second, each contributing its own KL term.
TrainResult distill_student(StudentModel& student, const std::vector<CrossScorer*>& teachers,
                            const std::vector<TrainGroup>& groups, const Vocabulary& vocab,
                            const TrainConfig& cfg);

}  // namespace dialret
