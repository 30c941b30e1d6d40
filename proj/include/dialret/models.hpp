#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dialret/autodiff.hpp"
#include "dialret/linalg.hpp"

namespace dialret {

enum class Role { Query, Context, Response, Session };
enum class MatchMode { QC, QS, QR, DQS };
/// Which candidate field a one-tower teacher scores against the query.
enum class TeacherMode { QC, QS, QR };

std::string role_name(Role role);
std::string mode_name(MatchMode mode);
MatchMode parse_mode(const std::string& name);
std::string teacher_mode_name(TeacherMode mode);
TeacherMode parse_teacher_mode(const std::string& name);

struct ModelConfig {
    int vocab_size = 0;
    int embed_dim = 64;      // token embedding width d_e
    int output_dim = 64;     // tower embedding width d
    int head_dim = 64;       // teacher head hidden width d_h
    int max_joint_len = 512; // teacher position table size L
    bool share_encoders = false;
    uint64_t seed = 0;
};

using Embedding = RowVec<double>;

/// Dot product similarity between two embeddings of equal dimension.
double similarity(const Embedding& a, const Embedding& b);

/// Bag-of-tokens encoder: tanh(mean(embed[tokens]) * proj + bias).
/// Output coordinates always lie in (-1, 1).
struct TowerEncoder {
    Role role;
    ad::Parameter embed;  // V x d_e
    ad::Parameter proj;   // d_e x d
    ad::Parameter bias;   // 1 x d

    TowerEncoder(Role r, int vocab_size, int embed_dim, int output_dim, Rng& rng);

    Embedding encode(const std::vector<int>& tokens) const;
    ad::Var encode_on(ad::Tape& tape, const std::vector<int>& tokens);

    std::vector<ad::Parameter*> parameters();
};

/// Multi-tower student. Which towers exist depends on the matching mode:
/// QC holds query+context, QS query+session, QR query+response and DQS
/// query+context+response. With share_encoders the context (QC/DQS) or
/// session (QS) tower aliases the query tower's parameters.
class StudentModel {
public:
    static StudentModel init(MatchMode mode, const ModelConfig& cfg);

    MatchMode mode() const { return mode_; }
    const ModelConfig& config() const { return config_; }

    TowerEncoder& tower(Role role);
    const TowerEncoder& tower(Role role) const;
    bool has_tower(Role role) const { return towers_.count(role) > 0; }
    bool towers_shared(Role a, Role b) const;

    Embedding encode(Role role, const std::vector<int>& tokens) const;

    /// Unique parameter set (aliased towers are not repeated).
    std::vector<ad::Parameter*> parameters();

    void save(const std::string& path) const;
    static StudentModel load(const std::string& path);

private:
    StudentModel(MatchMode mode, ModelConfig cfg) : mode_(mode), config_(std::move(cfg)) {}
    MatchMode mode_;
    ModelConfig config_;
    std::map<Role, std::shared_ptr<TowerEncoder>> towers_;
};

/// One-tower teacher: joint (query, SEP, candidate) sequence with token,
/// segment and learned position embeddings, a single residual self-attention
/// block and a two-layer head read from the first position.
class CrossScorer {
public:
    static CrossScorer init(TeacherMode mode, const ModelConfig& cfg);

    TeacherMode mode() const { return mode_; }
    const ModelConfig& config() const { return config_; }

    double score(const std::vector<int>& query_tokens,
                 const std::vector<int>& cand_tokens) const;
    ad::Var score_on(ad::Tape& tape, const std::vector<int>& query_tokens,
                     const std::vector<int>& cand_tokens);

    std::vector<ad::Parameter*> parameters();
    const std::vector<ad::Parameter*> parameters() const;

    void save(const std::string& path) const;
    static CrossScorer load(const std::string& path);

private:
    explicit CrossScorer(TeacherMode mode, ModelConfig cfg);
    std::vector<int> joint_ids(const std::vector<int>& query_tokens,
                               const std::vector<int>& cand_tokens,
                               std::vector<int>* segment_ids) const;

    TeacherMode mode_;
    ModelConfig config_;
    struct Params;
    std::shared_ptr<Params> p_;
};

}  // namespace dialret
