#include "dialret/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "dialret/corpus.hpp"

namespace dialret {

using nlohmann::json;

namespace {

constexpr double kInitScale = 0.05;
constexpr int kCheckpointVersion = 1;

void check_token_ids(const std::vector<int>& tokens, int vocab_size) {
    DIALRET_REQUIRE(!tokens.empty(), "cannot encode an empty token sequence");
    for (int id : tokens) {
        DIALRET_REQUIRE(id >= 0 && id < vocab_size, "token id ", id,
                        " outside vocabulary of size ", vocab_size);
    }
}

json tensor_to_json(const Matd& m) {
    json entry;
    entry["shape"] = {m.rows(), m.cols()};
    std::vector<double> data(static_cast<size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            data[static_cast<size_t>(i * m.cols() + j)] = m(i, j);
        }
    }
    entry["data"] = std::move(data);
    return entry;
}

void tensor_from_json(const json& entry, const std::string& name, Matd& out) {
    auto shape = entry.at("shape").get<std::vector<Eigen::Index>>();
    DIALRET_REQUIRE(shape.size() == 2, "parameter ", name, " has non-2D shape");
    DIALRET_REQUIRE(shape[0] == out.rows() && shape[1] == out.cols(),
                    "parameter ", name, " shape mismatch: checkpoint (", shape[0], "x",
                    shape[1], ") vs model (", out.rows(), "x", out.cols(), ")");
    auto data = entry.at("data").get<std::vector<double>>();
    DIALRET_REQUIRE(data.size() == static_cast<size_t>(out.size()),
                    "parameter ", name, " data length ", data.size(), " != ", out.size());
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        for (Eigen::Index j = 0; j < out.cols(); ++j) {
            out(i, j) = data[static_cast<size_t>(i * out.cols() + j)];
        }
    }
}

json config_to_json(const ModelConfig& cfg) {
    json out;
    out["vocab_size"] = cfg.vocab_size;
    out["embed_dim"] = cfg.embed_dim;
    out["output_dim"] = cfg.output_dim;
    out["head_dim"] = cfg.head_dim;
    out["max_joint_len"] = cfg.max_joint_len;
    out["share_encoders"] = cfg.share_encoders;
    out["seed"] = cfg.seed;
    return out;
}

ModelConfig config_from_json(const json& obj) {
    ModelConfig cfg;
    cfg.vocab_size = obj.at("vocab_size").get<int>();
    cfg.embed_dim = obj.at("embed_dim").get<int>();
    cfg.output_dim = obj.at("output_dim").get<int>();
    cfg.head_dim = obj.at("head_dim").get<int>();
    cfg.max_joint_len = obj.at("max_joint_len").get<int>();
    cfg.share_encoders = obj.at("share_encoders").get<bool>();
    cfg.seed = obj.at("seed").get<uint64_t>();
    return cfg;
}

json load_checkpoint_json(const std::string& path, const std::string& expected_kind) {
    std::ifstream in(path);
    DIALRET_REQUIRE(in.good(), "cannot open checkpoint: ", path);
    json obj;
    try {
        in >> obj;
    } catch (const json::exception& e) {
        fail("corrupt checkpoint ", path, ": ", e.what());
    }
    DIALRET_REQUIRE(obj.contains("format_version"), "checkpoint ", path,
                    " has no format_version");
    int version = obj.at("format_version").get<int>();
    DIALRET_REQUIRE(version == kCheckpointVersion, "checkpoint ", path,
                    " has format_version ", version, ", expected ", kCheckpointVersion);
    std::string kind = obj.at("config").at("kind").get<std::string>();
    DIALRET_REQUIRE(kind == expected_kind, "checkpoint ", path, " holds a ", kind,
                    " model, expected ", expected_kind);
    return obj;
}

/// Fills the named parameters from the checkpoint; every expected name must be
/// present and nothing else may be.
void fill_parameters(const json& obj, const std::string& path,
                     const std::vector<ad::Parameter*>& params) {
    const json& stored = obj.at("params");
    std::map<std::string, ad::Parameter*> by_name;
    for (ad::Parameter* p : params) {
        by_name[p->name] = p;
    }
    for (auto it = stored.begin(); it != stored.end(); ++it) {
        DIALRET_REQUIRE(by_name.count(it.key()), "checkpoint ", path,
                        " contains unknown parameter \"", it.key(), "\"");
    }
    for (auto& [name, p] : by_name) {
        DIALRET_REQUIRE(stored.contains(name), "checkpoint ", path,
                        " is missing parameter \"", name, "\"");
        tensor_from_json(stored.at(name), name, p->value);
    }
}

void write_checkpoint(const std::string& path, const json& config,
                      const std::vector<const ad::Parameter*>& params) {
    json obj;
    obj["format_version"] = kCheckpointVersion;
    obj["config"] = config;
    json stored;
    for (const ad::Parameter* p : params) {
        stored[p->name] = tensor_to_json(p->value);
    }
    obj["params"] = std::move(stored);
    std::ofstream out(path);
    DIALRET_REQUIRE(out.good(), "cannot open checkpoint for writing: ", path);
    out << obj.dump();
}

}  // namespace

// ---------------------------------------------------------------------------
// Names

std::string role_name(Role role) {
    switch (role) {
        case Role::Query: return "query";
        case Role::Context: return "context";
        case Role::Response: return "response";
        case Role::Session: return "session";
    }
    fail("invalid role");
}

std::string mode_name(MatchMode mode) {
    switch (mode) {
        case MatchMode::QC: return "qc";
        case MatchMode::QS: return "qs";
        case MatchMode::QR: return "qr";
        case MatchMode::DQS: return "dqs";
    }
    fail("invalid match mode");
}

MatchMode parse_mode(const std::string& name) {
    if (name == "qc") return MatchMode::QC;
    if (name == "qs") return MatchMode::QS;
    if (name == "qr") return MatchMode::QR;
    if (name == "dqs") return MatchMode::DQS;
    fail("unknown matching mode \"", name, "\" (expected qc, qs, qr or dqs)");
}

std::string teacher_mode_name(TeacherMode mode) {
    switch (mode) {
        case TeacherMode::QC: return "qc";
        case TeacherMode::QS: return "qs";
        case TeacherMode::QR: return "qr";
    }
    fail("invalid teacher mode");
}

TeacherMode parse_teacher_mode(const std::string& name) {
    if (name == "qc") return TeacherMode::QC;
    if (name == "qs") return TeacherMode::QS;
    if (name == "qr") return TeacherMode::QR;
    fail("unknown teacher mode \"", name, "\" (expected qc, qs or qr)");
}

double similarity(const Embedding& a, const Embedding& b) {
    DIALRET_REQUIRE(a.cols() == b.cols(), "similarity dimension mismatch: ", a.cols(),
                    " vs ", b.cols());
    return a.dot(b);
}

// ---------------------------------------------------------------------------
// TowerEncoder

TowerEncoder::TowerEncoder(Role r, int vocab_size, int embed_dim, int output_dim, Rng& rng)
    : role(r),
      embed(role_name(r) + ".embed", uniform_matrix(vocab_size, embed_dim, kInitScale, rng)),
      proj(role_name(r) + ".proj", uniform_matrix(embed_dim, output_dim, kInitScale, rng)),
      bias(role_name(r) + ".bias", Matd::Zero(1, output_dim)) {}

Embedding TowerEncoder::encode(const std::vector<int>& tokens) const {
    check_token_ids(tokens, static_cast<int>(embed.value.rows()));
    RowVec<double> pooled = RowVec<double>::Zero(embed.value.cols());
    for (int id : tokens) {
        pooled += embed.value.row(id);
    }
    pooled /= static_cast<double>(tokens.size());
    return (pooled * proj.value + bias.value.row(0)).array().tanh();
}

ad::Var TowerEncoder::encode_on(ad::Tape& tape, const std::vector<int>& tokens) {
    check_token_ids(tokens, static_cast<int>(embed.value.rows()));
    ad::Var emb = tape.param(embed);
    ad::Var rows = ad::gather_rows(emb, tokens);
    ad::Var pooled = ad::row_mean(rows);
    ad::Var projected = ad::add(ad::matmul(pooled, tape.param(proj)), tape.param(bias));
    return ad::tanh(projected);
}

std::vector<ad::Parameter*> TowerEncoder::parameters() {
    return {&embed, &proj, &bias};
}

// ---------------------------------------------------------------------------
// StudentModel

namespace {

std::vector<Role> roles_for(MatchMode mode) {
    switch (mode) {
        case MatchMode::QC: return {Role::Query, Role::Context};
        case MatchMode::QS: return {Role::Query, Role::Session};
        case MatchMode::QR: return {Role::Query, Role::Response};
        case MatchMode::DQS: return {Role::Query, Role::Context, Role::Response};
    }
    fail("invalid match mode");
}

/// The role that aliases the query tower under share_encoders, if any.
std::optional<Role> shared_role_for(MatchMode mode) {
    switch (mode) {
        case MatchMode::QC: return Role::Context;
        case MatchMode::QS: return Role::Session;
        case MatchMode::DQS: return Role::Context;
        case MatchMode::QR: return std::nullopt;
    }
    return std::nullopt;
}

}  // namespace

StudentModel StudentModel::init(MatchMode mode, const ModelConfig& cfg) {
    DIALRET_REQUIRE(cfg.vocab_size >= 2, "vocab_size must cover the reserved ids, got ",
                    cfg.vocab_size);
    StudentModel model(mode, cfg);
    Rng rng(cfg.seed);
    std::optional<Role> shared = cfg.share_encoders ? shared_role_for(mode) : std::nullopt;
    for (Role role : roles_for(mode)) {
        if (shared && role == *shared) {
            model.towers_[role] = model.towers_.at(Role::Query);
            continue;
        }
        model.towers_[role] = std::make_shared<TowerEncoder>(
            role, cfg.vocab_size, cfg.embed_dim, cfg.output_dim, rng);
    }
    return model;
}

TowerEncoder& StudentModel::tower(Role role) {
    auto it = towers_.find(role);
    DIALRET_REQUIRE(it != towers_.end(), "model for mode ", mode_name(mode_),
                    " has no ", role_name(role), " tower");
    return *it->second;
}

const TowerEncoder& StudentModel::tower(Role role) const {
    auto it = towers_.find(role);
    DIALRET_REQUIRE(it != towers_.end(), "model for mode ", mode_name(mode_),
                    " has no ", role_name(role), " tower");
    return *it->second;
}

bool StudentModel::towers_shared(Role a, Role b) const {
    return towers_.count(a) && towers_.count(b) && towers_.at(a) == towers_.at(b);
}

Embedding StudentModel::encode(Role role, const std::vector<int>& tokens) const {
    return tower(role).encode(tokens);
}

std::vector<ad::Parameter*> StudentModel::parameters() {
    std::vector<ad::Parameter*> out;
    std::vector<TowerEncoder*> seen;
    for (auto& [role, tower] : towers_) {
        if (std::find(seen.begin(), seen.end(), tower.get()) != seen.end()) continue;
        seen.push_back(tower.get());
        for (ad::Parameter* p : tower->parameters()) {
            out.push_back(p);
        }
    }
    return out;
}

void StudentModel::save(const std::string& path) const {
    json config = config_to_json(config_);
    config["kind"] = "student";
    config["mode"] = mode_name(mode_);
    std::vector<const ad::Parameter*> params;
    std::vector<const TowerEncoder*> seen;
    for (const auto& [role, tower] : towers_) {
        if (std::find(seen.begin(), seen.end(), tower.get()) != seen.end()) continue;
        seen.push_back(tower.get());
        params.push_back(&tower->embed);
        params.push_back(&tower->proj);
        params.push_back(&tower->bias);
    }
    write_checkpoint(path, config, params);
}

StudentModel StudentModel::load(const std::string& path) {
    json obj = load_checkpoint_json(path, "student");
    ModelConfig cfg = config_from_json(obj.at("config"));
    MatchMode mode = parse_mode(obj.at("config").at("mode").get<std::string>());
    StudentModel model = init(mode, cfg);
    fill_parameters(obj, path, model.parameters());
    return model;
}

// ---------------------------------------------------------------------------
// CrossScorer

struct CrossScorer::Params {
    ad::Parameter embed;     // V x d_e
    ad::Parameter segment;   // 2 x d_e
    ad::Parameter position;  // L x d_e
    ad::Parameter wq, wk, wv, wo;  // d_e x d_e
    ad::Parameter head_w1;   // d_e x d_h
    ad::Parameter head_b1;   // 1 x d_h
    ad::Parameter head_w2;   // d_h x 1
    ad::Parameter head_b2;   // 1 x 1

    Params(const ModelConfig& cfg, Rng& rng)
        : embed("embed", uniform_matrix(cfg.vocab_size, cfg.embed_dim, kInitScale, rng)),
          segment("segment", uniform_matrix(2, cfg.embed_dim, kInitScale, rng)),
          position("position", uniform_matrix(cfg.max_joint_len, cfg.embed_dim, kInitScale, rng)),
          wq("attn.wq", uniform_matrix(cfg.embed_dim, cfg.embed_dim, kInitScale, rng)),
          wk("attn.wk", uniform_matrix(cfg.embed_dim, cfg.embed_dim, kInitScale, rng)),
          wv("attn.wv", uniform_matrix(cfg.embed_dim, cfg.embed_dim, kInitScale, rng)),
          wo("attn.wo", uniform_matrix(cfg.embed_dim, cfg.embed_dim, kInitScale, rng)),
          head_w1("head.w1", uniform_matrix(cfg.embed_dim, cfg.head_dim, kInitScale, rng)),
          head_b1("head.b1", Matd::Zero(1, cfg.head_dim)),
          head_w2("head.w2", uniform_matrix(cfg.head_dim, 1, kInitScale, rng)),
          head_b2("head.b2", Matd::Zero(1, 1)) {}
};

CrossScorer::CrossScorer(TeacherMode mode, ModelConfig cfg)
    : mode_(mode), config_(std::move(cfg)) {}

CrossScorer CrossScorer::init(TeacherMode mode, const ModelConfig& cfg) {
    DIALRET_REQUIRE(cfg.vocab_size >= 2, "vocab_size must cover the reserved ids, got ",
                    cfg.vocab_size);
    DIALRET_REQUIRE(cfg.max_joint_len >= 128 + 64 + 1,
                    "max_joint_len must hold a maximal context, response and separator "
                    "(>= 193), got ", cfg.max_joint_len);
    CrossScorer scorer(mode, cfg);
    Rng rng(cfg.seed);
    scorer.p_ = std::make_shared<Params>(cfg, rng);
    return scorer;
}

std::vector<int> CrossScorer::joint_ids(const std::vector<int>& query_tokens,
                                        const std::vector<int>& cand_tokens,
                                        std::vector<int>* segment_ids) const {
    check_token_ids(query_tokens, config_.vocab_size);
    check_token_ids(cand_tokens, config_.vocab_size);
    size_t joint_len = query_tokens.size() + 1 + cand_tokens.size();
    DIALRET_REQUIRE(joint_len <= static_cast<size_t>(config_.max_joint_len),
                    "joint sequence of length ", joint_len, " exceeds max_joint_len ",
                    config_.max_joint_len, " (no silent truncation)");
    std::vector<int> joint;
    joint.reserve(joint_len);
    segment_ids->clear();
    segment_ids->reserve(joint_len);
    for (int id : query_tokens) {
        joint.push_back(id);
        segment_ids->push_back(0);
    }
    joint.push_back(kSepId);
    segment_ids->push_back(0);  // separator belongs to the query span
    for (int id : cand_tokens) {
        joint.push_back(id);
        segment_ids->push_back(1);
    }
    return joint;
}

double CrossScorer::score(const std::vector<int>& query_tokens,
                          const std::vector<int>& cand_tokens) const {
    std::vector<int> segment_ids;
    std::vector<int> joint = joint_ids(query_tokens, cand_tokens, &segment_ids);
    const Eigen::Index n = static_cast<Eigen::Index>(joint.size());
    const Eigen::Index de = config_.embed_dim;

    Matd x(n, de);
    for (Eigen::Index i = 0; i < n; ++i) {
        x.row(i) = p_->embed.value.row(joint[static_cast<size_t>(i)])
                   + p_->segment.value.row(segment_ids[static_cast<size_t>(i)])
                   + p_->position.value.row(i);
    }
    Matd q = x * p_->wq.value;
    Matd k = x * p_->wk.value;
    Matd v = x * p_->wv.value;
    Matd scores = (q * k.transpose()) / std::sqrt(static_cast<double>(de));
    Matd attn = softmax_rows(scores);
    Matd out = attn * v * p_->wo.value + x;
    RowVec<double> first = out.row(0);
    RowVec<double> hidden =
        ((first * p_->head_w1.value + p_->head_b1.value.row(0)).array().tanh()).matrix();
    double logit = (hidden * p_->head_w2.value)(0, 0) + p_->head_b2.value(0, 0);
    DIALRET_REQUIRE(std::isfinite(logit), "non-finite teacher logit");
    return logit;
}

ad::Var CrossScorer::score_on(ad::Tape& tape, const std::vector<int>& query_tokens,
                              const std::vector<int>& cand_tokens) {
    std::vector<int> segment_ids;
    std::vector<int> joint = joint_ids(query_tokens, cand_tokens, &segment_ids);
    std::vector<int> positions(joint.size());
    for (size_t i = 0; i < joint.size(); ++i) {
        positions[i] = static_cast<int>(i);
    }

    ad::Var tok = ad::gather_rows(tape.param(p_->embed), joint);
    ad::Var seg = ad::gather_rows(tape.param(p_->segment), segment_ids);
    ad::Var pos = ad::gather_rows(tape.param(p_->position), positions);
    ad::Var x = ad::add(ad::add(tok, seg), pos);

    ad::Var q = ad::matmul(x, tape.param(p_->wq));
    ad::Var k = ad::matmul(x, tape.param(p_->wk));
    ad::Var v = ad::matmul(x, tape.param(p_->wv));
    double scale = 1.0 / std::sqrt(static_cast<double>(config_.embed_dim));
    ad::Var scores = ad::scalar_mul(ad::matmul(q, ad::transpose(k)), scale);
    ad::Var attn = ad::attention_softmax(scores);
    ad::Var mixed = ad::matmul(ad::matmul(attn, v), tape.param(p_->wo));
    ad::Var out = ad::add(mixed, x);

    ad::Var first = ad::gather_rows(out, {0});
    ad::Var hidden = ad::tanh(
        ad::add(ad::matmul(first, tape.param(p_->head_w1)), tape.param(p_->head_b1)));
    return ad::add(ad::matmul(hidden, tape.param(p_->head_w2)), tape.param(p_->head_b2));
}

std::vector<ad::Parameter*> CrossScorer::parameters() {
    return {&p_->embed, &p_->segment, &p_->position, &p_->wq, &p_->wk, &p_->wv,
            &p_->wo,    &p_->head_w1, &p_->head_b1,  &p_->head_w2, &p_->head_b2};
}

const std::vector<ad::Parameter*> CrossScorer::parameters() const {
    return const_cast<CrossScorer*>(this)->parameters();
}

void CrossScorer::save(const std::string& path) const {
    json config = config_to_json(config_);
    config["kind"] = "teacher";
    config["mode"] = teacher_mode_name(mode_);
    std::vector<const ad::Parameter*> params;
    for (const ad::Parameter* p : parameters()) {
        params.push_back(p);
    }
    write_checkpoint(path, config, params);
}

CrossScorer CrossScorer::load(const std::string& path) {
    json obj = load_checkpoint_json(path, "teacher");
    ModelConfig cfg = config_from_json(obj.at("config"));
    TeacherMode mode = parse_teacher_mode(obj.at("config").at("mode").get<std::string>());
    CrossScorer scorer = init(mode, cfg);
    fill_parameters(obj, path, scorer.parameters());
    return scorer;
}

}  // namespace dialret
