#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "dialret/models.hpp"
#include "dialret/training.hpp"
#include "support/gradcheck.hpp"
#include "support/testutil.hpp"

using namespace dialret;
using testsupport::contains;
using testsupport::error_message;
using testsupport::grad_check;
namespace fs = std::filesystem;

namespace {

ModelConfig small_config(int vocab = 20, uint64_t seed = 1) {
    ModelConfig cfg;
    cfg.vocab_size = vocab;
    cfg.embed_dim = 8;
    cfg.output_dim = 6;
    cfg.head_dim = 5;
    cfg.max_joint_len = 256;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("similarity is the dot product") {
    Embedding a(2), b(2);
    a << 1.0, 0.0;
    b << 0.0, 1.0;
    CHECK(similarity(a, b) == 0.0);
    Embedding v(3);
    v << 0.5, -1.0, 2.0;
    CHECK(similarity(v, v) == doctest::Approx(v.squaredNorm()).epsilon(1e-15));
    Embedding c(2), d(2);
    c << 0.5, -0.5;
    d << 0.2, 0.4;
    CHECK(similarity(c, d) == doctest::Approx(-0.1).epsilon(1e-15));
    Embedding e(3);
    CHECK(contains(error_message([&] { similarity(a, e); }), "mismatch"));
}

TEST_CASE("zero-parameter encoder outputs the zero vector") {
    Rng rng(1);
    TowerEncoder enc(Role::Query, 10, 4, 4, rng);
    enc.embed.value.setZero();
    enc.proj.value.setZero();
    CHECK(enc.encode({1, 2, 3}).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mean pooling is idempotent on repeated tokens") {
    Rng rng(2);
    TowerEncoder enc(Role::Query, 10, 6, 4, rng);
    Embedding once = enc.encode({3});
    Embedding twice = enc.encode({3, 3});
    CHECK((once - twice).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("encoder outputs stay inside the tanh range") {
    Rng rng(3);
    TowerEncoder enc(Role::Query, 50, 16, 12, rng);
    enc.proj.value *= 100.0;  // drive the pre-activation out wide
    std::uniform_int_distribution<int> tok(0, 49);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> tokens;
        int len = std::uniform_int_distribution<int>(1, 12)(rng);
        for (int i = 0; i < len; ++i) tokens.push_back(tok(rng));
        Embedding e = enc.encode(tokens);
        CHECK(e.cwiseAbs().maxCoeff() < 1.0);
    }
}

TEST_CASE("bounded embeddings bound the similarity by the dimension") {
    Rng rng(4);
    TowerEncoder a(Role::Query, 30, 8, 16, rng);
    TowerEncoder b(Role::Context, 30, 8, 16, rng);
    std::uniform_int_distribution<int> tok(0, 29);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> ta{tok(rng), tok(rng)}, tb{tok(rng)};
        CHECK(std::abs(similarity(a.encode(ta), b.encode(tb))) < 16.0);
    }
}

TEST_CASE("encode rejects empty input and out-of-vocabulary ids") {
    Rng rng(5);
    TowerEncoder enc(Role::Query, 10, 4, 4, rng);
    CHECK(contains(error_message([&] { enc.encode({}); }), "empty"));
    CHECK(contains(error_message([&] { enc.encode({10}); }), "10"));
}

TEST_CASE("tape and plain encoder forwards agree") {
    Rng rng(6);
    TowerEncoder enc(Role::Query, 20, 8, 6, rng);
    std::vector<int> tokens = {1, 5, 9, 5};
    ad::Tape tape;
    ad::Var on_tape = enc.encode_on(tape, tokens);
    Embedding plain = enc.encode(tokens);
    CHECK((on_tape.value().row(0) - plain).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("init is deterministic and share_encoders aliases towers") {
    ModelConfig cfg = small_config();
    StudentModel a = StudentModel::init(MatchMode::QC, cfg);
    StudentModel b = StudentModel::init(MatchMode::QC, cfg);
    CHECK((a.tower(Role::Query).embed.value - b.tower(Role::Query).embed.value)
              .cwiseAbs()
              .maxCoeff() == 0.0);
    CHECK_FALSE(a.towers_shared(Role::Query, Role::Context));
    CHECK(a.parameters().size() == 6);

    cfg.share_encoders = true;
    StudentModel shared = StudentModel::init(MatchMode::QC, cfg);
    CHECK(shared.towers_shared(Role::Query, Role::Context));
    CHECK(shared.parameters().size() == 3);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<int> tokens = {trial % 20, (trial * 7) % 20};
        Embedding q = shared.encode(Role::Query, tokens);
        Embedding c = shared.encode(Role::Context, tokens);
        CHECK((q - c).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("unshared towers are independent parameter sets") {
    StudentModel model = StudentModel::init(MatchMode::QC, small_config());
    double before = model.tower(Role::Context).embed.value(0, 0);
    model.tower(Role::Query).embed.value(0, 0) += 1.0;
    CHECK(model.tower(Role::Context).embed.value(0, 0) == before);
}

TEST_CASE("with shared encoders the candidate argmax ignores which tower encodes") {
    ModelConfig cfg = small_config(40, 8);
    cfg.share_encoders = true;
    StudentModel model = StudentModel::init(MatchMode::QC, cfg);
    Rng rng(9);
    std::uniform_int_distribution<int> tok(0, 39);
    std::vector<std::vector<int>> candidates;
    for (int i = 0; i < 12; ++i) {
        candidates.push_back({tok(rng), tok(rng), tok(rng)});
    }
    std::vector<int> query = {tok(rng), tok(rng)};
    auto argmax_with = [&](Role query_role, Role cand_role) {
        Embedding q = model.encode(query_role, query);
        int best = -1;
        double best_score = -1e30;
        for (size_t i = 0; i < candidates.size(); ++i) {
            double s = similarity(q, model.encode(cand_role, candidates[i]));
            if (s > best_score) {
                best_score = s;
                best = static_cast<int>(i);
            }
        }
        return best;
    };
    CHECK(argmax_with(Role::Query, Role::Context) == argmax_with(Role::Context, Role::Query));
}

TEST_CASE("DQS model has three towers and QS a session tower") {
    StudentModel dqs = StudentModel::init(MatchMode::DQS, small_config());
    CHECK(dqs.has_tower(Role::Context));
    CHECK(dqs.has_tower(Role::Response));
    CHECK_FALSE(dqs.has_tower(Role::Session));
    StudentModel qs = StudentModel::init(MatchMode::QS, small_config());
    CHECK(qs.has_tower(Role::Session));
    CHECK(contains(error_message([&] { qs.tower(Role::Context); }), "context"));
}

TEST_CASE("zero-weight teacher scores exactly zero") {
    CrossScorer teacher = CrossScorer::init(TeacherMode::QS, small_config());
    for (ad::Parameter* p : teacher.parameters()) {
        p->value.setZero();
    }
    CHECK(teacher.score({1, 2}, {3, 4, 5}) == 0.0);
}

TEST_CASE("teacher logit reacts to the candidate tokens") {
    CrossScorer teacher = CrossScorer::init(TeacherMode::QC, small_config(20, 3));
    double a = teacher.score({1, 2}, {3, 4});
    double b = teacher.score({1, 2}, {3, 5});
    CHECK(a != b);
    CHECK(teacher.score({1, 2}, {3, 4}) == a);  // deterministic
}

TEST_CASE("teacher rejects joint sequences beyond the position table") {
    ModelConfig cfg = small_config();
    CrossScorer teacher = CrossScorer::init(TeacherMode::QC, cfg);
    std::vector<int> half(static_cast<size_t>(cfg.max_joint_len / 2) + 1, 2);
    CHECK(contains(error_message([&] { teacher.score(half, half); }), "max_joint_len"));
}

TEST_CASE("model config must hold a maximal context plus response") {
    ModelConfig cfg = small_config();
    cfg.max_joint_len = 64;
    CHECK(contains(error_message([&] { CrossScorer::init(TeacherMode::QC, cfg); }), "193"));
}

TEST_CASE("tape and plain teacher forwards agree") {
    CrossScorer teacher = CrossScorer::init(TeacherMode::QS, small_config(20, 12));
    std::vector<int> q = {1, 2, 3}, c = {4, 5};
    ad::Tape tape;
    CHECK(teacher.score_on(tape, q, c).scalar() == doctest::Approx(teacher.score(q, c))
                                                       .epsilon(1e-14));
}

TEST_CASE("teacher gradients match central differences") {
    CrossScorer teacher = CrossScorer::init(TeacherMode::QC, small_config(12, 21));
    std::vector<int> q = {1, 3}, c = {2};  // 4-token joint input with SEP
    auto build = [&](ad::Tape& tape) {
        return ad::sigmoid(teacher.score_on(tape, q, c));
    };
    auto result = grad_check(teacher.parameters(), build);
    CHECK(result.max_rel_err < 1e-5);
}

TEST_CASE("student checkpoints round-trip bit-exactly") {
    StudentModel model = StudentModel::init(MatchMode::DQS, small_config(25, 31));
    auto path = (fs::temp_directory_path() / "dialret_student_test.ckpt").string();
    model.save(path);
    StudentModel loaded = StudentModel::load(path);
    CHECK(loaded.mode() == model.mode());
    for (Role role : {Role::Query, Role::Context, Role::Response}) {
        CHECK((loaded.tower(role).embed.value - model.tower(role).embed.value)
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
        CHECK((loaded.tower(role).proj.value - model.tower(role).proj.value)
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
        CHECK((loaded.tower(role).bias.value - model.tower(role).bias.value)
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
    }
    fs::remove(path);
}

TEST_CASE("shared checkpoints restore the aliasing") {
    ModelConfig cfg = small_config(25, 32);
    cfg.share_encoders = true;
    StudentModel model = StudentModel::init(MatchMode::QS, cfg);
    auto path = (fs::temp_directory_path() / "dialret_student_shared.ckpt").string();
    model.save(path);
    StudentModel loaded = StudentModel::load(path);
    CHECK(loaded.towers_shared(Role::Query, Role::Session));
    fs::remove(path);
}

TEST_CASE("teacher checkpoints round-trip bit-exactly") {
    CrossScorer teacher = CrossScorer::init(TeacherMode::QR, small_config(25, 33));
    auto path = (fs::temp_directory_path() / "dialret_teacher_test.ckpt").string();
    teacher.save(path);
    CrossScorer loaded = CrossScorer::load(path);
    auto a = teacher.parameters();
    auto b = loaded.parameters();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i]->name == b[i]->name);
        CHECK((a[i]->value - b[i]->value).cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK(loaded.score({1, 2}, {3}) == teacher.score({1, 2}, {3}));
    fs::remove(path);
}

TEST_CASE("truncated checkpoints fail to load") {
    StudentModel model = StudentModel::init(MatchMode::QC, small_config());
    auto path = (fs::temp_directory_path() / "dialret_student_trunc.ckpt").string();
    model.save(path);
    fs::resize_file(path, fs::file_size(path) / 2);
    CHECK(contains(error_message([&] { StudentModel::load(path); }), "corrupt"));
    fs::remove(path);
}

TEST_CASE("unknown parameter names are reported") {
    StudentModel model = StudentModel::init(MatchMode::QC, small_config());
    auto path = (fs::temp_directory_path() / "dialret_student_unknown.ckpt").string();
    model.save(path);
    // Splice an extra parameter into the JSON.
    std::ifstream in(path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    auto at = text.find("\"params\":{");
    REQUIRE(at != std::string::npos);
    text.insert(at + std::string("\"params\":{").size(),
                "\"bogus.weight\":{\"shape\":[1,1],\"data\":[0.0]},");
    std::ofstream out(path);
    out << text;
    out.close();
    CHECK(contains(error_message([&] { StudentModel::load(path); }), "bogus.weight"));
    fs::remove(path);
}

TEST_CASE("checkpoint version mismatches are rejected") {
    StudentModel model = StudentModel::init(MatchMode::QC, small_config());
    auto path = (fs::temp_directory_path() / "dialret_student_version.ckpt").string();
    model.save(path);
    std::ifstream in(path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    auto at = text.find("\"format_version\":1");
    REQUIRE(at != std::string::npos);
    text.replace(at, std::string("\"format_version\":1").size(), "\"format_version\":2");
    std::ofstream out(path);
    out << text;
    out.close();
    CHECK(contains(error_message([&] { StudentModel::load(path); }), "format_version"));
    fs::remove(path);
}

// The teacher can use positions and multiplicities that mean pooling wipes
// out: [a, b] and [a, a, b, b] pool to the same embedding for every tower, so
// no dot-product student strictly separates them, while a fitted one-tower
// scorer does.
TEST_CASE("teacher separates a candidate set no tower dot product can") {
    const int a = 3, b = 4;
    std::vector<int> short_cand = {a, b};
    std::vector<int> long_cand = {a, a, b, b};

    // Algebra: identical pooled encodings for any parameters.
    for (uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed);
        TowerEncoder enc(Role::Context, 10, 8, 6, rng);
        CHECK((enc.encode(short_cand) - enc.encode(long_cand)).cwiseAbs().maxCoeff() <
              1e-15);
    }

    // A small BCE-fitted teacher reaches clean separation on the same set.
    ModelConfig cfg = small_config(10, 77);
    CrossScorer teacher = CrossScorer::init(TeacherMode::QC, cfg);
    std::vector<std::vector<int>> queries = {{1}, {2}, {5}, {6}};
    ad::AdamConfig adam;
    adam.lr = 5e-3;
    adam.warmup_steps = 0;
    for (int step = 0; step < 300; ++step) {
        ad::Tape tape;
        std::vector<ad::Var> losses;
        for (const auto& q : queries) {
            losses.push_back(teacher_loss(teacher.score_on(tape, q, short_cand), 1.0));
            losses.push_back(teacher_loss(teacher.score_on(tape, q, long_cand), 0.0));
        }
        ad::Var loss = ad::row_mean(ad::concat_rows(losses));
        for (auto* p : teacher.parameters()) p->zero_grad();
        tape.backward(loss);
        ad::adam_step(teacher.parameters(), adam);
    }
    int correct = 0;
    for (const auto& q : queries) {
        if (teacher.score(q, short_cand) > 0.0) ++correct;
        if (teacher.score(q, long_cand) < 0.0) ++correct;
    }
    CHECK(static_cast<double>(correct) / (2.0 * queries.size()) >= 0.95);
}
