#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dialret/autodiff.hpp"
#include "support/gradcheck.hpp"
#include "support/testutil.hpp"

using namespace dialret;
using dialret::testsupport::contains;
using dialret::testsupport::error_message;
using dialret::testsupport::grad_check;

namespace {

Matd random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
    return uniform_matrix(r, c, scale, rng);
}

}  // namespace

TEST_CASE("tanh of zero is zero") {
    ad::Tape tape;
    ad::Var x = tape.constant(Matd::Zero(1, 1));
    CHECK(ad::tanh(x).scalar() == 0.0);
}

TEST_CASE("logsumexp is stable under large inputs") {
    ad::Tape tape;
    Matd row(1, 2);
    row << 1000.0, 1000.0;
    double got = ad::logsumexp(tape.constant(row)).scalar();
    CHECK(got == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("matmul with identity is identity") {
    ad::Tape tape;
    Rng rng(1);
    Matd a = random_mat(2, 3, rng);
    ad::Var out = ad::matmul(tape.constant(Matd::Identity(2, 2)), tape.constant(a));
    CHECK((out.value() - a).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("matmul shape mismatch reports both shapes") {
    ad::Tape tape;
    ad::Var a = tape.constant(Matd::Zero(2, 3));
    ad::Var b = tape.constant(Matd::Zero(4, 5));
    std::string msg = error_message([&] { ad::matmul(a, b); });
    CHECK(contains(msg, "(2x3)"));
    CHECK(contains(msg, "(4x5)"));
}

TEST_CASE("sum backward fills ones") {
    ad::Parameter w("w", Matd::Constant(2, 2, 0.3));
    ad::Tape tape;
    tape.backward(ad::sum(tape.param(w)));
    CHECK((w.grad - Matd::Ones(2, 2)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sum of tanh at zero has unit gradient") {
    ad::Parameter w("w", Matd::Zero(2, 2));
    ad::Tape tape;
    tape.backward(ad::sum(ad::tanh(tape.param(w))));
    CHECK((w.grad - Matd::Ones(2, 2)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("three-layer composition matches central differences") {
    Rng rng(42);
    ad::Parameter w1("w1", random_mat(4, 5, rng, 0.7));
    ad::Parameter w2("w2", random_mat(5, 3, rng, 0.7));
    ad::Parameter b2("b2", random_mat(1, 3, rng, 0.3));
    Matd input = random_mat(2, 4, rng);
    auto build = [&](ad::Tape& t) {
        ad::Var h = ad::tanh(ad::matmul(t.constant(input), t.param(w1)));
        ad::Var out = ad::sigmoid(ad::add(ad::matmul(h, t.param(w2)), t.param(b2)));
        return ad::sum(ad::log_softmax(out));
    };
    auto result = grad_check({&w1, &w2, &b2}, build);
    CHECK(result.max_rel_err < 1e-6);
}

TEST_CASE("every kernel matches central differences on random small shapes") {
    Rng rng(7);
    for (int trial = 0; trial < 3; ++trial) {
        std::uniform_int_distribution<int> dim(2, 8);
        const int r = dim(rng), c = dim(rng), k = dim(rng);
        ad::Parameter a("a", random_mat(r, c, rng));
        ad::Parameter b("b", random_mat(c, k, rng));
        ad::Parameter row("row", random_mat(1, c, rng));
        ad::Parameter sq("sq", random_mat(r, r, rng));

        auto check = [&](const char* what, std::vector<ad::Parameter*> params,
                         std::function<ad::Var(ad::Tape&)> build) {
            auto result = grad_check(params, build);
            INFO(what);
            CHECK(result.max_rel_err < 1e-6);
        };

        check("matmul", {&a, &b},
              [&](ad::Tape& t) { return ad::sum(ad::matmul(t.param(a), t.param(b))); });
        check("add same shape", {&a}, [&](ad::Tape& t) {
            return ad::sum(ad::tanh(ad::add(t.param(a), t.param(a))));
        });
        check("add row broadcast", {&a, &row}, [&](ad::Tape& t) {
            return ad::sum(ad::tanh(ad::add(t.param(a), t.param(row))));
        });
        check("scalar_mul", {&a},
              [&](ad::Tape& t) { return ad::sum(ad::tanh(ad::scalar_mul(t.param(a), -1.7))); });
        check("tanh", {&a}, [&](ad::Tape& t) { return ad::sum(ad::tanh(t.param(a))); });
        check("sigmoid", {&a}, [&](ad::Tape& t) { return ad::sum(ad::sigmoid(t.param(a))); });
        check("softplus", {&a}, [&](ad::Tape& t) { return ad::sum(ad::softplus(t.param(a))); });
        check("transpose", {&a}, [&](ad::Tape& t) {
            return ad::sum(ad::tanh(ad::transpose(t.param(a))));
        });
        check("row_mean", {&a}, [&](ad::Tape& t) {
            return ad::sum(ad::tanh(ad::row_mean(t.param(a))));
        });
        check("gather_rows", {&a}, [&](ad::Tape& t) {
            return ad::sum(ad::tanh(ad::gather_rows(t.param(a), {0, r - 1, 0})));
        });
        check("gather_cols", {&a}, [&](ad::Tape& t) {
            return ad::sum(ad::tanh(ad::gather_cols(t.param(a), {c - 1, 0})));
        });
        check("concat_rows", {&a, &row}, [&](ad::Tape& t) {
            return ad::sum(ad::tanh(ad::concat_rows({t.param(a), t.param(row)})));
        });
        check("log_softmax", {&a}, [&](ad::Tape& t) {
            return ad::sum(ad::gather_cols(ad::log_softmax(t.param(a)), {0}));
        });
        check("logsumexp", {&a},
              [&](ad::Tape& t) { return ad::sum(ad::logsumexp(t.param(a))); });
        check("attention_softmax", {&sq}, [&](ad::Tape& t) {
            return ad::sum(ad::tanh(ad::attention_softmax(t.param(sq))));
        });
        Matd mask = Matd::Ones(r, r);
        mask(0, r - 1) = 0.0;
        check("attention_softmax masked", {&sq}, [&](ad::Tape& t) {
            return ad::sum(ad::tanh(ad::attention_softmax(t.param(sq), mask)));
        });
        check("sub", {&a}, [&](ad::Tape& t) {
            return ad::sum(ad::tanh(ad::sub(t.param(a), ad::scalar_mul(t.param(a), 0.25))));
        });
    }
}

TEST_CASE("log_softmax rows exponentiate-sum to one") {
    Rng rng(3);
    ad::Tape tape;
    ad::Var out = ad::log_softmax(tape.constant(random_mat(5, 7, rng, 3.0)));
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        CHECK(out.value().row(i).array().exp().sum() == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("attention softmax rows sum to one and honor the mask") {
    Rng rng(4);
    ad::Tape tape;
    Matd mask = Matd::Ones(4, 4);
    mask(2, 0) = 0.0;
    mask(2, 3) = 0.0;
    ad::Var probs = ad::attention_softmax(tape.constant(random_mat(4, 4, rng, 2.0)), mask);
    for (Eigen::Index i = 0; i < 4; ++i) {
        CHECK(probs.value().row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK(probs.value()(2, 0) == 0.0);
    CHECK(probs.value()(2, 3) == 0.0);
}

TEST_CASE("backward is single use") {
    ad::Parameter w("w", Matd::Ones(1, 1));
    ad::Tape tape;
    ad::Var loss = ad::sum(tape.param(w));
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), Error);
}

TEST_CASE("backward rejects non-scalar loss") {
    ad::Tape tape;
    ad::Var v = tape.constant(Matd::Ones(2, 2));
    CHECK_THROWS_WITH_AS(tape.backward(v), doctest::Contains("scalar"), Error);
}

TEST_CASE("gradients accumulate into parameters across tapes until zeroed") {
    ad::Parameter w("w", Matd::Ones(1, 1));
    {
        ad::Tape tape;
        tape.backward(ad::sum(tape.param(w)));
    }
    {
        ad::Tape tape;
        tape.backward(ad::sum(tape.param(w)));
    }
    CHECK(w.grad(0, 0) == 2.0);
    w.zero_grad();
    CHECK(w.grad(0, 0) == 0.0);
}

TEST_CASE("adam leaves parameters with zero gradient unchanged") {
    ad::Parameter w("w", Matd::Constant(2, 2, 1.5));
    Matd before = w.value;
    ad::adam_step({&w}, {});
    CHECK((w.value - before).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adam first step without warmup moves by about lr") {
    ad::Parameter w("w", Matd::Zero(1, 1));
    w.grad(0, 0) = 1.0;
    ad::AdamConfig cfg;
    cfg.warmup_steps = 0;
    ad::adam_step({&w}, cfg);
    CHECK(w.value(0, 0) == doctest::Approx(-cfg.lr).epsilon(1e-6));
}

TEST_CASE("warmup scales the effective learning rate linearly") {
    // Same moments and step; only the warmup factor differs at step 100/200.
    ad::Parameter full("full", Matd::Zero(1, 1));
    ad::Parameter warm("warm", Matd::Zero(1, 1));
    full.step = 99;
    warm.step = 99;
    full.grad(0, 0) = 1.0;
    warm.grad(0, 0) = 1.0;
    ad::AdamConfig no_warmup;
    no_warmup.warmup_steps = 0;
    ad::AdamConfig with_warmup;
    with_warmup.warmup_steps = 200;
    ad::adam_step({&full}, no_warmup);
    ad::adam_step({&warm}, with_warmup);
    CHECK(warm.value(0, 0) == doctest::Approx(0.5 * full.value(0, 0)).epsilon(1e-12));
}

TEST_CASE("values are freed after backward") {
    ad::Parameter w("w", Matd::Ones(1, 1));
    ad::Tape tape;
    ad::Var loss = ad::sum(tape.param(w));
    tape.backward(loss);
    CHECK_THROWS_AS((void)loss.value(), Error);
}
