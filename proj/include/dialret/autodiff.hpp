#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dialret/linalg.hpp"

namespace dialret::ad {

/// Named trainable tensor with its gradient and Adam state. Gradients
/// accumulate across backward() calls until zero_grad().
struct Parameter {
    std::string name;
    Matd value;
    Matd grad;
    Matd moment1;
    Matd moment2;
    int64_t step = 0;

    Parameter(std::string param_name, Matd initial)
        : name(std::move(param_name)),
          value(std::move(initial)),
          grad(Matd::Zero(value.rows(), value.cols())),
          moment1(Matd::Zero(value.rows(), value.cols())),
          moment2(Matd::Zero(value.rows(), value.cols())) {}

    void zero_grad() { grad.setZero(); }
};

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t warmup_steps = 200;
};

/// Standard Adam with bias correction; the effective learning rate ramps
/// linearly from 0 over warmup_steps.
void adam_step(const std::vector<Parameter*>& params, const AdamConfig& cfg);

class Tape;

/// Lightweight handle to a tape node; cheap to copy, valid until the owning
/// tape is consumed by backward().
class Var {
public:
    Var() = default;
    const Matd& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    double scalar() const;
    Tape* tape() const { return tape_; }
    int index() const { return index_; }

private:
    friend class Tape;
    Var(Tape* tape, int index) : tape_(tape), index_(index) {}
    Tape* tape_ = nullptr;
    int index_ = -1;
};

/// Records a forward computation and replays it in reverse exactly once.
/// Single-use: a second backward() is an error, which rules out silent
/// gradient accumulation across steps.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf with no gradient flow.
    Var constant(Matd value);
    /// Leaf bound to a parameter; backward() adds into param.grad.
    Var param(Parameter& param);

    /// Reverse sweep from a 1x1 loss. Populates bound parameter gradients and
    /// frees all intermediate values; the tape is consumed afterwards.
    void backward(Var loss);

    bool consumed() const { return consumed_; }
    size_t size() const { return nodes_.size(); }

    using BackwardFn = std::function<void(const Matd& out_grad)>;
    /// Low-level node constructor used by the kernel free functions.
    Var record(const char* op, Matd value, std::vector<int> inputs, BackwardFn fn);

    const Matd& value_of(int index) const;
    /// Accumulates into a node's gradient (allocating zeros on first touch).
    void accumulate_grad(int index, const Matd& g);

private:
    struct Node {
        Matd value;
        Matd grad;  // empty until touched
        std::vector<int> inputs;
        BackwardFn backward;
        Parameter* bound = nullptr;
    };
    std::vector<Node> nodes_;
    bool consumed_ = false;
};

// Kernels. Every kernel checks operand shapes, verifies its output is finite
// and records its backward rule on the tape.
Var matmul(Var a, Var b);
Var add(Var a, Var b);  // same shape, or b a 1 x c row vector broadcast over rows
Var sub(Var a, Var b);
Var scalar_mul(Var a, double c);
Var tanh(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var transpose(Var a);
Var row_mean(Var a);                              // r x c -> 1 x c
Var gather_rows(Var a, const std::vector<int>& ids);
Var gather_cols(Var a, const std::vector<int>& ids);
Var concat_rows(const std::vector<Var>& parts);   // stack vertically
Var log_softmax(Var a);                           // row-wise
Var logsumexp(Var a);                             // row-wise -> r x 1
/// Row-wise softmax for attention scores; entries where mask is zero receive
/// zero probability. mask must match the score shape when present.
Var attention_softmax(Var scores, const std::optional<Matd>& mask = std::nullopt);
Var sum(Var a);                                   // -> 1 x 1

}  // namespace dialret::ad
