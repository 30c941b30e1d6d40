#include "dialret/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace dialret::ad {

namespace {

std::string shape_str(const Matd& m) {
    return str("(", m.rows(), "x", m.cols(), ")");
}

Tape* tape_of(Var a) {
    DIALRET_REQUIRE(a.tape() != nullptr, "Var is not bound to a tape");
    return a.tape();
}

Tape* tape_of(Var a, Var b) {
    DIALRET_REQUIRE(a.tape() != nullptr && a.tape() == b.tape(),
                    "operands belong to different tapes");
    return a.tape();
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape

const Matd& Var::value() const {
    DIALRET_REQUIRE(tape_ != nullptr, "Var is not bound to a tape");
    return tape_->value_of(index_);
}

double Var::scalar() const {
    const Matd& v = value();
    DIALRET_REQUIRE(v.rows() == 1 && v.cols() == 1, "expected a 1x1 value, got ",
                    shape_str(v));
    return v(0, 0);
}

Var Tape::record(const char* op, Matd value, std::vector<int> inputs, BackwardFn fn) {
    DIALRET_REQUIRE(!consumed_, "tape already consumed by backward(); op: ", op);
    DIALRET_REQUIRE(value.allFinite(), "non-finite output of kernel ", op);
    Node node;
    node.value = std::move(value);
    node.inputs = std::move(inputs);
    node.backward = std::move(fn);
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Matd value) {
    return record("constant", std::move(value), {}, nullptr);
}

Var Tape::param(Parameter& param) {
    Var v = record("param", param.value, {}, nullptr);
    nodes_.back().bound = &param;
    return v;
}

const Matd& Tape::value_of(int index) const {
    DIALRET_REQUIRE(!consumed_, "tape values were freed by backward()");
    return nodes_[static_cast<size_t>(index)].value;
}

void Tape::accumulate_grad(int index, const Matd& g) {
    Node& node = nodes_[static_cast<size_t>(index)];
    if (node.grad.size() == 0) {
        node.grad = Matd::Zero(node.value.rows(), node.value.cols());
    }
    DIALRET_REQUIRE(node.grad.rows() == g.rows() && node.grad.cols() == g.cols(),
                    "gradient shape mismatch: node ", shape_str(node.grad), " vs incoming ",
                    shape_str(g));
    node.grad += g;
}

void Tape::backward(Var loss) {
    DIALRET_REQUIRE(!consumed_, "backward() called twice on the same tape");
    DIALRET_REQUIRE(!nodes_.empty(), "backward() on an empty tape");
    DIALRET_REQUIRE(loss.tape() == this, "loss Var belongs to a different tape");
    const Matd& lv = nodes_[static_cast<size_t>(loss.index())].value;
    DIALRET_REQUIRE(lv.rows() == 1 && lv.cols() == 1, "loss must be scalar, got ",
                    shape_str(lv));

    accumulate_grad(loss.index(), Matd::Ones(1, 1));
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
        Node& node = nodes_[static_cast<size_t>(i)];
        if (node.grad.size() == 0 || !node.backward) continue;
        node.backward(node.grad);
    }
    for (Node& node : nodes_) {
        if (node.bound && node.grad.size() != 0) {
            node.bound->grad += node.grad;
        }
        node.value.resize(0, 0);  // free intermediates
        node.grad.resize(0, 0);
        node.backward = nullptr;
    }
    consumed_ = true;
}

// ---------------------------------------------------------------------------
// Kernels

Var matmul(Var a, Var b) {
    Tape* t = tape_of(a, b);
    const Matd& av = a.value();
    const Matd& bv = b.value();
    DIALRET_REQUIRE(av.cols() == bv.rows(), "matmul shape mismatch: ", shape_str(av),
                    " * ", shape_str(bv));
    int ai = a.index(), bi = b.index();
    Matd a_saved = av, b_saved = bv;
    return t->record("matmul", av * bv, {ai, bi},
                     [t, ai, bi, a_saved, b_saved](const Matd& g) {
                         t->accumulate_grad(ai, g * b_saved.transpose());
                         t->accumulate_grad(bi, a_saved.transpose() * g);
                     });
}

Var add(Var a, Var b) {
    Tape* t = tape_of(a, b);
    const Matd& av = a.value();
    const Matd& bv = b.value();
    int ai = a.index(), bi = b.index();
    if (av.rows() == bv.rows() && av.cols() == bv.cols()) {
        return t->record("add", av + bv, {ai, bi}, [t, ai, bi](const Matd& g) {
            t->accumulate_grad(ai, g);
            t->accumulate_grad(bi, g);
        });
    }
    DIALRET_REQUIRE(bv.rows() == 1 && bv.cols() == av.cols(),
                    "add shape mismatch: ", shape_str(av), " + ", shape_str(bv),
                    " (only row-vector broadcast is supported)");
    Matd out = av.rowwise() + bv.row(0);
    return t->record("add", std::move(out), {ai, bi}, [t, ai, bi](const Matd& g) {
        t->accumulate_grad(ai, g);
        t->accumulate_grad(bi, g.colwise().sum());
    });
}

Var sub(Var a, Var b) {
    return add(a, scalar_mul(b, -1.0));
}

Var scalar_mul(Var a, double c) {
    Tape* t = tape_of(a);
    int ai = a.index();
    return t->record("scalar_mul", a.value() * c, {ai}, [t, ai, c](const Matd& g) {
        t->accumulate_grad(ai, c * g);
    });
}

Var tanh(Var a) {
    Tape* t = tape_of(a);
    int ai = a.index();
    Matd out = a.value().array().tanh();
    Matd out_saved = out;
    return t->record("tanh", std::move(out), {ai}, [t, ai, out_saved](const Matd& g) {
        t->accumulate_grad(ai, ((1.0 - out_saved.array().square()) * g.array()).matrix());
    });
}

Var sigmoid(Var a) {
    Tape* t = tape_of(a);
    int ai = a.index();
    Matd out = a.value().unaryExpr([](double z) { return stable_sigmoid(z); });
    Matd out_saved = out;
    return t->record("sigmoid", std::move(out), {ai}, [t, ai, out_saved](const Matd& g) {
        Matd d = (out_saved.array() * (1.0 - out_saved.array()) * g.array()).matrix();
        t->accumulate_grad(ai, d);
    });
}

Var softplus(Var a) {
    Tape* t = tape_of(a);
    int ai = a.index();
    Matd in_saved = a.value();
    Matd out = in_saved.unaryExpr([](double z) { return stable_softplus(z); });
    return t->record("softplus", std::move(out), {ai}, [t, ai, in_saved](const Matd& g) {
        Matd d = in_saved.unaryExpr([](double z) { return stable_sigmoid(z); });
        t->accumulate_grad(ai, (d.array() * g.array()).matrix());
    });
}

Var transpose(Var a) {
    Tape* t = tape_of(a);
    int ai = a.index();
    return t->record("transpose", a.value().transpose(), {ai}, [t, ai](const Matd& g) {
        t->accumulate_grad(ai, g.transpose());
    });
}

Var row_mean(Var a) {
    Tape* t = tape_of(a);
    const Matd& av = a.value();
    DIALRET_REQUIRE(av.rows() >= 1, "row_mean of an empty matrix");
    int ai = a.index();
    Eigen::Index rows = av.rows();
    Matd out = av.colwise().mean();
    return t->record("row_mean", std::move(out), {ai}, [t, ai, rows](const Matd& g) {
        Matd spread = (1.0 / static_cast<double>(rows)) * g.replicate(rows, 1);
        t->accumulate_grad(ai, spread);
    });
}

Var gather_rows(Var a, const std::vector<int>& ids) {
    Tape* t = tape_of(a);
    const Matd& av = a.value();
    DIALRET_REQUIRE(!ids.empty(), "gather_rows with empty id list");
    for (int id : ids) {
        DIALRET_REQUIRE(id >= 0 && id < av.rows(), "gather_rows id ", id,
                        " out of range for ", shape_str(av));
    }
    int ai = a.index();
    Matd out(static_cast<Eigen::Index>(ids.size()), av.cols());
    for (size_t i = 0; i < ids.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = av.row(ids[i]);
    }
    Eigen::Index rows = av.rows(), cols = av.cols();
    std::vector<int> ids_saved = ids;
    return t->record("gather_rows", std::move(out), {ai},
                     [t, ai, ids_saved, rows, cols](const Matd& g) {
                         Matd scatter = Matd::Zero(rows, cols);
                         for (size_t i = 0; i < ids_saved.size(); ++i) {
                             scatter.row(ids_saved[i]) += g.row(static_cast<Eigen::Index>(i));
                         }
                         t->accumulate_grad(ai, scatter);
                     });
}

Var gather_cols(Var a, const std::vector<int>& ids) {
    Tape* t = tape_of(a);
    const Matd& av = a.value();
    DIALRET_REQUIRE(!ids.empty(), "gather_cols with empty id list");
    for (int id : ids) {
        DIALRET_REQUIRE(id >= 0 && id < av.cols(), "gather_cols id ", id,
                        " out of range for ", shape_str(av));
    }
    int ai = a.index();
    Matd out(av.rows(), static_cast<Eigen::Index>(ids.size()));
    for (size_t j = 0; j < ids.size(); ++j) {
        out.col(static_cast<Eigen::Index>(j)) = av.col(ids[j]);
    }
    Eigen::Index rows = av.rows(), cols = av.cols();
    std::vector<int> ids_saved = ids;
    return t->record("gather_cols", std::move(out), {ai},
                     [t, ai, ids_saved, rows, cols](const Matd& g) {
                         Matd scatter = Matd::Zero(rows, cols);
                         for (size_t j = 0; j < ids_saved.size(); ++j) {
                             scatter.col(ids_saved[j]) += g.col(static_cast<Eigen::Index>(j));
                         }
                         t->accumulate_grad(ai, scatter);
                     });
}

Var concat_rows(const std::vector<Var>& parts) {
    DIALRET_REQUIRE(!parts.empty(), "concat_rows with no inputs");
    Tape* t = tape_of(parts.front());
    Eigen::Index cols = parts.front().value().cols();
    Eigen::Index rows = 0;
    std::vector<int> indices;
    std::vector<Eigen::Index> part_rows;
    for (const Var& p : parts) {
        DIALRET_REQUIRE(p.tape() == t, "concat_rows inputs belong to different tapes");
        DIALRET_REQUIRE(p.value().cols() == cols, "concat_rows column mismatch: ",
                        shape_str(parts.front().value()), " vs ", shape_str(p.value()));
        indices.push_back(p.index());
        part_rows.push_back(p.value().rows());
        rows += p.value().rows();
    }
    Matd out(rows, cols);
    Eigen::Index at = 0;
    for (const Var& p : parts) {
        out.middleRows(at, p.value().rows()) = p.value();
        at += p.value().rows();
    }
    return t->record("concat_rows", std::move(out), indices,
                     [t, indices, part_rows](const Matd& g) {
                         Eigen::Index offset = 0;
                         for (size_t i = 0; i < indices.size(); ++i) {
                             t->accumulate_grad(indices[i], g.middleRows(offset, part_rows[i]));
                             offset += part_rows[i];
                         }
                     });
}

Var log_softmax(Var a) {
    Tape* t = tape_of(a);
    int ai = a.index();
    Matd out = log_softmax_rows(a.value());
    Matd probs = out.array().exp();
    return t->record("log_softmax", std::move(out), {ai}, [t, ai, probs](const Matd& g) {
        Matd d(g.rows(), g.cols());
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
            double gsum = g.row(i).sum();
            d.row(i) = g.row(i) - gsum * probs.row(i);
        }
        t->accumulate_grad(ai, d);
    });
}

Var logsumexp(Var a) {
    Tape* t = tape_of(a);
    int ai = a.index();
    Matd probs = softmax_rows(a.value());
    return t->record("logsumexp", logsumexp_rows(a.value()), {ai},
                     [t, ai, probs](const Matd& g) {
                         Matd d(probs.rows(), probs.cols());
                         for (Eigen::Index i = 0; i < probs.rows(); ++i) {
                             d.row(i) = g(i, 0) * probs.row(i);
                         }
                         t->accumulate_grad(ai, d);
                     });
}

Var attention_softmax(Var scores, const std::optional<Matd>& mask) {
    Tape* t = tape_of(scores);
    const Matd& sv = scores.value();
    int si = scores.index();
    if (mask) {
        DIALRET_REQUIRE(mask->rows() == sv.rows() && mask->cols() == sv.cols(),
                        "attention mask shape mismatch: scores ", shape_str(sv), " mask ",
                        shape_str(*mask));
    }
    auto masked = [&](Eigen::Index i, Eigen::Index j) {
        return mask && (*mask)(i, j) == 0.0;
    };
    // Max subtraction per row over the unmasked entries; masked entries get
    // exactly zero probability.
    Matd probs(sv.rows(), sv.cols());
    for (Eigen::Index i = 0; i < sv.rows(); ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < sv.cols(); ++j) {
            if (!masked(i, j)) m = std::max(m, sv(i, j));
        }
        DIALRET_REQUIRE(std::isfinite(m), "attention mask has a fully masked row ", i);
        double denom = 0.0;
        for (Eigen::Index j = 0; j < sv.cols(); ++j) {
            probs(i, j) = masked(i, j) ? 0.0 : std::exp(sv(i, j) - m);
            denom += probs(i, j);
        }
        probs.row(i) /= denom;
    }
    Matd probs_saved = probs;
    return t->record("attention_softmax", std::move(probs), {si},
                     [t, si, probs_saved](const Matd& g) {
                         Matd d(g.rows(), g.cols());
                         for (Eigen::Index i = 0; i < g.rows(); ++i) {
                             double dot = g.row(i).cwiseProduct(probs_saved.row(i)).sum();
                             d.row(i) = probs_saved.row(i).cwiseProduct(g.row(i))
                                        - dot * probs_saved.row(i);
                         }
                         t->accumulate_grad(si, d);
                     });
}

Var sum(Var a) {
    Tape* t = tape_of(a);
    int ai = a.index();
    Eigen::Index rows = a.value().rows(), cols = a.value().cols();
    Matd out(1, 1);
    out(0, 0) = a.value().sum();
    return t->record("sum", std::move(out), {ai}, [t, ai, rows, cols](const Matd& g) {
        t->accumulate_grad(ai, Matd::Constant(rows, cols, g(0, 0)));
    });
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(const std::vector<Parameter*>& params, const AdamConfig& cfg) {
    for (Parameter* p : params) {
        p->step += 1;
        double t = static_cast<double>(p->step);
        double warmup_factor = 1.0;
        if (cfg.warmup_steps > 0) {
            warmup_factor = std::min(1.0, t / static_cast<double>(cfg.warmup_steps));
        }
        double lr = cfg.lr * warmup_factor;
        p->moment1 = cfg.beta1 * p->moment1 + (1.0 - cfg.beta1) * p->grad;
        p->moment2 = cfg.beta2 * p->moment2
                     + (1.0 - cfg.beta2) * p->grad.array().square().matrix();
        double bias1 = 1.0 - std::pow(cfg.beta1, t);
        double bias2 = 1.0 - std::pow(cfg.beta2, t);
        Matd m_hat = p->moment1 / bias1;
        Matd v_hat = p->moment2 / bias2;
        p->value -= lr * (m_hat.array() / (v_hat.array().sqrt() + cfg.eps)).matrix();
    }
}

}  // namespace dialret::ad
