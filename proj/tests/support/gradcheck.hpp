#pragma once

#include <functional>
#include <vector>

#include "dialret/autodiff.hpp"

namespace dialret::testsupport {

struct GradCheckResult {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
};

/// Central-difference gradient check. build_loss must be a pure function of
/// the parameter values: it is re-evaluated on fresh tapes while coordinates
/// are perturbed by +-h.
inline GradCheckResult grad_check(const std::vector<ad::Parameter*>& params,
                                  const std::function<ad::Var(ad::Tape&)>& build_loss,
                                  double h = 1e-5) {
    for (ad::Parameter* p : params) {
        p->zero_grad();
    }
    ad::Tape tape;
    ad::Var loss = build_loss(tape);
    tape.backward(loss);
    std::vector<Matd> analytic;
    analytic.reserve(params.size());
    for (ad::Parameter* p : params) {
        analytic.push_back(p->grad);
    }

    auto eval = [&]() {
        ad::Tape t;
        return build_loss(t).scalar();
    };

    GradCheckResult result;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        ad::Parameter* p = params[pi];
        for (Eigen::Index i = 0; i < p->value.rows(); ++i) {
            for (Eigen::Index j = 0; j < p->value.cols(); ++j) {
                double saved = p->value(i, j);
                p->value(i, j) = saved + h;
                double plus = eval();
                p->value(i, j) = saved - h;
                double minus = eval();
                p->value(i, j) = saved;
                double fd = (plus - minus) / (2.0 * h);
                double a = analytic[pi](i, j);
                double abs_err = std::abs(a - fd);
                double rel_err = abs_err / std::max({std::abs(a), std::abs(fd), 1e-3});
                result.max_abs_err = std::max(result.max_abs_err, abs_err);
                result.max_rel_err = std::max(result.max_rel_err, rel_err);
            }
        }
    }
    return result;
}

}  // namespace dialret::testsupport
