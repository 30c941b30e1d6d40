#pragma once

#include <Eigen/Core>

#include "dialret/common.hpp"

namespace dialret {

/// Dense row-major matrix, the storage type for every numeric object in the
/// project. Training runs in double; embedding shards are float on disk.
template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matd = Mat<double>;
using Matf = Mat<float>;

/// Row-wise logsumexp with max subtraction; returns an r x 1 column.
template <class Derived>
Mat<typename Derived::Scalar> logsumexp_rows(const Eigen::MatrixBase<Derived>& x) {
    using S = typename Derived::Scalar;
    Mat<S> out(x.rows(), 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        S m = x.row(i).maxCoeff();
        out(i, 0) = m + std::log((x.row(i).array() - m).exp().sum());
    }
    return out;
}

/// Row-wise log-softmax with max subtraction.
template <class Derived>
Mat<typename Derived::Scalar> log_softmax_rows(const Eigen::MatrixBase<Derived>& x) {
    using S = typename Derived::Scalar;
    Mat<S> out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        S m = x.row(i).maxCoeff();
        S lse = m + std::log((x.row(i).array() - m).exp().sum());
        out.row(i) = x.row(i).array() - lse;
    }
    return out;
}

/// Row-wise softmax with max subtraction.
template <class Derived>
Mat<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& x) {
    return log_softmax_rows(x).array().exp();
}

template <class S>
S stable_sigmoid(S z) {
    if (z >= S(0)) {
        return S(1) / (S(1) + std::exp(-z));
    }
    S e = std::exp(z);
    return e / (S(1) + e);
}

/// ln(1 + e^z) without overflow.
template <class S>
S stable_softplus(S z) {
    return std::max(z, S(0)) + std::log1p(std::exp(-std::abs(z)));
}

/// Uniform(-scale, scale) matrix from a seeded generator.
inline Matd uniform_matrix(Eigen::Index rows, Eigen::Index cols, double scale, Rng& rng) {
    std::uniform_real_distribution<double> dist(-scale, scale);
    Matd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            m(i, j) = dist(rng);
        }
    }
    return m;
}

}  // namespace dialret
