#ifndef REMOVALNET_NNKIT_LOSS_HPP
#define REMOVALNET_NNKIT_LOSS_HPP

#include <cmath>
#include <vector>

#include "removalnet/nnkit/types.hpp"

namespace rnet {

template <typename Scalar>
Mat<Scalar> log_softmax(const Mat<Scalar>& logits, Scalar temperature = Scalar(1)) {
  Mat<Scalar> out = logits / temperature;
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    const Scalar m = out.col(j).maxCoeff();
    const Scalar lse = m + std::log((out.col(j).array() - m).exp().sum());
    out.col(j).array() -= lse;
  }
  return out;
}

template <typename Scalar>
Mat<Scalar> softmax(const Mat<Scalar>& logits, Scalar temperature = Scalar(1)) {
  return log_softmax(logits, temperature).array().exp().matrix();
}

/// Loss value plus its gradient with respect to the logits it was computed on.
template <typename Scalar>
struct LossGrad {
  Scalar value = 0;
  Mat<Scalar> grad;
};

/// Mean cross-entropy over the batch.
template <typename Scalar>
LossGrad<Scalar> cross_entropy(const Mat<Scalar>& logits, const std::vector<int>& labels) {
  const Eigen::Index n = logits.cols();
  const Mat<Scalar> logp = log_softmax(logits);
  LossGrad<Scalar> out;
  out.grad = logp.array().exp().matrix();
  for (Eigen::Index j = 0; j < n; ++j) {
    const int y = labels[static_cast<std::size_t>(j)];
    out.value -= logp(y, j);
    out.grad(y, j) -= Scalar(1);
  }
  out.value /= static_cast<Scalar>(n);
  out.grad /= static_cast<Scalar>(n);
  return out;
}

/// Per-sample cross-entropy (no batch averaging) and its gradient.
template <typename Scalar>
LossGrad<Scalar> cross_entropy_sum(const Mat<Scalar>& logits, const std::vector<int>& labels) {
  LossGrad<Scalar> out = cross_entropy(logits, labels);
  const auto n = static_cast<Scalar>(logits.cols());
  out.value *= n;
  out.grad *= n;
  return out;
}

/// Mean KL(softmax(logits) || softmax(target)) over the batch, natural log.
/// The target is a constant; only the first argument receives a gradient.
template <typename Scalar>
LossGrad<Scalar> kl_to_target(const Mat<Scalar>& logits, const Mat<Scalar>& target_logits) {
  const Eigen::Index n = logits.cols();
  const Mat<Scalar> logp = log_softmax(logits);
  const Mat<Scalar> logq = log_softmax(target_logits);
  const Mat<Scalar> p = logp.array().exp().matrix();
  const Mat<Scalar> a = logp - logq;
  LossGrad<Scalar> out;
  out.grad.resize(logits.rows(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Scalar kl = p.col(j).dot(a.col(j));
    out.value += kl;
    out.grad.col(j) = p.col(j).cwiseProduct((a.col(j).array() - kl).matrix());
  }
  out.value /= static_cast<Scalar>(n);
  out.grad /= static_cast<Scalar>(n);
  return out;
}

/// Mean KL(softmax(teacher/T) || softmax(student/T)) * T^2, the usual
/// distillation objective. Gradient is with respect to the student logits.
template <typename Scalar>
LossGrad<Scalar> distillation_kl(const Mat<Scalar>& student, const Mat<Scalar>& teacher,
                                 Scalar temperature) {
  const Eigen::Index n = student.cols();
  const Mat<Scalar> logq = log_softmax(student, temperature);
  const Mat<Scalar> logp = log_softmax(teacher, temperature);
  const Mat<Scalar> p = logp.array().exp().matrix();
  const Mat<Scalar> q = logq.array().exp().matrix();
  LossGrad<Scalar> out;
  out.value = (p.array() * (logp - logq).array()).sum() * temperature * temperature /
              static_cast<Scalar>(n);
  out.grad = (q - p) * temperature / static_cast<Scalar>(n);
  return out;
}

/// Mean over columns of ||a_j - b_j||_2, gradient with respect to a. Columns
/// with zero distance contribute a zero subgradient.
template <typename Scalar>
LossGrad<Scalar> mean_l2_distance(const Mat<Scalar>& a, const Mat<Scalar>& b) {
  const Eigen::Index n = a.cols();
  LossGrad<Scalar> out;
  out.grad = a - b;
  for (Eigen::Index j = 0; j < n; ++j) {
    const Scalar d = out.grad.col(j).norm();
    out.value += d;
    if (d > Scalar(0)) {
      out.grad.col(j) /= d;
    } else {
      out.grad.col(j).setZero();
    }
  }
  out.value /= static_cast<Scalar>(n);
  out.grad /= static_cast<Scalar>(n);
  return out;
}

}  // namespace rnet

#endif  // REMOVALNET_NNKIT_LOSS_HPP
