#pragma once

#include <cmath>

#include "sim/types.hpp"

namespace sim {

template <typename Scalar>
Vec<Scalar> softmax(const Vec<Scalar>& logits) {
  const Scalar peak = logits.maxCoeff();
  Vec<Scalar> out = (logits.array() - peak).exp().matrix();
  out /= out.sum();
  return out;
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  using std::exp;
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + exp(-x));
  const Scalar e = exp(x);
  return e / (Scalar(1) + e);
}

/// Vector-Jacobian product of softmax: given y = softmax(z) and dL/dy, returns dL/dz.
inline Eigen::VectorXd softmax_backward(const Eigen::VectorXd& y, const Eigen::VectorXd& dy) {
  return (y.array() * (dy.array() - y.dot(dy))).matrix();
}

template <typename Scalar>
int argmax(const Vec<Scalar>& v) {
  Eigen::Index k = 0;
  v.maxCoeff(&k);
  return static_cast<int>(k);
}

}  // namespace sim
