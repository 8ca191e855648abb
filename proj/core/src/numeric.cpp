#include "cdlm/numeric.hpp"

#include <cmath>

namespace cdlm {

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Vector softmax(const Eigen::Ref<const Vector>& logits) {
  const double shift = logits.maxCoeff();
  Vector p = (logits.array() - shift).exp().matrix();
  p /= p.sum();
  return p;
}

double log_sum_exp(const Eigen::Ref<const Vector>& v) {
  const double shift = v.maxCoeff();
  return shift + std::log((v.array() - shift).exp().sum());
}

void softmax_columns(Matrix& logits) {
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    auto col = logits.col(j);
    const double shift = col.maxCoeff();
    col = (col.array() - shift).exp().matrix();
    col /= col.sum();
  }
}

}  // namespace cdlm
