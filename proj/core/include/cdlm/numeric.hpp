#pragma once

#include <Eigen/Dense>

#include <cstdint>

namespace cdlm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using TokenId = std::uint32_t;

double sigmoid(double x);

/// Numerically stable softmax; the result sums to one.
Vector softmax(const Eigen::Ref<const Vector>& logits);

/// log(sum(exp(v))) without overflow.
double log_sum_exp(const Eigen::Ref<const Vector>& v);

/// Column-wise stable softmax, in place.
void softmax_columns(Matrix& logits);

}  // namespace cdlm
