#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace cdlm {

enum class Activation { sigmoid, tanh };

double activate(Activation act, double x);

inline constexpr std::size_t kMaxShapleyPlayers = 4;

/// Shapley value of each summand y_j in the game S -> act(sum_{j in S} y_j),
/// computed exactly over all subsets. The values satisfy efficiency:
/// sum_j L_j == act(sum_j y_j) - act(0), up to rounding.
std::vector<double> shapley_linearize(Activation act, std::span<const double> summands);

/// Element-wise form over equally sized arrays of summands.
std::vector<Eigen::ArrayXd> shapley_linearize(Activation act,
                                              std::span<const Eigen::ArrayXd> summands);

}  // namespace cdlm
