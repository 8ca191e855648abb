#include "cdlm/shapley.hpp"

#include "cdlm/errors.hpp"
#include "cdlm/numeric.hpp"

#include <array>
#include <bit>
#include <cmath>

namespace cdlm {

namespace {

// |S|! (N - |S| - 1)! / N!, indexed [N][|S|].
constexpr std::array<std::array<double, kMaxShapleyPlayers>, kMaxShapleyPlayers + 1> kWeights = {{
    {0.0, 0.0, 0.0, 0.0},
    {1.0, 0.0, 0.0, 0.0},
    {1.0 / 2, 1.0 / 2, 0.0, 0.0},
    {2.0 / 6, 1.0 / 6, 2.0 / 6, 0.0},
    {6.0 / 24, 2.0 / 24, 2.0 / 24, 6.0 / 24},
}};

void check_players(std::size_t n) {
  if (n == 0 || n > kMaxShapleyPlayers) {
    throw ShapeError("shapley_linearize supports 1 to 4 summands");
  }
}

Eigen::ArrayXd activate(Activation act, const Eigen::ArrayXd& x) {
  if (act == Activation::tanh) return x.tanh();
  return 1.0 / (1.0 + (-x).exp());
}

}  // namespace

double activate(Activation act, double x) {
  return act == Activation::tanh ? std::tanh(x) : sigmoid(x);
}

std::vector<double> shapley_linearize(Activation act, std::span<const double> summands) {
  const std::size_t n = summands.size();
  check_players(n);
  const unsigned full = (1u << n);
  std::array<double, 1u << kMaxShapleyPlayers> value{};
  for (unsigned s = 0; s < full; ++s) {
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (s & (1u << j)) sum += summands[j];
    }
    value[s] = activate(act, sum);
  }
  std::vector<double> out(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    const unsigned bit = 1u << j;
    double acc = 0.0;
    for (unsigned s = 0; s < full; ++s) {
      if (s & bit) continue;
      acc += kWeights[n][std::popcount(s)] * (value[s | bit] - value[s]);
    }
    out[j] = acc;
  }
  return out;
}

std::vector<Eigen::ArrayXd> shapley_linearize(Activation act,
                                              std::span<const Eigen::ArrayXd> summands) {
  const std::size_t n = summands.size();
  check_players(n);
  const Eigen::Index len = summands[0].size();
  for (const auto& s : summands) {
    if (s.size() != len) throw ShapeError("shapley summands differ in length");
  }
  const unsigned full = (1u << n);
  std::array<Eigen::ArrayXd, 1u << kMaxShapleyPlayers> value;
  for (unsigned s = 0; s < full; ++s) {
    Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(len);
    for (std::size_t j = 0; j < n; ++j) {
      if (s & (1u << j)) sum += summands[j];
    }
    value[s] = activate(act, sum);
  }
  std::vector<Eigen::ArrayXd> out(n, Eigen::ArrayXd::Zero(len));
  for (std::size_t j = 0; j < n; ++j) {
    const unsigned bit = 1u << j;
    for (unsigned s = 0; s < full; ++s) {
      if (s & bit) continue;
      out[j] += kWeights[n][std::popcount(s)] * (value[s | bit] - value[s]);
    }
  }
  return out;
}

}  // namespace cdlm
