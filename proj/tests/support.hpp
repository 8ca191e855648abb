#pragma once

#include "cdlm/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace cdlm::test {

inline ModelParams random_params(std::uint64_t seed, const Dims& dims, double scale = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  ModelParams p = ModelParams::zeros(dims);
  for (auto block : p.blocks()) {
    for (double& x : block) x = u(rng);
  }
  return p;
}

inline std::vector<TokenId> random_tokens(std::uint64_t seed, std::size_t vocab, std::size_t n) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<TokenId> pick(0, static_cast<TokenId>(vocab - 1));
  std::vector<TokenId> out(n);
  for (auto& t : out) t = pick(rng);
  return out;
}

inline double scalar_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Plain-loop LSTM: returns h after each token.
struct ScalarRun {
  std::vector<std::vector<double>> h;
  std::vector<std::vector<double>> c;
  std::vector<std::vector<double>> logits;
};

inline ScalarRun scalar_forward(const ModelParams& p, const std::vector<TokenId>& tokens,
                                std::vector<double> h = {}, std::vector<double> c = {}) {
  const std::size_t H = static_cast<std::size_t>(p.hidden());
  const std::size_t E = static_cast<std::size_t>(p.embedding.cols());
  const std::size_t V = static_cast<std::size_t>(p.embedding.rows());
  if (h.empty()) h.assign(H, 0.0);
  if (c.empty()) c.assign(H, 0.0);
  ScalarRun run;
  for (TokenId tok : tokens) {
    std::vector<double> pre(4 * H);
    for (std::size_t r = 0; r < 4 * H; ++r) {
      double s = p.gate_bias(static_cast<Eigen::Index>(r));
      for (std::size_t e = 0; e < E; ++e) {
        s += p.input_weights(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(e)) *
             p.embedding(static_cast<Eigen::Index>(tok), static_cast<Eigen::Index>(e));
      }
      for (std::size_t j = 0; j < H; ++j) {
        s += p.recurrent_weights(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) * h[j];
      }
      pre[r] = s;
    }
    std::vector<double> nh(H), nc(H);
    for (std::size_t j = 0; j < H; ++j) {
      const double i = scalar_sigmoid(pre[j]);
      const double f = scalar_sigmoid(pre[H + j]);
      const double o = scalar_sigmoid(pre[2 * H + j]);
      const double g = std::tanh(pre[3 * H + j]);
      nc[j] = f * c[j] + i * g;
      nh[j] = o * std::tanh(nc[j]);
    }
    h = nh;
    c = nc;
    std::vector<double> logit(V);
    for (std::size_t v = 0; v < V; ++v) {
      double s = p.decoder_bias(static_cast<Eigen::Index>(v));
      for (std::size_t j = 0; j < H; ++j) {
        s += p.decoder(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(j)) * h[j];
      }
      logit[v] = s;
    }
    run.h.push_back(h);
    run.c.push_back(c);
    run.logits.push_back(logit);
  }
  return run;
}

/// Mean next-token NLL of a window from a given state, by plain loops.
inline double scalar_window_loss(const ModelParams& p, const std::vector<TokenId>& window,
                                 std::vector<double> h = {}, std::vector<double> c = {}) {
  std::vector<TokenId> inputs(window.begin(), window.end() - 1);
  const ScalarRun run = scalar_forward(p, inputs, std::move(h), std::move(c));
  double total = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const auto& z = run.logits[t];
    double m = z[0];
    for (double v : z) m = std::max(m, v);
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    total -= z[window[t + 1]] - m - std::log(s);
  }
  return total / static_cast<double>(inputs.size());
}

}  // namespace cdlm::test
