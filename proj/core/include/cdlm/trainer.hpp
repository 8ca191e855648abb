#pragma once

#include "cdlm/model.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cdlm {

struct TrainConfig {
  double learning_rate = 1.0;
  double clip_threshold = 0.25;
  std::size_t epochs = 1;
  std::size_t bptt_window = 35;  // tokens per window, including the final target
  std::size_t batch_size = 20;
  std::uint64_t seed = 1;
  std::size_t eval_interval = 0;  // batches between evaluations; 0 = once per epoch

  void validate() const;
};

/// Gradients, laid out exactly like ModelParams.
struct GradientSet {
  Matrix embedding;
  Matrix input_weights;
  Matrix recurrent_weights;
  Vector gate_bias;
  Matrix decoder;
  Vector decoder_bias;

  static GradientSet zeros_like(const ModelParams& params);

  std::array<std::span<double>, 6> blocks();
  std::array<std::span<const double>, 6> blocks() const;

  double global_norm() const;
  void scale(double factor);
  bool all_finite() const;
};

/// Mean negative log-likelihood of targets under softmax(logits).
double cross_entropy_loss(std::span<const Vector> logits, std::span<const TokenId> targets);

struct BpttResult {
  GradientSet grads;
  double loss = 0.0;
  LstmState final_state;
};

/// Exact reverse-mode gradients of the mean next-token loss over one window.
/// The window's first T-1 tokens are inputs, its last T-1 tokens targets; the
/// carried state is a constant.
BpttResult bptt_gradients(const ModelParams& params, std::span<const TokenId> window,
                          const LstmState& carried);

/// Batched state for `batch` parallel streams: hidden and cell are d_h x B.
struct BatchState {
  Matrix h;
  Matrix c;

  static BatchState zeros(Eigen::Index hidden, Eigen::Index batch);
};

struct BatchBpttResult {
  GradientSet grads;
  double loss = 0.0;
  BatchState final_state;
};

/// Same as bptt_gradients over B equal-length windows at once; the loss is
/// the mean over all T-1 by B predictions.
BatchBpttResult bptt_gradients_batch(const ModelParams& params,
                                     std::span<const std::vector<TokenId>> windows,
                                     const BatchState& carried);

struct ClipReport {
  double norm_before = 0.0;
  double scale = 1.0;
};

/// Rescales grads to global norm `clip` when above it. Throws NumericalError
/// on non-finite gradients.
ClipReport clip_gradients(GradientSet& grads, double clip);

/// theta <- theta - lr * clipped(grads).
ClipReport clip_and_step(ModelParams& params, GradientSet& grads, double lr, double clip);

double perplexity(const ModelParams& params, std::span<const TokenId> corpus);

struct TrainLogRow {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  double train_loss = 0.0;
  std::string eval_metric_name;
  double eval_metric_value = 0.0;
  double wall_seconds = 0.0;
};

struct EvalPoint {
  std::size_t epoch = 0;  // 0 = before training
  std::size_t batch = 0;  // batches completed within epoch
  std::size_t epoch_batches = 0;
  double train_loss = 0.0;
};

/// Called at every evaluation point with a read-only view of the parameters.
/// Returns an optional (name, value) pair for the training log.
using EvalCallback =
    std::function<std::optional<std::pair<std::string, double>>(const EvalPoint&, const ModelParams&)>;

struct TrainResult {
  std::vector<TrainLogRow> log;
  std::size_t steps = 0;
};

/// Truncated-BPTT SGD over a contiguous corpus split into batch_size streams.
/// Throws NumericalError when the loss becomes non-finite.
TrainResult train(ModelParams& params, std::span<const TokenId> corpus, const TrainConfig& config,
                  const EvalCallback& on_eval = {});

/// One rule instance for the gradient probe: `window[alpha_offset]` is the
/// open symbol, the scaffold spans the next k tokens and the close symbol
/// sits at alpha_offset + k + 1.
struct RuleWindow {
  std::vector<TokenId> window;
  std::size_t alpha_offset = 0;
  std::size_t k = 0;
};

struct GradientProbeReport {
  std::vector<std::pair<std::size_t, double>> offsets;  // (d, mean |dE/dh|)
  std::size_t samples = 0;
};

/// Mean L2 norm of d(-log p(close symbol))/dh at scaffold token d, for
/// d in [0, k). All instances must share one k.
GradientProbeReport scaffold_gradient_probe(const ModelParams& params,
                                            std::span<const RuleWindow> instances);

}  // namespace cdlm
