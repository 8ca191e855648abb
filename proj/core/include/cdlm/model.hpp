#pragma once

#include "cdlm/numeric.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace cdlm {

/// LSTM gates in storage order. Stacked gate matrices hold the blocks in
/// this order: rows [0, h) input, [h, 2h) forget, [2h, 3h) output,
/// [3h, 4h) cell candidate.
enum class Gate : int { input = 0, forget = 1, output = 2, cell = 3 };

inline constexpr std::array<Gate, 4> kGates = {Gate::input, Gate::forget, Gate::output,
                                              Gate::cell};

constexpr int gate_index(Gate g) { return static_cast<int>(g); }
const char* gate_name(Gate g);

struct Dims {
  std::size_t vocab = 0;
  std::size_t embed = 0;
  std::size_t hidden = 0;

  bool operator==(const Dims&) const = default;
};

/// Every weight of a single-layer LSTM language model.
struct ModelParams {
  Matrix embedding;          // V x d_emb, one row per token
  Matrix input_weights;      // 4 d_h x d_emb
  Matrix recurrent_weights;  // 4 d_h x d_h
  Vector gate_bias;          // 4 d_h
  Matrix decoder;            // V x d_h
  Vector decoder_bias;       // V

  static ModelParams zeros(const Dims& dims);

  Dims dims() const;

  auto input_block(Gate g) { return input_weights.middleRows(gate_index(g) * hidden(), hidden()); }
  auto input_block(Gate g) const {
    return input_weights.middleRows(gate_index(g) * hidden(), hidden());
  }
  auto recurrent_block(Gate g) {
    return recurrent_weights.middleRows(gate_index(g) * hidden(), hidden());
  }
  auto recurrent_block(Gate g) const {
    return recurrent_weights.middleRows(gate_index(g) * hidden(), hidden());
  }
  auto bias_block(Gate g) { return gate_bias.segment(gate_index(g) * hidden(), hidden()); }
  auto bias_block(Gate g) const { return gate_bias.segment(gate_index(g) * hidden(), hidden()); }

  Eigen::Index hidden() const { return recurrent_weights.cols(); }

  /// Flat views over each storage block, in a fixed order.
  std::array<std::span<double>, 6> blocks();
  std::array<std::span<const double>, 6> blocks() const;

  /// Throws ShapeError on inconsistent shapes, NumericalError on non-finite
  /// entries.
  void validate() const;

  bool operator==(const ModelParams& other) const;
};

/// Uniform [-0.1, 0.1] weights, zero biases, from a seeded generator.
ModelParams init_params(std::uint64_t seed, const Dims& dims);

struct LstmState {
  Vector h;
  Vector c;

  static LstmState zeros(Eigen::Index hidden);
};

/// The three pre-activation summands of one gate.
struct GateSummands {
  Vector input;      // W x
  Vector recurrent;  // V h
  Vector bias;       // b
};

struct StepRecord {
  std::array<GateSummands, 4> summands;
  std::array<Vector, 4> activations;  // sigma for i, f, o; tanh for g
};

struct StepResult {
  LstmState state;
  StepRecord record;
};

StepResult lstm_step(const ModelParams& params, const Eigen::Ref<const Vector>& x,
                     const LstmState& state);

struct ForwardResult {
  std::vector<LstmState> states;  // state after consuming token t
  std::vector<Vector> logits;     // logits at t predict token t + 1
  std::vector<StepRecord> records;
};

/// Runs the recurrence from the all-zero state.
ForwardResult forward(const ModelParams& params, std::span<const TokenId> tokens);

Vector embed(const ModelParams& params, TokenId id);

Vector decode(const ModelParams& params, const Eigen::Ref<const Vector>& h);

/// p(tokens[t + 1] | tokens[0..t]) for every t < T - 1, streaming with
/// constant memory.
std::vector<double> next_token_probabilities(const ModelParams& params,
                                             std::span<const TokenId> tokens);

/// Natural-log version of next_token_probabilities.
std::vector<double> next_token_log_probabilities(const ModelParams& params,
                                                 std::span<const TokenId> tokens);

}  // namespace cdlm
