#include "cdlm/model.hpp"

#include "cdlm/errors.hpp"

#include <cmath>
#include <random>
#include <string>

namespace cdlm {

namespace {

void check_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

void check_token(TokenId id, const ModelParams& params) {
  if (id >= static_cast<std::size_t>(params.embedding.rows())) {
    throw ShapeError("token id " + std::to_string(id) + " outside vocabulary of size " +
                     std::to_string(params.embedding.rows()));
  }
}

Vector activate_gates(const Vector& pre, Eigen::Index h) {
  Vector act(pre.size());
  act.head(3 * h) = (1.0 / (1.0 + (-pre.head(3 * h).array()).exp())).matrix();
  act.tail(h) = pre.tail(h).array().tanh().matrix();
  return act;
}

}  // namespace

const char* gate_name(Gate g) {
  switch (g) {
    case Gate::input:
      return "input";
    case Gate::forget:
      return "forget";
    case Gate::output:
      return "output";
    case Gate::cell:
      return "cell";
  }
  return "?";
}

ModelParams ModelParams::zeros(const Dims& dims) {
  const auto v = static_cast<Eigen::Index>(dims.vocab);
  const auto e = static_cast<Eigen::Index>(dims.embed);
  const auto h = static_cast<Eigen::Index>(dims.hidden);
  ModelParams p;
  p.embedding = Matrix::Zero(v, e);
  p.input_weights = Matrix::Zero(4 * h, e);
  p.recurrent_weights = Matrix::Zero(4 * h, h);
  p.gate_bias = Vector::Zero(4 * h);
  p.decoder = Matrix::Zero(v, h);
  p.decoder_bias = Vector::Zero(v);
  return p;
}

Dims ModelParams::dims() const {
  return Dims{static_cast<std::size_t>(embedding.rows()),
              static_cast<std::size_t>(embedding.cols()),
              static_cast<std::size_t>(recurrent_weights.cols())};
}

std::array<std::span<double>, 6> ModelParams::blocks() {
  auto view = [](auto& m) { return std::span<double>(m.data(), static_cast<std::size_t>(m.size())); };
  return {view(embedding), view(input_weights), view(recurrent_weights),
          view(gate_bias), view(decoder),       view(decoder_bias)};
}

std::array<std::span<const double>, 6> ModelParams::blocks() const {
  auto view = [](const auto& m) {
    return std::span<const double>(m.data(), static_cast<std::size_t>(m.size()));
  };
  return {view(embedding), view(input_weights), view(recurrent_weights),
          view(gate_bias), view(decoder),       view(decoder_bias)};
}

void ModelParams::validate() const {
  const auto v = embedding.rows();
  const auto e = embedding.cols();
  const auto h = recurrent_weights.cols();
  check_shape(v >= 1 && e >= 1 && h >= 1, "model dimensions must be positive");
  check_shape(input_weights.rows() == 4 * h && input_weights.cols() == e,
              "input weights must be 4*d_h x d_emb");
  check_shape(recurrent_weights.rows() == 4 * h, "recurrent weights must be 4*d_h x d_h");
  check_shape(gate_bias.size() == 4 * h, "gate bias must have length 4*d_h");
  check_shape(decoder.rows() == v && decoder.cols() == h, "decoder must be V x d_h");
  check_shape(decoder_bias.size() == v, "decoder bias must have length V");
  for (const auto& block : blocks()) {
    for (double x : block) {
      if (!std::isfinite(x)) throw NumericalError("non-finite model parameter");
    }
  }
}

bool ModelParams::operator==(const ModelParams& other) const {
  if (dims() != other.dims()) return false;
  const auto a = blocks();
  const auto b = other.blocks();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) return false;
    for (std::size_t j = 0; j < a[i].size(); ++j) {
      if (a[i][j] != b[i][j]) return false;
    }
  }
  return true;
}

ModelParams init_params(std::uint64_t seed, const Dims& dims) {
  if (dims.vocab == 0 || dims.embed == 0 || dims.hidden == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  ModelParams p = ModelParams::zeros(dims);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(-0.1, 0.1);
  auto fill = [&](Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng);
  };
  fill(p.embedding);
  fill(p.input_weights);
  fill(p.recurrent_weights);
  fill(p.decoder);
  return p;
}

LstmState LstmState::zeros(Eigen::Index hidden) {
  return LstmState{Vector::Zero(hidden), Vector::Zero(hidden)};
}

StepResult lstm_step(const ModelParams& params, const Eigen::Ref<const Vector>& x,
                     const LstmState& state) {
  const Eigen::Index h = params.hidden();
  if (x.size() != params.input_weights.cols()) {
    throw ShapeError("input vector length does not match d_emb");
  }
  if (state.h.size() != h || state.c.size() != h) {
    throw ShapeError("state length does not match d_h");
  }
  const Vector input_part = params.input_weights * x;
  const Vector recurrent_part = params.recurrent_weights * state.h;
  const Vector act = activate_gates(input_part + recurrent_part + params.gate_bias, h);

  StepResult out;
  for (Gate g : kGates) {
    const auto k = gate_index(g);
    out.record.summands[k] = GateSummands{input_part.segment(k * h, h),
                                          recurrent_part.segment(k * h, h),
                                          params.gate_bias.segment(k * h, h)};
    out.record.activations[k] = act.segment(k * h, h);
  }
  const auto& i = out.record.activations[gate_index(Gate::input)];
  const auto& f = out.record.activations[gate_index(Gate::forget)];
  const auto& o = out.record.activations[gate_index(Gate::output)];
  const auto& g = out.record.activations[gate_index(Gate::cell)];
  out.state.c = (f.array() * state.c.array() + i.array() * g.array()).matrix();
  out.state.h = (o.array() * out.state.c.array().tanh()).matrix();
  return out;
}

Vector embed(const ModelParams& params, TokenId id) {
  check_token(id, params);
  return params.embedding.row(id).transpose();
}

Vector decode(const ModelParams& params, const Eigen::Ref<const Vector>& h) {
  return params.decoder * h + params.decoder_bias;
}

ForwardResult forward(const ModelParams& params, std::span<const TokenId> tokens) {
  for (TokenId id : tokens) check_token(id, params);
  ForwardResult out;
  out.states.reserve(tokens.size());
  out.logits.reserve(tokens.size());
  out.records.reserve(tokens.size());
  LstmState state = LstmState::zeros(params.hidden());
  for (TokenId id : tokens) {
    StepResult step = lstm_step(params, params.embedding.row(id).transpose(), state);
    state = step.state;
    out.logits.push_back(decode(params, state.h));
    out.states.push_back(std::move(step.state));
    out.records.push_back(std::move(step.record));
  }
  return out;
}

std::vector<double> next_token_probabilities(const ModelParams& params,
                                             std::span<const TokenId> tokens) {
  std::vector<double> probs = next_token_log_probabilities(params, tokens);
  for (double& p : probs) p = std::exp(p);
  return probs;
}

std::vector<double> next_token_log_probabilities(const ModelParams& params,
                                                 std::span<const TokenId> tokens) {
  for (TokenId id : tokens) check_token(id, params);
  std::vector<double> probs;
  if (tokens.size() < 2) return probs;
  probs.reserve(tokens.size() - 1);
  const Eigen::Index h = params.hidden();
  Vector hs = Vector::Zero(h);
  Vector cs = Vector::Zero(h);
  Vector pre(4 * h);
  Vector logits(params.decoder.rows());
  for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
    pre.noalias() = params.input_weights * params.embedding.row(tokens[t]).transpose();
    pre.noalias() += params.recurrent_weights * hs;
    pre += params.gate_bias;
    const Vector act = activate_gates(pre, h);
    cs = (act.segment(h, h).array() * cs.array() + act.head(h).array() * act.tail(h).array())
             .matrix();
    hs = (act.segment(2 * h, h).array() * cs.array().tanh()).matrix();
    logits.noalias() = params.decoder * hs;
    logits += params.decoder_bias;
    probs.push_back(logits(tokens[t + 1]) - log_sum_exp(logits));
  }
  return probs;
}

}  // namespace cdlm
