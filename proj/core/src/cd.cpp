#include "cdlm/cd.hpp"

#include "cdlm/errors.hpp"
#include "cdlm/shapley.hpp"

#include <algorithm>
#include <string>

namespace cdlm {

namespace {

Activation gate_activation(Gate g) {
  return g == Gate::cell ? Activation::tanh : Activation::sigmoid;
}

void check_reconstructs(const Vector& rel, const Vector& irrel, const Vector& full,
                        const char* what) {
  if (rel.size() != full.size() || irrel.size() != full.size()) {
    throw ShapeError(std::string("decomposed ") + what + " has the wrong length");
  }
  const double err = (rel + irrel - full).norm();
  if (!(err <= kReconstructionTolerance * std::max(full.norm(), 1.0))) {
    throw NumericalError(std::string("decomposition does not reconstruct ") + what +
                         " on entry");
  }
}

/// A gate regrouped for the product rule: relevant, irrelevant and the
/// context-free carrier share.
struct Factor {
  Eigen::ArrayXd rel;
  Eigen::ArrayXd irrel;
  Eigen::ArrayXd base;

  Eigen::ArrayXd total() const { return rel + irrel + base; }
};

Factor regroup(const GatePart& part, bool in_focus, ProductRule rule) {
  Factor f;
  if (rule == ProductRule::carrier) {
    f.rel = part.relevant.array();
    f.irrel = part.irrelevant.array();
    f.base = part.bias.array() + part.constant;
  } else {
    f.rel = part.relevant.array();
    f.irrel = part.irrelevant.array() + part.constant;
    if (in_focus) {
      f.rel += part.bias.array();
    } else {
      f.irrel += part.bias.array();
    }
    f.base = Eigen::ArrayXd::Zero(part.bias.size());
  }
  return f;
}

}  // namespace

FocusSpec::FocusSpec(std::vector<std::size_t> positions) : positions_(std::move(positions)) {
  std::sort(positions_.begin(), positions_.end());
  positions_.erase(std::unique(positions_.begin(), positions_.end()), positions_.end());
}

FocusSpec FocusSpec::range(std::size_t first, std::size_t last) {
  std::vector<std::size_t> p;
  for (std::size_t t = first; t <= last; ++t) p.push_back(t);
  return FocusSpec(std::move(p));
}

bool FocusSpec::contains(std::size_t t) const {
  return std::binary_search(positions_.begin(), positions_.end(), t);
}

std::size_t FocusSpec::max() const {
  if (positions_.empty()) throw ConfigError("empty focus set has no maximum");
  return positions_.back();
}

bool FocusSpec::intersects(const FocusSpec& other) const {
  for (std::size_t t : positions_) {
    if (other.contains(t)) return true;
  }
  return false;
}

FocusSpec FocusSpec::merged(const FocusSpec& other) const {
  std::vector<std::size_t> p = positions_;
  p.insert(p.end(), other.positions_.begin(), other.positions_.end());
  return FocusSpec(std::move(p));
}

Vector GatePart::total() const { return relevant + irrelevant + bias + Vector::Constant(bias.size(), constant); }

DecompState DecompState::zeros(Eigen::Index hidden) {
  return DecompState{Vector::Zero(hidden), Vector::Zero(hidden), Vector::Zero(hidden),
                     Vector::Zero(hidden)};
}

DecomposedStep decompose_step(const ModelParams& params, TokenId token, bool in_focus,
                              const DecompState& decomp, const LstmState& ordinary,
                              const CdOptions& options) {
  const Eigen::Index H = params.hidden();
  if (token >= static_cast<std::size_t>(params.embedding.rows())) {
    throw ShapeError("token id " + std::to_string(token) + " outside vocabulary");
  }
  check_reconstructs(decomp.h_rel, decomp.h_irrel, ordinary.h, "hidden state");
  check_reconstructs(decomp.c_rel, decomp.c_irrel, ordinary.c, "cell state");

  const Vector from_input = params.input_weights * params.embedding.row(token).transpose();
  const Vector from_rel = params.recurrent_weights * decomp.h_rel;
  const Vector from_irrel = params.recurrent_weights * decomp.h_irrel;

  DecomposedStep out;
  for (Gate g : kGates) {
    const Eigen::Index off = gate_index(g) * H;
    const std::array<Eigen::ArrayXd, 4> players = {
        from_input.segment(off, H).array(), from_rel.segment(off, H).array(),
        from_irrel.segment(off, H).array(), params.gate_bias.segment(off, H).array()};
    const auto act = gate_activation(g);
    const std::vector<Eigen::ArrayXd> share = shapley_linearize(act, players);
    GatePart& part = out.gates.gates[gate_index(g)];
    part.constant = activate(act, 0.0);
    part.bias = share[3].matrix();
    if (in_focus) {
      part.relevant = (share[0] + share[1]).matrix();
      part.irrelevant = share[2].matrix();
    } else {
      part.relevant = share[1].matrix();
      part.irrelevant = (share[0] + share[2]).matrix();
    }
  }

  const Factor i = regroup(out.gates[Gate::input], in_focus, options.rule);
  const Factor f = regroup(out.gates[Gate::forget], in_focus, options.rule);
  const Factor o = regroup(out.gates[Gate::output], in_focus, options.rule);
  const Factor g = regroup(out.gates[Gate::cell], in_focus, options.rule);
  const Eigen::ArrayXd c_rel = decomp.c_rel.array();
  const Eigen::ArrayXd c_irrel = decomp.c_irrel.array();

  const Eigen::ArrayXd base_product = i.base * g.base;
  Eigen::ArrayXd next_c_rel =
      (f.rel + f.base) * c_rel + i.rel * g.rel + i.rel * g.base + i.base * g.rel;
  Eigen::ArrayXd next_c_irrel =
      f.irrel * c_rel + f.total() * c_irrel + i.irrel * g.total() + (i.rel + i.base) * g.irrel;
  if (in_focus) {
    next_c_rel += base_product;
  } else {
    next_c_irrel += base_product;
  }

  const std::array<Eigen::ArrayXd, 2> cell_players = {next_c_rel, next_c_irrel};
  const std::vector<Eigen::ArrayXd> tanh_share = shapley_linearize(Activation::tanh, cell_players);

  out.state.c_rel = next_c_rel.matrix();
  out.state.c_irrel = next_c_irrel.matrix();
  out.state.h_rel = ((o.rel + o.base) * tanh_share[0]).matrix();
  out.state.h_irrel = (o.irrel * tanh_share[0] + o.total() * tanh_share[1]).matrix();
  return out;
}

CdResult contextual_decomposition(const ModelParams& params, std::span<const TokenId> tokens,
                                  const FocusSpec& focus, const CdOptions& options) {
  if (!focus.empty() && focus.max() >= tokens.size()) {
    throw ShapeError("focus position " + std::to_string(focus.max()) +
                     " outside sequence of length " + std::to_string(tokens.size()));
  }
  const Eigen::Index H = params.hidden();
  CdResult out;
  out.states.reserve(tokens.size());
  out.logits.reserve(tokens.size());
  out.ordinary.reserve(tokens.size());
  DecompState decomp = DecompState::zeros(H);
  LstmState ordinary = LstmState::zeros(H);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    DecomposedStep step = decompose_step(params, tokens[t], focus.contains(t), decomp, ordinary, options);
    ordinary = lstm_step(params, params.embedding.row(tokens[t]).transpose(), ordinary).state;
    decomp = std::move(step.state);
    out.logits.push_back(DecompLogits{params.decoder * decomp.h_rel,
                                      params.decoder * decomp.h_irrel + params.decoder_bias});
    out.states.push_back(decomp);
    out.ordinary.push_back(ordinary);
  }
  return out;
}

Vector relevant_probability(const DecompLogits& logits) { return softmax(logits.v_rel); }

std::vector<double> incremental_cd_curve(const ModelParams& params,
                                         std::span<const TokenId> tokens, std::size_t alpha,
                                         std::size_t k, const CdOptions& options) {
  const std::size_t omega = alpha + k + 1;
  if (omega >= tokens.size()) {
    throw ShapeError("sequence too short for an incremental curve at this position");
  }
  const auto prefix = tokens.first(omega);
  std::vector<double> curve;
  curve.reserve(k + 1);
  for (std::size_t i = 0; i <= k; ++i) {
    const CdResult cd = contextual_decomposition(params, prefix, FocusSpec::range(alpha, alpha + i), options);
    curve.push_back(relevant_probability(cd.logits.back())(tokens[omega]));
  }
  return curve;
}

}  // namespace cdlm
