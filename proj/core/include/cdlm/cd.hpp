#pragma once

#include "cdlm/model.hpp"

#include <array>
#include <span>
#include <vector>

namespace cdlm {

/// Token positions placed in focus. Sorted, unique; may be empty or
/// non-contiguous.
class FocusSpec {
 public:
  FocusSpec() = default;
  explicit FocusSpec(std::vector<std::size_t> positions);

  /// Positions first..last inclusive.
  static FocusSpec range(std::size_t first, std::size_t last);

  bool contains(std::size_t t) const;
  bool empty() const { return positions_.empty(); }
  std::size_t size() const { return positions_.size(); }
  std::size_t max() const;
  const std::vector<std::size_t>& positions() const { return positions_; }

  bool intersects(const FocusSpec& other) const;
  FocusSpec merged(const FocusSpec& other) const;

 private:
  std::vector<std::size_t> positions_;
};

/// How products of decomposed factors are allocated.
///
/// `carrier`: the context-free share of a gate (its bias Shapley share plus
/// act(0)) carries whatever the other factor is. rel x rel, rel x base and
/// base x rel are relevant, base x base is relevant only at focus steps, and
/// any product with an irrelevant factor is irrelevant.
///
/// `strict`: only rel x rel is relevant. The bias share is relevant at focus
/// steps and irrelevant elsewhere; act(0) is always irrelevant.
enum class ProductRule { carrier, strict };

struct CdOptions {
  ProductRule rule = ProductRule::carrier;
};

/// One gate split into Shapley shares. relevant + irrelevant + bias +
/// constant reproduces the gate activation.
struct GatePart {
  Vector relevant;    // input share at focus steps, plus the V h_rel share
  Vector irrelevant;  // input share off focus, plus the V h_irrel share
  Vector bias;        // Shapley share of b
  double constant = 0.0;  // act(0)

  Vector total() const;
};

struct GateDecomposition {
  std::array<GatePart, 4> gates;

  const GatePart& operator[](Gate g) const { return gates[gate_index(g)]; }
};

struct DecompState {
  Vector h_rel;
  Vector h_irrel;
  Vector c_rel;
  Vector c_irrel;

  static DecompState zeros(Eigen::Index hidden);
  Vector h() const { return h_rel + h_irrel; }
  Vector c() const { return c_rel + c_irrel; }
};

struct DecompLogits {
  Vector v_rel;
  Vector v_irrel;
};

struct DecomposedStep {
  DecompState state;
  GateDecomposition gates;
};

/// Relative tolerance of the h_rel + h_irrel == h invariant.
inline constexpr double kReconstructionTolerance = 1e-10;

/// One CD step. `ordinary` is the undecomposed state that `decomp` must
/// reconstruct on entry (ShapeError/NumericalError otherwise).
DecomposedStep decompose_step(const ModelParams& params, TokenId token, bool in_focus,
                              const DecompState& decomp, const LstmState& ordinary,
                              const CdOptions& options = {});

struct CdResult {
  std::vector<DecompState> states;
  std::vector<DecompLogits> logits;
  std::vector<LstmState> ordinary;
};

/// Decomposes the whole forward pass from the zero state.
/// v_rel = W_dec h_rel, v_irrel = W_dec h_irrel + b_dec.
CdResult contextual_decomposition(const ModelParams& params, std::span<const TokenId> tokens,
                                  const FocusSpec& focus, const CdOptions& options = {});

/// softmax(v_rel).
Vector relevant_probability(const DecompLogits& logits);

/// Entry i is p(tokens[alpha + k + 1]) under relevant_probability at
/// timestep alpha + k with focus {alpha, ..., alpha + i}, for i in [0, k].
std::vector<double> incremental_cd_curve(const ModelParams& params,
                                         std::span<const TokenId> tokens, std::size_t alpha,
                                         std::size_t k, const CdOptions& options = {});

}  // namespace cdlm
