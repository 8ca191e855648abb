#pragma once

#include "cdlm/cd.hpp"

#include <optional>

namespace cdlm {

/// Decompositional interdependence between two disjoint spans.
///
/// `value` is empty when the joint relevant vector is exactly zero
/// (the ratio is undefined).
struct DiResult {
  std::optional<double> value;
  std::size_t timestep = 0;
  double norm_union = 0.0;
  double norm_a = 0.0;
  double norm_b = 0.0;

  bool degenerate() const { return !value.has_value(); }
};

/// Last token index of A union B.
std::size_t eval_timestep(const FocusSpec& a, const FocusSpec& b);

/// |h_ab - (h_a + h_b)|_2 / |h_ab|_2 from already decomposed vectors.
DiResult di_from_relevant(const Vector& h_a, const Vector& h_b, const Vector& h_union);

/// Runs CD with focus A, B and A union B and compares the relevant hidden
/// parts at eval_timestep(A, B). Throws ConfigError for empty or
/// overlapping sets, ShapeError when the timestep is outside the sequence.
DiResult di(const ModelParams& params, std::span<const TokenId> tokens, const FocusSpec& a,
            const FocusSpec& b, const CdOptions& options = {});

/// |(v_rel + v_irrel) - v| / |v| at the last timestep.
double decomposition_error(const ModelParams& params, std::span<const TokenId> tokens,
                           const FocusSpec& focus, const CdOptions& options = {});

}  // namespace cdlm
