#include "cdlm/di.hpp"

#include "cdlm/errors.hpp"

#include <algorithm>

namespace cdlm {

std::size_t eval_timestep(const FocusSpec& a, const FocusSpec& b) {
  if (a.empty() || b.empty()) throw ConfigError("DI needs two non-empty spans");
  return std::max(a.max(), b.max());
}

DiResult di_from_relevant(const Vector& h_a, const Vector& h_b, const Vector& h_union) {
  if (h_a.size() != h_union.size() || h_b.size() != h_union.size()) {
    throw ShapeError("DI vectors differ in length");
  }
  DiResult r;
  r.norm_a = h_a.norm();
  r.norm_b = h_b.norm();
  r.norm_union = h_union.norm();
  if (r.norm_union == 0.0) return r;
  r.value = (h_union - (h_a + h_b)).norm() / r.norm_union;
  return r;
}

DiResult di(const ModelParams& params, std::span<const TokenId> tokens, const FocusSpec& a,
            const FocusSpec& b, const CdOptions& options) {
  const std::size_t t = eval_timestep(a, b);
  if (a.intersects(b)) throw ConfigError("DI spans must be disjoint");
  if (t >= tokens.size()) throw ShapeError("DI timestep outside the sequence");
  const auto prefix = tokens.first(t + 1);
  const CdResult cd_a = contextual_decomposition(params, prefix, a, options);
  const CdResult cd_b = contextual_decomposition(params, prefix, b, options);
  const CdResult cd_u = contextual_decomposition(params, prefix, a.merged(b), options);
  DiResult r = di_from_relevant(cd_a.states.back().h_rel, cd_b.states.back().h_rel,
                                cd_u.states.back().h_rel);
  r.timestep = t;
  return r;
}

double decomposition_error(const ModelParams& params, std::span<const TokenId> tokens,
                           const FocusSpec& focus, const CdOptions& options) {
  if (tokens.empty()) return 0.0;
  const CdResult cd = contextual_decomposition(params, tokens, focus, options);
  const Vector v = decode(params, cd.ordinary.back().h);
  const Vector recon = cd.logits.back().v_rel + cd.logits.back().v_irrel;
  const double denom = v.norm();
  const double err = (recon - v).norm();
  return denom == 0.0 ? err : err / denom;
}

}  // namespace cdlm
