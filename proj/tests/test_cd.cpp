#include "cdlm/cd.hpp"
#include "cdlm/di.hpp"
#include "cdlm/errors.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace cdlm {
namespace {

double act(bool is_tanh, double x) { return is_tanh ? std::tanh(x) : test::scalar_sigmoid(x); }

/// Shapley values by enumerating player orderings.
std::vector<double> shapley_by_orderings(bool is_tanh, const std::vector<double>& y) {
  std::vector<int> order(y.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> sum(y.size(), 0.0);
  double count = 0.0;
  do {
    double acc = 0.0;
    for (int j : order) {
      const double before = act(is_tanh, acc);
      acc += y[static_cast<std::size_t>(j)];
      sum[static_cast<std::size_t>(j)] += act(is_tanh, acc) - before;
    }
    count += 1.0;
  } while (std::next_permutation(order.begin(), order.end()));
  for (double& s : sum) s /= count;
  return sum;
}

struct ScalarDecomp {
  std::vector<double> h_rel, h_irrel, c_rel, c_irrel;
};

/// Unit-by-unit expansion of one decomposed step under the carrier rule.
ScalarDecomp hand_step(const ModelParams& p, TokenId tok, bool focus, const ScalarDecomp& s) {
  const std::size_t H = static_cast<std::size_t>(p.hidden());
  const std::size_t E = static_cast<std::size_t>(p.embedding.cols());
  ScalarDecomp out{std::vector<double>(H), std::vector<double>(H), std::vector<double>(H),
                   std::vector<double>(H)};
  for (std::size_t j = 0; j < H; ++j) {
    double rel[4], irrel[4], base[4];
    for (int gate = 0; gate < 4; ++gate) {
      const auto r = static_cast<Eigen::Index>(gate * H + j);
      double wx = 0.0, vr = 0.0, vi = 0.0;
      for (std::size_t e = 0; e < E; ++e) {
        wx += p.input_weights(r, static_cast<Eigen::Index>(e)) *
              p.embedding(static_cast<Eigen::Index>(tok), static_cast<Eigen::Index>(e));
      }
      for (std::size_t m = 0; m < H; ++m) {
        vr += p.recurrent_weights(r, static_cast<Eigen::Index>(m)) * s.h_rel[m];
        vi += p.recurrent_weights(r, static_cast<Eigen::Index>(m)) * s.h_irrel[m];
      }
      const bool is_tanh = gate == 3;
      const auto sh = shapley_by_orderings(is_tanh, {wx, vr, vi, p.gate_bias(r)});
      rel[gate] = sh[1] + (focus ? sh[0] : 0.0);
      irrel[gate] = sh[2] + (focus ? 0.0 : sh[0]);
      base[gate] = sh[3] + act(is_tanh, 0.0);
    }
    const double iR = rel[0], iI = irrel[0], iB = base[0];
    const double fR = rel[1], fI = irrel[1], fB = base[1];
    const double oR = rel[2], oI = irrel[2], oB = base[2];
    const double gR = rel[3], gI = irrel[3], gB = base[3];
    double cr = (fR + fB) * s.c_rel[j] + iR * gR + iR * gB + iB * gR;
    double ci = fI * s.c_rel[j] + (fR + fI + fB) * s.c_irrel[j] + iI * (gR + gI + gB) +
                (iR + iB) * gI;
    (focus ? cr : ci) += iB * gB;
    const auto t = shapley_by_orderings(true, {cr, ci});
    out.c_rel[j] = cr;
    out.c_irrel[j] = ci;
    out.h_rel[j] = (oR + oB) * t[0];
    out.h_irrel[j] = oI * t[0] + (oR + oI + oB) * t[1];
  }
  return out;
}

TEST(Cd, MatchesHandExpansionOnTinyModels) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const std::size_t H = 1 + seed % 2;
    const ModelParams p = test::random_params(seed, Dims{4, 2, H}, 1.5);
    const auto tokens = test::random_tokens(seed + 50, 4, 2);
    for (unsigned mask = 0; mask < 4; ++mask) {
      std::vector<std::size_t> pos;
      for (std::size_t t = 0; t < 2; ++t) {
        if (mask & (1u << t)) pos.push_back(t);
      }
      const FocusSpec focus(pos);
      const CdResult cd = contextual_decomposition(p, tokens, focus);
      ScalarDecomp s{std::vector<double>(H, 0.0), std::vector<double>(H, 0.0),
                     std::vector<double>(H, 0.0), std::vector<double>(H, 0.0)};
      for (std::size_t t = 0; t < 2; ++t) {
        s = hand_step(p, tokens[t], focus.contains(t), s);
        for (std::size_t j = 0; j < H; ++j) {
          const auto e = static_cast<Eigen::Index>(j);
          EXPECT_NEAR(cd.states[t].h_rel(e), s.h_rel[j], 1e-13);
          EXPECT_NEAR(cd.states[t].h_irrel(e), s.h_irrel[j], 1e-13);
          EXPECT_NEAR(cd.states[t].c_rel(e), s.c_rel[j], 1e-13);
          EXPECT_NEAR(cd.states[t].c_irrel(e), s.c_irrel[j], 1e-13);
        }
      }
    }
  }
}

double logit_error(const CdResult& cd, std::size_t t, const ModelParams& p) {
  const Vector v = p.decoder * cd.ordinary[t].h + p.decoder_bias;
  return (cd.logits[t].v_rel + cd.logits[t].v_irrel - v).norm() / v.norm();
}

TEST(Cd, ReconstructsEveryStepUnderBothRules) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const ModelParams p = test::random_params(seed, Dims{13, 6, 7}, 0.8);
    const auto tokens = test::random_tokens(seed, 13, 25);
    const FocusSpec focus({seed % 25, (seed * 7) % 25, (seed * 11) % 25});
    for (ProductRule rule : {ProductRule::carrier, ProductRule::strict}) {
      const CdResult cd = contextual_decomposition(p, tokens, focus, CdOptions{rule});
      for (std::size_t t = 0; t < tokens.size(); ++t) {
        const double scale = std::max(1.0, cd.ordinary[t].h.norm());
        EXPECT_LE((cd.states[t].h() - cd.ordinary[t].h).norm(), 1e-12 * scale);
        EXPECT_LE((cd.states[t].c() - cd.ordinary[t].c).norm(), 1e-12 * std::max(1.0, cd.ordinary[t].c.norm()));
        EXPECT_LE(logit_error(cd, t, p), 1e-12);
      }
    }
  }
}

TEST(Cd, OrdinaryTrajectoryMatchesForward) {
  const ModelParams p = test::random_params(3, Dims{9, 4, 5});
  const auto tokens = test::random_tokens(4, 9, 10);
  const CdResult cd = contextual_decomposition(p, tokens, FocusSpec({2}));
  const ForwardResult fr = forward(p, tokens);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    EXPECT_EQ((cd.ordinary[t].h - fr.states[t].h).norm(), 0.0);
  }
}

TEST(Cd, EmptyFocusHasNoRelevantPart) {
  const ModelParams p = test::random_params(5, Dims{9, 4, 5});
  const auto tokens = test::random_tokens(6, 9, 8);
  const CdResult cd = contextual_decomposition(p, tokens, FocusSpec{});
  for (const auto& l : cd.logits) EXPECT_EQ(l.v_rel.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Cd, FullFocusHasNoIrrelevantHiddenPart) {
  const ModelParams p = test::random_params(5, Dims{9, 4, 5});
  const auto tokens = test::random_tokens(6, 9, 8);
  const CdResult cd = contextual_decomposition(p, tokens, FocusSpec::range(0, 7));
  for (const auto& s : cd.states) EXPECT_EQ(s.h_irrel.cwiseAbs().maxCoeff(), 0.0);
  for (const auto& l : cd.logits) EXPECT_EQ((l.v_irrel - p.decoder_bias).norm(), 0.0);
}

TEST(Cd, FirstFocusedStepAllocationPerRule) {
  // From the zero state with the token in focus: carrier puts the whole
  // cell in the relevant part, strict leaves act(0) of the input gate out.
  const ModelParams p = test::random_params(8, Dims{5, 3, 2});
  const std::vector<TokenId> tokens{1};
  const StepResult ref = lstm_step(p, embed(p, 1), LstmState::zeros(2));
  const Vector& i = ref.record.activations[gate_index(Gate::input)];
  const Vector& g = ref.record.activations[gate_index(Gate::cell)];
  const CdResult carrier = contextual_decomposition(p, tokens, FocusSpec({0}), {ProductRule::carrier});
  const CdResult strict = contextual_decomposition(p, tokens, FocusSpec({0}), {ProductRule::strict});
  EXPECT_LE((carrier.states[0].c_rel - ref.state.c).norm(), 1e-15);
  EXPECT_LE((strict.states[0].c_rel - ((i.array() - 0.5) * g.array()).matrix()).norm(), 1e-15);
  EXPECT_LE((strict.states[0].c() - ref.state.c).norm(), 1e-15);
}

TEST(Cd, DecomposeStepRejectsInconsistentState) {
  const ModelParams p = test::random_params(5, Dims{9, 4, 5});
  DecompState bad = DecompState::zeros(5);
  bad.h_rel(0) = 1.0;
  EXPECT_THROW(decompose_step(p, 0, true, bad, LstmState::zeros(5)), NumericalError);
  EXPECT_THROW(decompose_step(p, 0, true, DecompState::zeros(4), LstmState::zeros(5)), ShapeError);
  EXPECT_THROW(decompose_step(p, 9, true, DecompState::zeros(5), LstmState::zeros(5)), ShapeError);
}

TEST(Cd, GatePartsReconstructActivations) {
  const ModelParams p = test::random_params(5, Dims{9, 4, 5});
  const LstmState zero = LstmState::zeros(5);
  const DecomposedStep step = decompose_step(p, 3, true, DecompState::zeros(5), zero);
  const StepResult ordinary = lstm_step(p, embed(p, 3), zero);
  for (Gate g : kGates) {
    EXPECT_LE((step.gates[g].total() - ordinary.record.activations[gate_index(g)]).norm(), 1e-14);
  }
}

TEST(Cd, FocusSpecValidation) {
  const FocusSpec f({4, 1, 4, 2});
  EXPECT_EQ(f.positions(), (std::vector<std::size_t>{1, 2, 4}));
  EXPECT_TRUE(f.contains(2));
  EXPECT_FALSE(f.contains(3));
  EXPECT_EQ(f.max(), 4u);
  EXPECT_TRUE(f.intersects(FocusSpec({0, 4})));
  EXPECT_FALSE(f.intersects(FocusSpec({0, 3})));
  EXPECT_EQ(f.merged(FocusSpec({0, 3})).size(), 5u);
  EXPECT_THROW(FocusSpec{}.max(), ConfigError);
  const ModelParams p = test::random_params(5, Dims{9, 4, 5});
  const auto tokens = test::random_tokens(6, 9, 4);
  EXPECT_THROW(contextual_decomposition(p, tokens, FocusSpec({4})), ShapeError);
}

TEST(Cd, IncrementalCurveEndpoints) {
  const ModelParams p = test::random_params(11, Dims{9, 4, 5});
  auto tokens = test::random_tokens(12, 9, 10);
  const std::size_t alpha = 3, k = 4;
  const auto curve = incremental_cd_curve(p, tokens, alpha, k);
  ASSERT_EQ(curve.size(), k + 1);
  const std::span<const TokenId> prefix(tokens.data(), alpha + k + 1);
  const CdResult first = contextual_decomposition(p, prefix, FocusSpec({alpha}));
  const CdResult last = contextual_decomposition(p, prefix, FocusSpec::range(alpha, alpha + k));
  const TokenId target = tokens[alpha + k + 1];
  EXPECT_DOUBLE_EQ(curve.front(), relevant_probability(first.logits.back())(target));
  EXPECT_DOUBLE_EQ(curve.back(), relevant_probability(last.logits.back())(target));
  for (double v : curve) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_THROW(incremental_cd_curve(p, tokens, 5, 4), ShapeError);
}

TEST(Cd, DecompositionErrorIsTiny) {
  const ModelParams p = test::random_params(2, Dims{15, 8, 8});
  const auto tokens = test::random_tokens(3, 15, 30);
  EXPECT_LE(decomposition_error(p, tokens, FocusSpec({3, 9, 10})), 1e-12);
}

}  // namespace
}  // namespace cdlm
