#include "cdlm/errors.hpp"
#include "cdlm/model.hpp"
#include "cdlm/vocab.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace cdlm {
namespace {

TEST(Numeric, SigmoidIsStableAtExtremes) {
  EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
  EXPECT_EQ(sigmoid(-800.0), 0.0);
  EXPECT_EQ(sigmoid(800.0), 1.0);
  EXPECT_NEAR(sigmoid(2.0) + sigmoid(-2.0), 1.0, 1e-15);
}

TEST(Numeric, SoftmaxSumsToOneUnderLargeShift) {
  Vector v(3);
  v << 1000.0, 1001.0, 1002.0;
  const Vector p = softmax(v);
  EXPECT_NEAR(p.sum(), 1.0, 1e-15);
  EXPECT_NEAR(p(2) / p(1), std::exp(1.0), 1e-12);
  EXPECT_NEAR(log_sum_exp(v), 1002.0 + std::log(1.0 + std::exp(-1.0) + std::exp(-2.0)), 1e-12);
}

TEST(Vocab, RejectsDuplicatesAndAppendsUnknown) {
  EXPECT_THROW(Vocab::from_tokens({"a", "a"}), FormatError);
  const Vocab v = Vocab::from_tokens({"a", "b"});
  EXPECT_EQ(v.size(), 3u);
  EXPECT_EQ(v.token(v.unknown_id()), Vocab::kUnknown);
  EXPECT_EQ(v.id_or_unknown("zzz"), v.unknown_id());
  EXPECT_EQ(v.find("b").value(), 1u);
}

TEST(Model, InitIsSeededAndBounded) {
  const Dims d{11, 4, 3};
  const ModelParams a = init_params(5, d);
  const ModelParams b = init_params(5, d);
  const ModelParams c = init_params(6, d);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == c);
  EXPECT_EQ(a.dims(), d);
  EXPECT_LE(a.input_weights.cwiseAbs().maxCoeff(), 0.1);
  EXPECT_EQ(a.gate_bias.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(a.decoder_bias.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_THROW(init_params(1, Dims{0, 4, 3}), ConfigError);
}

TEST(Model, GateBlocksFollowStorageOrder) {
  ModelParams p = ModelParams::zeros(Dims{3, 2, 2});
  p.bias_block(Gate::output).setConstant(7.0);
  EXPECT_EQ(p.gate_bias(4), 7.0);
  EXPECT_EQ(p.gate_bias(5), 7.0);
  EXPECT_EQ(p.gate_bias(3), 0.0);
}

TEST(Model, ValidateCatchesBadShapesAndValues) {
  ModelParams p = init_params(1, Dims{5, 3, 2});
  p.validate();
  p.gate_bias(0) = std::nan("");
  EXPECT_THROW(p.validate(), NumericalError);
  p = init_params(1, Dims{5, 3, 2});
  p.decoder_bias.resize(4);
  EXPECT_THROW(p.validate(), ShapeError);
}

TEST(Model, ForwardMatchesScalarOracle) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Dims d{9, 4, 5};
    const ModelParams p = test::random_params(seed, d);
    const auto tokens = test::random_tokens(seed + 100, d.vocab, 12);
    const ForwardResult fr = forward(p, tokens);
    const test::ScalarRun oracle = test::scalar_forward(p, tokens);
    ASSERT_EQ(fr.states.size(), tokens.size());
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      for (std::size_t j = 0; j < d.hidden; ++j) {
        EXPECT_NEAR(fr.states[t].h(static_cast<Eigen::Index>(j)), oracle.h[t][j], 1e-12);
        EXPECT_NEAR(fr.states[t].c(static_cast<Eigen::Index>(j)), oracle.c[t][j], 1e-12);
      }
      for (std::size_t v = 0; v < d.vocab; ++v) {
        EXPECT_NEAR(fr.logits[t](static_cast<Eigen::Index>(v)), oracle.logits[t][v], 1e-12);
      }
    }
  }
}

TEST(Model, StepRecordReassemblesActivations) {
  const ModelParams p = test::random_params(3, Dims{6, 3, 4});
  const StepResult r = lstm_step(p, embed(p, 2), LstmState::zeros(4));
  for (Gate g : kGates) {
    const auto& s = r.record.summands[gate_index(g)];
    const Vector pre = s.input + s.recurrent + s.bias;
    const Vector& act = r.record.activations[gate_index(g)];
    for (Eigen::Index j = 0; j < 4; ++j) {
      const double expect = g == Gate::cell ? std::tanh(pre(j)) : test::scalar_sigmoid(pre(j));
      EXPECT_NEAR(act(j), expect, 1e-15);
    }
  }
}

TEST(Model, NextTokenProbabilitiesAgreeWithForward) {
  const ModelParams p = test::random_params(8, Dims{7, 3, 3});
  const auto tokens = test::random_tokens(9, 7, 20);
  const auto probs = next_token_probabilities(p, tokens);
  const auto logp = next_token_log_probabilities(p, tokens);
  const ForwardResult fr = forward(p, tokens);
  ASSERT_EQ(probs.size(), tokens.size() - 1);
  for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
    const Vector sm = softmax(fr.logits[t]);
    EXPECT_NEAR(probs[t], sm(tokens[t + 1]), 1e-14);
    EXPECT_NEAR(logp[t], std::log(sm(tokens[t + 1])), 1e-12);
  }
}

TEST(Model, RejectsOutOfRangeTokens) {
  const ModelParams p = init_params(1, Dims{4, 2, 2});
  const std::vector<TokenId> bad{1, 4};
  EXPECT_THROW(forward(p, bad), ShapeError);
}

}  // namespace
}  // namespace cdlm
