#include "cdlm/errors.hpp"
#include "cdlm/trainer.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace cdlm {
namespace {

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

TEST(CrossEntropy, UniformLogitsGiveLogV) {
  std::vector<Vector> logits(3, Vector::Zero(1000));
  const std::vector<TokenId> targets{0, 17, 999};
  EXPECT_NEAR(cross_entropy_loss(logits, targets), std::log(1000.0), 1e-12);
}

TEST(CrossEntropy, SaturatedTargetGivesNearZero) {
  Vector z = Vector::Zero(10);
  z(4) = 50.0;
  const std::vector<Vector> logits{z};
  const std::vector<TokenId> targets{4};
  EXPECT_LT(cross_entropy_loss(logits, targets), 1e-20);
}

TEST(CrossEntropy, HandCase) {
  Vector z(3);
  z << std::log(1.0), std::log(2.0), std::log(3.0);
  const std::vector<Vector> logits{z};
  const std::vector<TokenId> targets{2};
  EXPECT_NEAR(cross_entropy_loss(logits, targets), -std::log(0.5), 1e-15);
  const std::vector<TokenId> two{2, 1};
  EXPECT_THROW(cross_entropy_loss(logits, two), ShapeError);
}

/// Relative error of one block: |a - b| / max(|a|, |b|).
double block_rel_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::max(std::sqrt(na), std::sqrt(nb));
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

TEST(Bptt, MatchesCentralFiniteDifferences) {
  constexpr double kStep = 1e-5;
  for (std::uint64_t inst = 0; inst < 10; ++inst) {
    const Dims d{7, 4, 5};
    ModelParams p = test::random_params(inst + 40, d, 0.6);
    const auto window = test::random_tokens(inst + 90, d.vocab, 6);
    std::mt19937_64 rng(inst);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    LstmState carried = LstmState::zeros(5);
    for (Eigen::Index j = 0; j < 5; ++j) {
      carried.h(j) = u(rng);
      carried.c(j) = u(rng);
    }
    const BpttResult r = bptt_gradients(p, window, carried);
    EXPECT_NEAR(r.loss, test::scalar_window_loss(p, window, to_std(carried.h), to_std(carried.c)),
                1e-12);
    const auto grads = r.grads.blocks();
    auto blocks = p.blocks();
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      std::vector<double> fd(blocks[b].size());
      for (std::size_t i = 0; i < blocks[b].size(); ++i) {
        const double keep = blocks[b][i];
        blocks[b][i] = keep + kStep;
        const double up = test::scalar_window_loss(p, window, to_std(carried.h), to_std(carried.c));
        blocks[b][i] = keep - kStep;
        const double down =
            test::scalar_window_loss(p, window, to_std(carried.h), to_std(carried.c));
        blocks[b][i] = keep;
        fd[i] = (up - down) / (2.0 * kStep);
      }
      EXPECT_LE(block_rel_error(grads[b], fd), 1e-6) << "instance " << inst << " block " << b;
    }
  }
}

TEST(Bptt, AbsentEmbeddingRowsHaveZeroGradient) {
  const Dims d{9, 3, 4};
  const ModelParams p = test::random_params(2, d);
  const std::vector<TokenId> window{1, 3, 3, 5};
  const BpttResult r = bptt_gradients(p, window, LstmState::zeros(4));
  for (TokenId t = 0; t < 9; ++t) {
    const bool used = t == 1 || t == 3;  // the final token is only a target
    if (!used) {
      EXPECT_EQ(r.grads.embedding.row(t).cwiseAbs().maxCoeff(), 0.0) << "row " << t;
    }
  }
  EXPECT_GT(r.grads.embedding.row(1).norm(), 0.0);
}

TEST(Bptt, EmptyWindowIsRejected) {
  const ModelParams p = init_params(1, Dims{4, 2, 2});
  const std::vector<TokenId> one{1};
  EXPECT_THROW(bptt_gradients(p, one, LstmState::zeros(2)), ShapeError);
}

TEST(Bptt, BatchIsTheMeanOfItsStreams) {
  const Dims d{8, 3, 4};
  const ModelParams p = test::random_params(5, d);
  std::vector<std::vector<TokenId>> windows{test::random_tokens(1, 8, 7),
                                            test::random_tokens(2, 8, 7),
                                            test::random_tokens(3, 8, 7)};
  BatchState carried = BatchState::zeros(4, 3);
  carried.h.setConstant(0.1);
  carried.c.setConstant(-0.2);
  const BatchBpttResult batch = bptt_gradients_batch(p, windows, carried);
  GradientSet mean = GradientSet::zeros_like(p);
  double loss = 0.0;
  for (std::size_t b = 0; b < 3; ++b) {
    LstmState s{carried.h.col(static_cast<Eigen::Index>(b)), carried.c.col(static_cast<Eigen::Index>(b))};
    const BpttResult r = bptt_gradients(p, windows[b], s);
    loss += r.loss / 3.0;
    auto dst = mean.blocks();
    const auto src = r.grads.blocks();
    for (std::size_t k = 0; k < dst.size(); ++k) {
      for (std::size_t i = 0; i < dst[k].size(); ++i) dst[k][i] += src[k][i] / 3.0;
    }
    EXPECT_NEAR((batch.final_state.h.col(static_cast<Eigen::Index>(b)) - r.final_state.h).norm(),
                0.0, 1e-14);
  }
  EXPECT_NEAR(batch.loss, loss, 1e-13);
  const auto a = batch.grads.blocks();
  const auto m = mean.blocks();
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_LE(block_rel_error(a[k], m[k]), 1e-12);
}

GradientSet filled(const ModelParams& p, double norm_target) {
  GradientSet g = GradientSet::zeros_like(p);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  for (auto block : g.blocks()) {
    for (double& x : block) x = n01(rng);
  }
  g.scale(norm_target / g.global_norm());
  return g;
}

TEST(Clip, BelowThresholdIsPlainSgd) {
  ModelParams p = test::random_params(1, Dims{5, 3, 2});
  const ModelParams before = p;
  GradientSet g = filled(p, 0.1);
  const GradientSet copy = g;
  const ClipReport rep = clip_and_step(p, g, 0.5, 0.25);
  EXPECT_EQ(rep.scale, 1.0);
  EXPECT_NEAR(rep.norm_before, 0.1, 1e-15);
  const auto pb = p.blocks();
  const auto bb = before.blocks();
  const auto gb = copy.blocks();
  for (std::size_t k = 0; k < pb.size(); ++k) {
    for (std::size_t i = 0; i < pb[k].size(); ++i) {
      EXPECT_DOUBLE_EQ(pb[k][i], bb[k][i] - 0.5 * gb[k][i]);
    }
  }
}

TEST(Clip, AboveThresholdScalesByClipOverNorm) {
  ModelParams p = test::random_params(1, Dims{5, 3, 2});
  const ModelParams before = p;
  GradientSet g = filled(p, 1.0);
  const GradientSet copy = g;
  const ClipReport rep = clip_and_step(p, g, 1.0, 0.25);
  EXPECT_NEAR(rep.scale, 0.25, 1e-15);
  const auto pb = p.blocks();
  const auto bb = before.blocks();
  const auto gb = copy.blocks();
  for (std::size_t k = 0; k < pb.size(); ++k) {
    for (std::size_t i = 0; i < pb[k].size(); ++i) {
      EXPECT_NEAR(pb[k][i], bb[k][i] - 0.25 * gb[k][i], 1e-15);
    }
  }
}

TEST(Clip, PostClipNormNeverExceedsThreshold) {
  const ModelParams p = test::random_params(1, Dims{5, 3, 2});
  for (double target : {0.01, 0.25, 0.2500001, 3.0, 1e6}) {
    GradientSet g = filled(p, target);
    clip_gradients(g, 0.25);
    EXPECT_LE(g.global_norm(), 0.25 + 1e-12);
  }
}

TEST(Clip, ZeroGradientsAndZeroRateLeaveParametersUnchanged) {
  ModelParams p = test::random_params(1, Dims{5, 3, 2});
  const ModelParams before = p;
  GradientSet zero = GradientSet::zeros_like(p);
  clip_and_step(p, zero, 1.0, 0.25);
  EXPECT_TRUE(p == before);
  GradientSet g = filled(p, 0.7);
  clip_and_step(p, g, 0.0, 0.25);
  EXPECT_TRUE(p == before);
}

TEST(Clip, NonFiniteGradientsThrow) {
  const ModelParams p = test::random_params(1, Dims{5, 3, 2});
  GradientSet g = filled(p, 0.1);
  g.decoder(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(clip_gradients(g, 0.25), NumericalError);
}

TEST(Perplexity, FreshModelOnUniformCorpusIsNearV) {
  const ModelParams p = init_params(4, Dims{100, 16, 16});
  const auto corpus = test::random_tokens(11, 100, 5000);
  const double ppl = perplexity(p, corpus);
  EXPECT_GE(ppl, 1.0);
  EXPECT_NEAR(ppl / 100.0, 1.0, 0.05);
}

TEST(Perplexity, IsExpOfCrossEntropy) {
  const ModelParams p = test::random_params(4, Dims{6, 3, 3});
  const auto corpus = test::random_tokens(12, 6, 40);
  const ForwardResult fr = forward(p, corpus);
  std::vector<Vector> logits(fr.logits.begin(), fr.logits.end() - 1);
  std::vector<TokenId> targets(corpus.begin() + 1, corpus.end());
  EXPECT_NEAR(perplexity(p, corpus), std::exp(cross_entropy_loss(logits, targets)), 1e-11);
  const std::vector<TokenId> one{1};
  EXPECT_THROW(perplexity(p, one), ShapeError);
}

TEST(TrainConfig, ValidatesInvariants) {
  TrainConfig c;
  c.validate();
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.clip_threshold = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.bptt_window = 1;
  EXPECT_THROW(c.validate(), ConfigError);
}

std::vector<TokenId> bigram_corpus(std::size_t n) {
  // Every even token is followed by its successor.
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<TokenId> pick(0, 4);
  std::vector<TokenId> out;
  while (out.size() < n) {
    const TokenId t = 2 * pick(rng);
    out.push_back(t);
    out.push_back(t + 1);
  }
  return out;
}

TEST(Train, LossDecreasesOnPlantedBigrams) {
  const auto corpus = bigram_corpus(1000);
  ModelParams p = init_params(1, Dims{10, 8, 8});
  TrainConfig c;
  c.epochs = 5;
  c.batch_size = 4;
  c.bptt_window = 20;
  const TrainResult r = train(p, corpus, c);
  ASSERT_GE(r.log.size(), 2u);
  EXPECT_EQ(r.log.front().epoch, 0u);
  EXPECT_LT(r.log.back().train_loss, r.log.front().train_loss);
}

TEST(Train, IsDeterministic) {
  const auto corpus = bigram_corpus(600);
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 3;
  c.bptt_window = 9;
  ModelParams a = init_params(2, Dims{10, 5, 6});
  ModelParams b = init_params(2, Dims{10, 5, 6});
  const TrainResult ra = train(a, corpus, c);
  const TrainResult rb = train(b, corpus, c);
  EXPECT_TRUE(a == b);
  ASSERT_EQ(ra.log.size(), rb.log.size());
  for (std::size_t i = 0; i < ra.log.size(); ++i) {
    EXPECT_EQ(ra.log[i].train_loss, rb.log[i].train_loss);
  }
}

TEST(Train, EvalCallbackSeesEveryInterval) {
  const auto corpus = bigram_corpus(400);
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 2;
  c.bptt_window = 11;
  c.eval_interval = 3;
  ModelParams p = init_params(2, Dims{10, 4, 4});
  std::vector<EvalPoint> seen;
  const TrainResult r = train(p, corpus, c, [&](const EvalPoint& e, const ModelParams&) {
    seen.push_back(e);
    return std::make_optional(std::make_pair(std::string("m"), 1.0));
  });
  ASSERT_FALSE(seen.empty());
  EXPECT_EQ(seen.front().epoch, 0u);
  // 200 tokens per stream, windows advance by 10: 20 batches per epoch.
  EXPECT_EQ(seen.back().epoch_batches, 20u);
  std::size_t per_epoch = 0;
  for (const auto& e : seen) per_epoch += e.epoch == 1 ? 1 : 0;
  EXPECT_EQ(per_epoch, 7u);  // after batches 3, 6, ..., 18 and 20
  EXPECT_EQ(r.log.size(), seen.size());
  EXPECT_EQ(r.log.back().eval_metric_name, "m");
}

TEST(Train, DivergenceRaisesNumericalError) {
  const auto corpus = bigram_corpus(200);
  TrainConfig c;
  c.epochs = 1;
  c.batch_size = 2;
  ModelParams p = init_params(2, Dims{10, 4, 4});
  p.decoder(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(train(p, corpus, c), Error);
}

TEST(GradientProbe, CoversEveryOffsetWithNonNegativeNorms) {
  const Dims d{12, 4, 5};
  const ModelParams p = test::random_params(6, d);
  std::vector<RuleWindow> inst;
  for (std::uint64_t s = 0; s < 4; ++s) {
    auto w = test::random_tokens(s, 10, 9);
    w[3] = 10;
    w[7] = 11;
    inst.push_back({w, 3, 3});
  }
  const GradientProbeReport rep = scaffold_gradient_probe(p, inst);
  ASSERT_EQ(rep.offsets.size(), 3u);
  EXPECT_EQ(rep.samples, 4u);
  for (std::size_t d0 = 0; d0 < 3; ++d0) {
    EXPECT_EQ(rep.offsets[d0].first, d0);
    EXPECT_GE(rep.offsets[d0].second, 0.0);
  }
}

TEST(GradientProbe, MatchesFiniteDifferenceThroughTheHiddenState) {
  // Perturbing h at scaffold offset d and re-running the tail must change
  // -log p(omega) at the rate the probe reports.
  const Dims d{9, 3, 4};
  const ModelParams p = test::random_params(21, d, 0.8);
  std::vector<TokenId> w{1, 2, 7, 3, 4, 5, 8};
  const std::size_t alpha = 2, k = 3;
  const RuleWindow inst{w, alpha, k};
  const GradientProbeReport rep = scaffold_gradient_probe(p, std::span(&inst, 1));
  const test::ScalarRun base = test::scalar_forward(p, w);
  for (std::size_t off = 0; off < k; ++off) {
    const std::size_t t = alpha + 1 + off;
    std::vector<TokenId> tail(w.begin() + static_cast<std::ptrdiff_t>(t + 1), w.end());
    auto loss_from = [&](std::vector<double> h) {
      std::vector<TokenId> inputs(tail.begin(), tail.end() - 1);
      std::vector<double> z(d.vocab);
      if (inputs.empty()) {
        for (std::size_t v = 0; v < d.vocab; ++v) {
          z[v] = p.decoder_bias(static_cast<Eigen::Index>(v));
          for (std::size_t j = 0; j < 4; ++j) {
            z[v] += p.decoder(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(j)) * h[j];
          }
        }
      } else {
        z = test::scalar_forward(p, inputs, std::move(h), base.c[t]).logits.back();
      }
      double m = z[0];
      for (double v : z) m = std::max(m, v);
      double s = 0.0;
      for (double v : z) s += std::exp(v - m);
      return -(z[w.back()] - m - std::log(s));
    };
    double sq = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      auto up = base.h[t], down = base.h[t];
      up[j] += 1e-6;
      down[j] -= 1e-6;
      const double g = (loss_from(up) - loss_from(down)) / 2e-6;
      sq += g * g;
    }
    EXPECT_NEAR(rep.offsets[off].second, std::sqrt(sq), 1e-7 * std::max(1.0, std::sqrt(sq)));
  }
}

TEST(GradientProbe, MalformedInstancesAreRejected) {
  const ModelParams p = test::random_params(6, Dims{12, 4, 5});
  std::vector<RuleWindow> inst{{{1, 2, 3}, 0, 3}};
  EXPECT_THROW(scaffold_gradient_probe(p, inst), FormatError);
}

}  // namespace
}  // namespace cdlm
