#include "cdlm/di.hpp"
#include "cdlm/errors.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace cdlm {
namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

TEST(Di, HandCaseIsOneOverRootFive) {
  const DiResult r = di_from_relevant(vec({1, 0}), vec({0, 1}), vec({2, 1}));
  ASSERT_TRUE(r.value);
  EXPECT_NEAR(*r.value, 1.0 / std::sqrt(5.0), 1e-12);
  EXPECT_NEAR(r.norm_union, std::sqrt(5.0), 1e-15);
}

TEST(Di, ZeroExactlyWhenAdditive) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 200; ++trial) {
    Vector a(6), b(6);
    for (Eigen::Index i = 0; i < 6; ++i) {
      a(i) = n01(rng);
      b(i) = n01(rng);
    }
    EXPECT_EQ(*di_from_relevant(a, b, a + b).value, 0.0);
    Vector u = a + b;
    u(trial % 6) += 1e-3;
    EXPECT_GT(*di_from_relevant(a, b, u).value, 0.0);
  }
}

TEST(Di, NonNegativeAndSymmetric) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 200; ++trial) {
    Vector a(4), b(4), u(4);
    for (Eigen::Index i = 0; i < 4; ++i) {
      a(i) = n01(rng);
      b(i) = n01(rng);
      u(i) = n01(rng);
    }
    const double ab = *di_from_relevant(a, b, u).value;
    const double ba = *di_from_relevant(b, a, u).value;
    EXPECT_GE(ab, 0.0);
    EXPECT_EQ(ab, ba);
  }
}

TEST(Di, ZeroUnionIsDegenerate) {
  const DiResult r = di_from_relevant(vec({1, 0}), vec({0, 1}), vec({0, 0}));
  EXPECT_TRUE(r.degenerate());
}

TEST(Di, ModelLevelPropertiesHold) {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    const ModelParams p = test::random_params(seed, Dims{11, 5, 6}, 0.7);
    const auto tokens = test::random_tokens(seed, 11, 12);
    const FocusSpec a({1, 2});
    const FocusSpec b({5});
    const DiResult ab = di(p, tokens, a, b);
    const DiResult ba = di(p, tokens, b, a);
    ASSERT_TRUE(ab.value);
    EXPECT_EQ(ab.timestep, 5u);
    EXPECT_GE(*ab.value, 0.0);
    EXPECT_NEAR(*ab.value, *ba.value, 1e-15);
    // Same numbers by hand from three decompositions.
    const auto prefix = std::span<const TokenId>(tokens).first(6);
    const Vector ha = contextual_decomposition(p, prefix, a).states.back().h_rel;
    const Vector hb = contextual_decomposition(p, prefix, b).states.back().h_rel;
    const Vector hu = contextual_decomposition(p, prefix, a.merged(b)).states.back().h_rel;
    EXPECT_NEAR(*ab.value, (hu - ha - hb).norm() / hu.norm(), 1e-14);
  }
}

TEST(Di, RejectsEmptyAndOverlappingSets) {
  const ModelParams p = test::random_params(1, Dims{11, 5, 6});
  const auto tokens = test::random_tokens(1, 11, 6);
  EXPECT_THROW(di(p, tokens, FocusSpec{}, FocusSpec({1})), ConfigError);
  EXPECT_THROW(di(p, tokens, FocusSpec({1, 2}), FocusSpec({2})), ConfigError);
  EXPECT_THROW(di(p, tokens, FocusSpec({1}), FocusSpec({6})), ShapeError);
  EXPECT_EQ(eval_timestep(FocusSpec({4}), FocusSpec({0, 2})), 4u);
}

}  // namespace
}  // namespace cdlm
