#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "oracles/oracles.hpp"
#include "slap/features.hpp"
#include "slap/rng.hpp"

using namespace slap;

namespace {

Matrix from_rows(std::vector<std::vector<double>> rows) {
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  return m;
}

}  // namespace

TEST(TokenGradient, OuterProduct) {
  EXPECT_EQ(token_gradient({{1, 0}, {2, 3}}), from_rows({{2, 3}, {0, 0}}));
  EXPECT_EQ(token_gradient({{0, 0}, {5, 7}}), Matrix(2, 2));
  EXPECT_EQ(token_gradient({{1, 2}, {3}}), from_rows({{3}, {6}}));
}

TEST(TokenGradient, RejectsDimensionMismatch) {
  EXPECT_THROW(token_gradient({{1, 2}, {3}}, {3, 1}), SchemaError);
  EXPECT_THROW(token_gradient({{1, 2}, {3}}, {2, 2}), SchemaError);
  EXPECT_THROW(token_gradient({{}, {3}}), SchemaError);
  EXPECT_THROW(token_gradient({{NAN}, {3}}), SchemaError);
}

TEST(TokenGradient, Bilinear) {
  Rng r(1);
  std::vector<double> g(4), h(3);
  for (auto& x : g) x = r.normal();
  for (auto& x : h) x = r.normal();
  const double c = 2.5;
  auto scaled = g;
  for (auto& x : scaled) x *= c;
  Matrix base = token_gradient({g, h});
  base *= c;
  const Matrix direct = token_gradient({scaled, h});
  for (std::size_t i = 0; i < base.size(); ++i)
    EXPECT_NEAR(base.values()[i], direct.values()[i], 1e-14 * std::abs(direct.values()[i]) + 1e-300);
}

TEST(SequenceGradient, SumsTokens) {
  const std::vector<TokenGradientInput> one = {{{1, 2}, {3, 4}}};
  EXPECT_EQ(sequence_gradient(one), token_gradient(one[0]));

  const std::vector<TokenGradientInput> cancel = {{{1, -2}, {3, 4}}, {{-1, 2}, {3, 4}}};
  EXPECT_EQ(sequence_gradient(cancel), Matrix(2, 2));

  const std::vector<TokenGradientInput> three(3, TokenGradientInput{{1, 1}, {1, 1}});
  EXPECT_EQ(sequence_gradient(three), Matrix(2, 2, 3.0));
}

TEST(SequenceGradient, EmptyAndMixedShapesRejected) {
  EXPECT_THROW(sequence_gradient(std::vector<TokenGradientInput>{}), SchemaError);
  const std::vector<TokenGradientInput> mixed = {{{1, 2}, {3}}, {{1}, {3}}};
  EXPECT_THROW(sequence_gradient(mixed), SchemaError);
}

TEST(SequenceGradient, PermutationInvariant) {
  // Entries are small integers so the sums are exact in any order.
  Rng r(9);
  std::vector<TokenGradientInput> toks;
  for (int t = 0; t < 6; ++t) {
    TokenGradientInput tok{std::vector<double>(3), std::vector<double>(2)};
    for (auto& x : tok.output_grad) x = static_cast<double>(r.uniform_index(9)) - 4.0;
    for (auto& x : tok.hidden) x = static_cast<double>(r.uniform_index(9)) - 4.0;
    toks.push_back(tok);
  }
  const Matrix ref = sequence_gradient(toks);
  for (int trial = 0; trial < 20; ++trial) {
    for (std::size_t i = toks.size(); i > 1; --i) std::swap(toks[i - 1], toks[r.uniform_index(i)]);
    EXPECT_EQ(sequence_gradient(toks), ref);
  }
}

TEST(SecondMoment, OneStepFromZero) {
  SecondMomentState s(1, 1);
  const auto next = update_second_moment(s, Matrix(1, 1, 1.0));
  EXPECT_NEAR(next.v(0, 0), 0.001, 1e-15);
  EXPECT_EQ(next.step, 1u);
  EXPECT_EQ(s.step, 0u);  // input untouched
  EXPECT_EQ(s.v(0, 0), 0.0);
}

TEST(SecondMoment, ZeroGradientDecays) {
  SecondMomentState s(2, 2);
  s.v = Matrix(2, 2, 4.0);
  s.step = 3;
  const auto next = update_second_moment(s, Matrix(2, 2));
  for (double v : next.v.values()) EXPECT_DOUBLE_EQ(v, 0.999 * 4.0);
  EXPECT_EQ(next.step, 4u);
}

TEST(SecondMoment, MemorylessLimit) {
  SecondMomentState s(1, 2, 0.0);
  s.v = Matrix(1, 2, 9.0);
  Matrix g(1, 2);
  g(0, 0) = 3.0;
  g(0, 1) = -0.5;
  const auto next = update_second_moment(s, g);
  EXPECT_EQ(next.v(0, 0), 9.0);
  EXPECT_EQ(next.v(0, 1), 0.25);
}

TEST(SecondMoment, ShapeMismatchRejected) {
  SecondMomentState s(2, 2);
  EXPECT_THROW((void)update_second_moment(s, Matrix(2, 3)), SchemaError);
  EXPECT_THROW(SecondMomentState(1, 1, 1.0), ConfigError);
  EXPECT_THROW(SecondMomentState(1, 1, 0.9, 0.0), ConfigError);
}

TEST(BiasCorrection, Examples) {
  SecondMomentState s(1, 1);
  EXPECT_THROW(bias_corrected_v(s), NumericError);
  s = update_second_moment(s, Matrix(1, 1, 1.0));
  EXPECT_NEAR(bias_corrected_v(s)(0, 0), 1.0, 1e-12);

  SecondMomentState h(1, 1, 0.5);
  h = update_second_moment(h, Matrix(1, 1, 1.0));
  h = update_second_moment(h, Matrix(1, 1, 1.0));
  EXPECT_DOUBLE_EQ(h.v(0, 0), 0.75);
  EXPECT_DOUBLE_EQ(bias_corrected_v(h)(0, 0), 1.0);
}

TEST(BiasCorrection, StationaryLimit) {
  SecondMomentState s(1, 1, 0.9);
  for (int t = 0; t < 2000; ++t) s = update_second_moment(s, Matrix(1, 1, 3.0));
  EXPECT_NEAR(bias_corrected_v(s)(0, 0), 9.0, 1e-9);
}

TEST(SecondMoment, MatchesReferenceRecurrence) {
  Rng r(123);
  SecondMomentState s(2, 3);
  std::vector<std::vector<double>> history;
  for (int t = 0; t < 1000; ++t) {
    Matrix g(2, 3);
    for (auto& x : g.values()) x = r.normal();
    history.emplace_back(g.values().begin(), g.values().end());
    s = update_second_moment(s, g);
    if ((t + 1) % 97 == 0 || t == 0) {
      const auto ref = oracle::adam_v_hat(history, s.beta2);
      const auto got = bias_corrected_v(s);
      for (std::size_t i = 0; i < ref.size(); ++i)
        ASSERT_LE(std::abs(got.values()[i] - ref[i]) / ref[i], 1e-12) << "step " << t;
    }
  }
}

TEST(SecondMoment, ConvexCombinationBound) {
  Rng r(5);
  SecondMomentState s(3, 3, 0.9);
  double gmax2 = 0.0;
  for (int t = 0; t < 300; ++t) {
    Matrix g(3, 3);
    for (auto& x : g.values()) {
      x = 4.0 * (r.uniform01() - 0.5);
      gmax2 = std::max(gmax2, x * x);
    }
    const auto prev_step = s.step;
    s = update_second_moment(s, g);
    ASSERT_EQ(s.step, prev_step + 1);
    for (double v : s.v.values()) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, gmax2);
    }
  }
}

TEST(HessianFeature, Examples) {
  Matrix g = from_rows({{3, 4}});
  Matrix v_hat(1, 2, 1.0);
  EXPECT_NEAR(hessian_feature(g, v_hat, 1e-300)[0], 5.0, 1e-12);

  EXPECT_EQ(hessian_feature(Matrix(3, 2), Matrix(3, 2, 1.0), 1e-8), FeatureVector(3, 0.0));

  Matrix g2 = from_rows({{2, 0}});
  Matrix v2(1, 2, 4.0);
  EXPECT_NEAR(hessian_feature(g2, v2, 1e-300)[0], 1.0, 1e-12);
}

TEST(HessianFeature, StateOverloadRequiresInitialization) {
  SecondMomentState s(1, 2);
  EXPECT_THROW(hessian_feature(Matrix(1, 2), s), NumericError);
  s = update_second_moment(s, from_rows({{3, 4}}));
  // v_hat recovers g^2, so each preconditioned entry is ~1 in magnitude.
  EXPECT_NEAR(hessian_feature(from_rows({{3, 4}}), s)[0], std::sqrt(2.0), 1e-6);
}

TEST(HessianFeature, OverflowIsNumericError) {
  Matrix g = from_rows({{1e300, 1e300}});
  Matrix v(1, 2, 0.0);
  EXPECT_THROW(hessian_feature(g, v, 1e-300), NumericError);
}

TEST(HessianFeature, HiddenPermutationInvariantAndNonNegative) {
  Rng r(77);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix g(4, 5), v(4, 5);
    for (auto& x : g.values()) x = r.normal();
    for (auto& x : v.values()) x = r.uniform01() + 0.1;
    std::vector<std::size_t> perm = {0, 1, 2, 3, 4};
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[r.uniform_index(i)]);
    Matrix gp(4, 5), vp(4, 5);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        gp(i, perm[j]) = g(i, j);
        vp(i, perm[j]) = v(i, j);
      }
    const auto a = hessian_feature(g, v, 1e-8);
    const auto b = hessian_feature(gp, vp, 1e-8);
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_GE(a[i], 0.0);
      EXPECT_NEAR(a[i], b[i], 1e-12 * a[i]);
    }
  }
}
