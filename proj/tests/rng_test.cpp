#include <gtest/gtest.h>

#include <set>

#include "slap/rng.hpp"

using slap::Rng;

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DifferentSeedsDiffer) {
  Rng a(1), b(2);
  int same = 0;
  for (int i = 0; i < 100; ++i) same += a.next_u64() == b.next_u64();
  EXPECT_EQ(same, 0);
}

TEST(Rng, Uniform01InRange) {
  Rng r(7);
  double sum = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = r.uniform01();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 100000.0, 0.5, 0.01);
}

TEST(Rng, UniformIndexCoversRangeEvenly) {
  Rng r(3);
  std::vector<int> hist(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const auto x = r.uniform_index(7);
    ASSERT_LT(x, 7u);
    ++hist[x];
  }
  for (int h : hist) EXPECT_NEAR(h, 10000, 400);
  EXPECT_EQ(r.uniform_index(1), 0u);
  EXPECT_EQ(r.uniform_index(0), 0u);
}

TEST(Rng, NormalMoments) {
  Rng r(11);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, ForkIsIndependentAndDoesNotAdvance) {
  Rng root(5);
  const Rng copy = root;
  Rng c1 = root.fork(1);
  Rng c2 = root.fork(2);
  EXPECT_EQ(root, copy);
  EXPECT_NE(c1.next_u64(), c2.next_u64());
  Rng c1b = copy.fork(1);
  Rng c1c = copy.fork(1);
  EXPECT_EQ(c1b.next_u64(), c1c.next_u64());
}
