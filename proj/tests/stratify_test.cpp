#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "oracles/oracles.hpp"
#include "slap/stratify.hpp"

using namespace slap;

namespace {

Batch batch_of(std::vector<double> losses) {
  std::vector<SampleRecord> recs;
  for (std::size_t i = 0; i < losses.size(); ++i)
    recs.push_back({static_cast<SampleId>(i), losses[i], {0.0}});
  return Batch(std::move(recs));
}

}  // namespace

TEST(Batch, Validation) {
  EXPECT_THROW(Batch(std::vector<SampleRecord>{}), SchemaError);
  EXPECT_THROW(Batch({{1, 0.0, {1}}, {1, 1.0, {2}}}), IntegrityError);
  EXPECT_THROW(Batch({{1, 0.0, {1}}, {2, 1.0, {2, 3}}}), SchemaError);
  EXPECT_THROW(Batch({{1, INFINITY, {1}}}), NumericError);
  EXPECT_NO_THROW(Batch({{1, -3.0, {1}}}));
}

TEST(CoresetSize, RoundHalfUpAndClamp) {
  EXPECT_EQ(coreset_size(320, 0.3), 96u);
  EXPECT_EQ(coreset_size(5, 0.5), 3u);   // 2.5 rounds up
  EXPECT_EQ(coreset_size(10, 0.01), 1u); // clamped to 1
  EXPECT_EQ(coreset_size(7, 1.0), 7u);
  EXPECT_THROW(coreset_size(10, 0.0), ConfigError);
  EXPECT_THROW(coreset_size(10, 1.5), ConfigError);
  EXPECT_THROW(coreset_size(10, NAN), ConfigError);
}

TEST(PartitionByLoss, Examples) {
  auto p = partition_by_loss(batch_of({0, 1, 2, 3}), 3);
  EXPECT_DOUBLE_EQ(p.width, 1.0);
  EXPECT_EQ(p.assignment, (std::vector<std::size_t>{0, 1, 2, 2}));

  p = partition_by_loss(batch_of({4, 4, 4}), 5);
  EXPECT_EQ(p.width, 0.0);
  EXPECT_EQ(p.assignment, (std::vector<std::size_t>{0, 0, 0}));
  EXPECT_EQ(p.members[0].size(), 3u);

  p = partition_by_loss(batch_of({0.0, 0.4, 0.5, 0.9, 1.0}), 2);
  EXPECT_DOUBLE_EQ(p.width, 0.5);
  EXPECT_EQ(p.assignment, (std::vector<std::size_t>{0, 0, 1, 1, 1}));
  EXPECT_EQ(p.members[1], (std::vector<std::size_t>{2, 3, 4}));
}

TEST(PartitionByLoss, TotalAndDeterministic) {
  Rng r(4);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> l(1 + r.uniform_index(30));
    for (auto& x : l) x = 10.0 * r.normal();
    const auto b = batch_of(l);
    const std::size_t k = 1 + r.uniform_index(10);
    const auto p = partition_by_loss(b, k);
    std::size_t total = 0;
    for (const auto& m : p.members) total += m.size();
    EXPECT_EQ(total, b.size());
    for (auto a : p.assignment) EXPECT_LT(a, k);
    EXPECT_EQ(partition_by_loss(b, k).assignment, p.assignment);
  }
  EXPECT_THROW(partition_by_loss(batch_of({1}), 0), ConfigError);
}

TEST(SoftmaxWeights, Examples) {
  auto w = softmax_weights(std::vector<double>{1, 1, 1});
  for (double x : w) EXPECT_NEAR(x, 1.0 / 3.0, 1e-15);
  w = softmax_weights(std::vector<double>{0, std::numbers::ln2});
  EXPECT_NEAR(w[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(w[1], 2.0 / 3.0, 1e-15);
  w = softmax_weights(std::vector<double>{1000, 1000 + std::log(3.0)});
  EXPECT_NEAR(w[0], 0.25, 1e-12);
  EXPECT_NEAR(w[1], 0.75, 1e-12);
  EXPECT_THROW(softmax_weights(std::vector<double>{1, NAN}), SchemaError);
  EXPECT_THROW(softmax_weights(std::vector<double>{}), SchemaError);
}

TEST(SoftmaxWeights, ShiftInvariantNormalizedAndMonotone) {
  Rng r(8);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> l(2 + r.uniform_index(20));
    for (auto& x : l) x = 5.0 * r.normal();
    auto shifted = l;
    const double c = 1e4 * (r.uniform01() - 0.5);
    for (auto& x : shifted) x += c;
    const auto a = softmax_weights(l);
    const auto b = softmax_weights(shifted);
    double sa = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      sa += a[i];
      EXPECT_NEAR(a[i], b[i], 1e-12);
      for (std::size_t j = 0; j < a.size(); ++j)
        if (l[i] > l[j]) { EXPECT_GT(a[i], a[j]); }
    }
    EXPECT_NEAR(sa, 1.0, 1e-12);
  }
}

TEST(SampleSelectionCounts, KeepEverything) {
  const auto b = batch_of({0, 0.5, 1, 3, 3, 9});
  const auto p = partition_by_loss(b, 3);
  Rng r(1);
  const auto c = sample_selection_counts(b, p, 1.0, r);
  for (std::size_t s = 0; s < 3; ++s) EXPECT_EQ(c.counts[s], p.stratum_size(s));

  const auto one = batch_of({2.0});
  EXPECT_EQ(sample_selection_counts(one, partition_by_loss(one, 1), 1.0, r).counts,
            std::vector<std::size_t>{1});
}

TEST(SampleSelectionCounts, RejectsBadKeepFraction) {
  const auto b = batch_of({0, 1});
  const auto p = partition_by_loss(b, 1);
  Rng r(1);
  EXPECT_THROW(sample_selection_counts(b, p, 0.0, r), ConfigError);
  EXPECT_THROW(sample_selection_counts(b, p, 1.01, r), ConfigError);
}

TEST(SampleSelectionCounts, SumAndCapacityInvariants) {
  Rng r(99);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> l(1 + r.uniform_index(40));
    for (auto& x : l) x = 3.0 * r.normal();
    const auto b = batch_of(l);
    const auto p = partition_by_loss(b, 1 + r.uniform_index(8));
    const double keep = 0.01 + 0.99 * r.uniform01();
    const auto c = sample_selection_counts(b, p, keep, r);
    EXPECT_EQ(c.total(), coreset_size(b.size(), keep));
    for (std::size_t s = 0; s < p.k; ++s) EXPECT_LE(c.counts[s], p.stratum_size(s));
  }
}

TEST(SampleSelectionCounts, HighLossStratumFrequencyMatchesEnumeration) {
  const std::vector<double> losses = {0, 0, 10, 10};
  const auto expected = oracle::expected_label_counts(losses, {0, 0, 1, 1}, 2);
  // Enumerated: the high stratum receives both draws almost surely.
  ASSERT_GE(expected.at(1), 1.99);

  const auto b = batch_of(losses);
  const auto p = partition_by_loss(b, 2);
  Rng r(2024);
  const int trials = 100000;
  double high = 0.0;
  for (int t = 0; t < trials; ++t) high += static_cast<double>(sample_selection_counts(b, p, 0.5, r).counts[1]);
  const double mean = high / trials;
  EXPECT_GE(mean, 1.99);
  EXPECT_NEAR(mean, expected.at(1), 0.002);
}

TEST(WeightedSampling, SecondDrawRenormalizes) {
  // losses 0, ln2, ln3: P(first = a) is 1/6, 2/6, 3/6; after removing the
  // heaviest the remaining pair splits 1/3, 2/3.
  const std::vector<double> l = {0.0, std::log(2.0), std::log(3.0)};
  const auto exp = oracle::expected_label_counts(l, {0, 1, 2}, 2);
  Rng r(31);
  std::vector<double> hits(3, 0.0);
  const int trials = 100000;
  for (int t = 0; t < trials; ++t)
    for (auto i : weighted_sample_without_replacement(l, 2, r)) hits[i] += 1.0;
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(hits[i] / trials, exp.at(i), 0.01);
}
