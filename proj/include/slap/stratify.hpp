#pragma once

// Loss stratification and exp(loss)-weighted quota allocation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "slap/errors.hpp"
#include "slap/features.hpp"
#include "slap/rng.hpp"

namespace slap {

using SampleId = std::int64_t;

struct SampleRecord {
  SampleId id = 0;
  double loss = 0.0;
  FeatureVector feature;
};

/// An ordered, non-empty set of samples with unique ids and a common feature
/// length.
class Batch {
 public:
  Batch() = default;
  explicit Batch(std::vector<SampleRecord> samples) : samples_(std::move(samples)) {
    validate();
  }

  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }
  const SampleRecord& operator[](std::size_t i) const { return samples_[i]; }
  std::span<const SampleRecord> samples() const noexcept { return samples_; }
  auto begin() const noexcept { return samples_.begin(); }
  auto end() const noexcept { return samples_.end(); }

  std::size_t feature_dim() const noexcept {
    return samples_.empty() ? 0 : samples_.front().feature.size();
  }

  std::vector<double> losses() const {
    std::vector<double> out;
    out.reserve(samples_.size());
    for (const auto& s : samples_) out.push_back(s.loss);
    return out;
  }

 private:
  void validate() const {
    if (samples_.empty()) throw SchemaError("batch must be non-empty");
    std::unordered_set<SampleId> seen;
    const std::size_t dim = samples_.front().feature.size();
    for (const auto& s : samples_) {
      if (!seen.insert(s.id).second)
        throw IntegrityError("duplicate sample id " + std::to_string(s.id) + " in batch");
      if (!std::isfinite(s.loss))
        throw NumericError("non-finite loss for sample " + std::to_string(s.id));
      if (s.feature.size() != dim)
        throw SchemaError("feature length mismatch for sample " + std::to_string(s.id));
    }
  }

  std::vector<SampleRecord> samples_;
};

/// Even-width loss intervals. `assignment[i]` is the stratum of batch[i];
/// `members[k]` lists batch positions of stratum k in batch order.
struct StratumPartition {
  std::size_t k = 1;
  double lower = 0.0;
  double width = 0.0;
  std::vector<std::size_t> assignment;
  std::vector<std::vector<std::size_t>> members;

  std::size_t stratum_size(std::size_t s) const { return members[s].size(); }
};

struct SelectionCounts {
  std::vector<std::size_t> counts;

  std::size_t total() const {
    std::size_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }
  friend bool operator==(const SelectionCounts&, const SelectionCounts&) = default;
};

struct SelectionConfig {
  double keep_fraction = 1.0;
  std::size_t k = 8;
  std::uint64_t seed = 0;
  double beta2 = SecondMomentState::kDefaultBeta2;
  double epsilon = SecondMomentState::kDefaultEpsilon;
};

/// Coreset size: round-half-up of keep_fraction * n, clamped to [1, n].
inline std::size_t coreset_size(std::size_t n, double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0))
    throw ConfigError("keep_fraction must lie in (0, 1], got " + std::to_string(keep_fraction));
  if (n == 0) throw ConfigError("cannot size a coreset of an empty batch");
  const auto raw = static_cast<std::size_t>(std::floor(keep_fraction * static_cast<double>(n) + 0.5));
  return std::clamp<std::size_t>(raw, 1, n);
}

/// Stratum of a loss value: clamped floor((loss - lower) / width).
inline std::size_t stratum_index(double loss, double lower, double width, std::size_t k) {
  if (width <= 0.0) return 0;
  const double pos = std::floor((loss - lower) / width);
  if (pos <= 0.0) return 0;
  return std::min(static_cast<std::size_t>(pos), k - 1);
}

inline StratumPartition partition_by_loss(const Batch& batch, std::size_t k) {
  if (k == 0) throw ConfigError("number of strata must be positive");
  if (batch.empty()) throw SchemaError("cannot stratify an empty batch");
  auto [lo, hi] = std::minmax_element(batch.begin(), batch.end(),
                                      [](const auto& a, const auto& b) { return a.loss < b.loss; });
  StratumPartition p;
  p.k = k;
  p.lower = lo->loss;
  p.width = (hi->loss - lo->loss) / static_cast<double>(k);
  p.assignment.resize(batch.size());
  p.members.assign(k, {});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::size_t s = stratum_index(batch[i].loss, p.lower, p.width, k);
    p.assignment[i] = s;
    p.members[s].push_back(i);
  }
  return p;
}

/// exp(l - max l) normalized to sum to one.
inline std::vector<double> softmax_weights(std::span<const double> losses) {
  if (losses.empty()) throw SchemaError("softmax of an empty vector");
  for (double l : losses)
    if (!std::isfinite(l)) throw SchemaError("non-finite loss in softmax input");
  const double mx = *std::max_element(losses.begin(), losses.end());
  std::vector<double> w(losses.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    w[i] = std::exp(losses[i] - mx);
    sum += w[i];
  }
  for (auto& x : w) x /= sum;
  return w;
}

/// One categorical draw: the first index whose running probability exceeds a
/// fresh uniform in [0, 1); the last index absorbs round-off.
inline std::size_t categorical_draw(std::span<const double> probs, Rng& rng) {
  const double u = rng.uniform01();
  double cum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    cum += probs[i];
    if (u < cum) return i;
  }
  return probs.size() - 1;
}

/// Sequential softmax(loss) draws without replacement, renormalizing over the
/// remaining pool (kept in original order) after each draw. Returns positions
/// into `losses` in draw order. Consumes exactly `n` uniforms.
inline std::vector<std::size_t> weighted_sample_without_replacement(std::span<const double> losses,
                                                                    std::size_t n, Rng& rng) {
  if (n > losses.size()) throw ConfigError("sample size exceeds population");
  std::vector<std::size_t> pool(losses.size());
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  std::vector<std::size_t> drawn;
  drawn.reserve(n);
  std::vector<double> pool_losses;
  for (std::size_t t = 0; t < n; ++t) {
    pool_losses.clear();
    for (auto i : pool) pool_losses.push_back(losses[i]);
    const auto probs = softmax_weights(pool_losses);
    const std::size_t pick = categorical_draw(probs, rng);
    drawn.push_back(pool[pick]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  return drawn;
}

/// Draws |S| samples by exp(loss) without replacement and tallies them by
/// stratum. Only the per-stratum counts are returned.
inline SelectionCounts sample_selection_counts(const Batch& batch, const StratumPartition& partition,
                                               double keep_fraction, Rng& rng) {
  if (partition.assignment.size() != batch.size())
    throw IntegrityError("partition does not belong to this batch");
  const std::size_t n = coreset_size(batch.size(), keep_fraction);
  const auto losses = batch.losses();
  SelectionCounts out{std::vector<std::size_t>(partition.k, 0)};
  for (auto pos : weighted_sample_without_replacement(losses, n, rng))
    ++out.counts[partition.assignment[pos]];
  return out;
}

}  // namespace slap
