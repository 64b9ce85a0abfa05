#pragma once

// Batch selection policies: SLAP and the random / online-hard / CCS /
// InfoBatch baselines, plus a stateful front end that threads the shared
// second-moment state between batches.

#include <algorithm>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "slap/diversify.hpp"
#include "slap/errors.hpp"
#include "slap/features.hpp"
#include "slap/rng.hpp"
#include "slap/stratify.hpp"

namespace slap {

enum class PolicyKind { kSlap, kRandom, kOnlineHard, kCcs, kInfoBatch };

inline constexpr std::string_view policy_name(PolicyKind k) {
  switch (k) {
    case PolicyKind::kSlap: return "slap";
    case PolicyKind::kRandom: return "random";
    case PolicyKind::kOnlineHard: return "online_hard";
    case PolicyKind::kCcs: return "ccs";
    case PolicyKind::kInfoBatch: return "infobatch";
  }
  return "unknown";
}

inline PolicyKind parse_policy(std::string_view name) {
  for (auto k : {PolicyKind::kSlap, PolicyKind::kRandom, PolicyKind::kOnlineHard,
                 PolicyKind::kCcs, PolicyKind::kInfoBatch})
    if (policy_name(k) == name) return k;
  throw ConfigError("unknown policy '" + std::string(name) + "'");
}

struct SelectionPolicy {
  PolicyKind kind = PolicyKind::kSlap;
  SelectionConfig config;
  /// Stratum count for CCS; falls back to config.k.
  std::optional<std::size_t> ccs_k;

  std::size_t ccs_strata() const { return ccs_k.value_or(config.k); }
};

// ---------------------------------------------------------------------------
// SLAP

/// A sample before featurization: its loss and summed output-layer gradient.
struct RawSample {
  SampleId id = 0;
  double loss = 0.0;
  Matrix gradient;
};

struct FeaturizedBatch {
  Batch batch;
  std::vector<Matrix> gradients;  // aligned with batch order
  SecondMomentState state;        // state used for the features
};

/// Computes Hessian-approximated features for a raw batch. An uninitialized
/// state is first warmed with one update from the batch-mean gradient.
inline FeaturizedBatch featurize(std::span<const RawSample> raw, const SecondMomentState& state) {
  if (raw.empty()) throw SchemaError("cannot featurize an empty batch");
  for (const auto& r : raw)
    if (!state.v.same_shape(r.gradient))
      throw SchemaError("gradient shape of sample " + std::to_string(r.id) +
                        " does not match the second-moment state");
  FeaturizedBatch out;
  out.state = state;
  out.gradients.reserve(raw.size());
  for (const auto& r : raw) out.gradients.push_back(r.gradient);
  if (!out.state.initialized()) {
    std::vector<const Matrix*> ptrs;
    for (const auto& g : out.gradients) ptrs.push_back(&g);
    out.state = update_second_moment(out.state, mean_gradient(ptrs));
  }
  const Matrix v_hat = bias_corrected_v(out.state);
  std::vector<SampleRecord> records;
  records.reserve(raw.size());
  for (const auto& r : raw)
    records.push_back({r.id, r.loss, hessian_feature(r.gradient, v_hat, out.state.epsilon)});
  out.batch = Batch(std::move(records));
  return out;
}

struct SlapResult {
  Coreset coreset;
  SecondMomentState state;
};

/// Stratify, allocate quotas by exp(loss) sampling, then greedy max-min.
/// When `gradients` (aligned with the batch) is non-empty the returned state
/// has absorbed the mean gradient of the kept samples, summed in batch order.
inline SlapResult slap_select(const Batch& batch, const SelectionConfig& config,
                              const SecondMomentState& state, Rng& rng,
                              std::span<const Matrix> gradients = {},
                              const GreedyOptions& greedy = {}) {
  const std::size_t target = coreset_size(batch.size(), config.keep_fraction);
  const auto partition = partition_by_loss(batch, config.k);
  const auto counts = sample_selection_counts(batch, partition, config.keep_fraction, rng);
  SlapResult out{greedy_max_min_select(partition, counts, batch, rng, greedy), state};
  if (out.coreset.size() != target)
    throw InternalError("coreset size does not match the requested size");

  if (!gradients.empty()) {
    if (gradients.size() != batch.size())
      throw SchemaError("gradient list is not aligned with the batch");
    std::vector<char> kept(batch.size(), 0);
    std::unordered_map<SampleId, std::size_t> pos;
    for (std::size_t i = 0; i < batch.size(); ++i) pos.emplace(batch[i].id, i);
    for (const auto& e : out.coreset.selected) kept[pos.at(e.id)] = 1;
    std::vector<const Matrix*> ptrs;
    for (std::size_t i = 0; i < batch.size(); ++i)
      if (kept[i]) ptrs.push_back(&gradients[i]);
    out.state = update_second_moment(state, mean_gradient(ptrs));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Baselines

/// Partial Fisher-Yates over `pool`; returns the first `n` after shuffling.
/// Consumes exactly `n` uniform_index draws (fewer when n == pool size, as
/// the last swap is forced).
inline std::vector<std::size_t> uniform_subset(std::vector<std::size_t> pool, std::size_t n,
                                               Rng& rng) {
  if (n > pool.size()) throw ConfigError("subset larger than its pool");
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.uniform_index(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(n);
  return pool;
}

inline Coreset random_select(const Batch& batch, double keep_fraction, Rng& rng) {
  const std::size_t n = coreset_size(batch.size(), keep_fraction);
  std::vector<std::size_t> all(batch.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  Coreset out;
  for (auto pos : uniform_subset(std::move(all), n, rng)) out.push(batch[pos].id);
  return out;
}

/// Highest losses first; equal losses in ascending id order.
inline Coreset online_hard_select(const Batch& batch, double keep_fraction) {
  const std::size_t n = coreset_size(batch.size(), keep_fraction);
  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (batch[a].loss != batch[b].loss) return batch[a].loss > batch[b].loss;
    return batch[a].id < batch[b].id;
  });
  Coreset out;
  for (std::size_t i = 0; i < n; ++i) out.push(batch[order[i]].id);
  return out;
}

/// Even split of `total` over the non-empty strata (remainder to the lowest
/// indexed ones). A stratum that cannot fill its share passes the shortfall
/// to the next non-empty stratum, wrapping around until everything is placed.
inline SelectionCounts ccs_quotas(const StratumPartition& partition, std::size_t total) {
  std::vector<std::size_t> nonempty;
  for (std::size_t s = 0; s < partition.k; ++s)
    if (partition.stratum_size(s) > 0) nonempty.push_back(s);
  std::size_t capacity = 0;
  for (auto s : nonempty) capacity += partition.stratum_size(s);
  if (total > capacity) throw ConfigError("CCS target exceeds batch size");

  SelectionCounts q{std::vector<std::size_t>(partition.k, 0)};
  const std::size_t m = nonempty.size();
  for (std::size_t i = 0; i < m; ++i)
    q.counts[nonempty[i]] = total / m + (i < total % m ? 1 : 0);

  std::size_t carry = 0;
  for (auto s : nonempty) {
    q.counts[s] += carry;
    carry = 0;
    if (q.counts[s] > partition.stratum_size(s)) {
      carry = q.counts[s] - partition.stratum_size(s);
      q.counts[s] = partition.stratum_size(s);
    }
  }
  for (std::size_t i = 0; carry > 0; i = (i + 1) % m) {
    const auto s = nonempty[i];
    const std::size_t room = partition.stratum_size(s) - q.counts[s];
    const std::size_t add = std::min(room, carry);
    q.counts[s] += add;
    carry -= add;
  }
  return q;
}

inline Coreset ccs_select(const Batch& batch, double keep_fraction, std::size_t k, Rng& rng) {
  const std::size_t n = coreset_size(batch.size(), keep_fraction);
  const auto partition = partition_by_loss(batch, k);
  const auto quotas = ccs_quotas(partition, n);
  Coreset out;
  for (std::size_t s = 0; s < partition.k; ++s) {
    if (quotas.counts[s] == 0) continue;
    for (auto pos : uniform_subset(partition.members[s], quotas.counts[s], rng))
      out.push(batch[pos].id, 1.0, s);
  }
  return out;
}

/// Threshold and keep probability used by InfoBatch for one batch.
struct InfoBatchPlan {
  double threshold = 0.0;
  std::size_t above = 0;  // samples with loss >= threshold (always kept)
  double p_keep = 1.0;    // keep probability below the threshold
};

/// Starts at the mean loss. If the above-threshold set alone is larger than
/// the target, the threshold rises to the smallest loss value whose
/// upper set fits; p_keep then fills the expected size exactly.
inline InfoBatchPlan infobatch_plan(const Batch& batch, double keep_fraction) {
  const std::size_t n = batch.size();
  const std::size_t target = coreset_size(n, keep_fraction);
  const auto losses = batch.losses();
  double mean = 0.0;
  for (double l : losses) mean += l;
  mean /= static_cast<double>(n);

  auto count_at_least = [&](double t) {
    return static_cast<std::size_t>(
        std::count_if(losses.begin(), losses.end(), [t](double l) { return l >= t; }));
  };

  InfoBatchPlan plan;
  plan.threshold = mean;
  plan.above = count_at_least(mean);
  if (plan.above > target) {
    auto sorted = losses;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    plan.threshold = std::numeric_limits<double>::infinity();
    plan.above = 0;
    for (double t : sorted) {
      if (t <= mean) continue;
      const std::size_t c = count_at_least(t);
      if (c <= target) {
        plan.threshold = t;
        plan.above = c;
        break;
      }
    }
  }
  const std::size_t below = n - plan.above;
  plan.p_keep = below == 0 ? 1.0
                           : static_cast<double>(target - plan.above) / static_cast<double>(below);
  return plan;
}

/// Keeps every sample at or above the threshold; keeps each one below it with
/// probability p_keep and weight 1/p_keep. The size is random with the target
/// as its expectation. One uniform is consumed per below-threshold sample.
inline Coreset infobatch_select(const Batch& batch, double keep_fraction, Rng& rng) {
  const auto plan = infobatch_plan(batch, keep_fraction);
  Coreset out;
  for (const auto& s : batch) {
    if (s.loss >= plan.threshold) {
      out.push(s.id);
    } else if (rng.uniform01() < plan.p_keep) {
      out.push(s.id, 1.0 / plan.p_keep);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Common interface

/// Runs one policy over successive batches. Owns the second-moment state used
/// by SLAP; other policies ignore it.
class Selector {
 public:
  explicit Selector(SelectionPolicy policy, SecondMomentState state = {})
      : policy_(std::move(policy)), state_(std::move(state)) {}

  const SelectionPolicy& policy() const noexcept { return policy_; }
  const SecondMomentState& state() const noexcept { return state_; }

  /// Selection over a batch with precomputed features.
  Coreset select(const Batch& batch, Rng& rng, std::span<const Matrix> gradients = {}) {
    const auto& cfg = policy_.config;
    switch (policy_.kind) {
      case PolicyKind::kSlap: {
        auto r = slap_select(batch, cfg, state_, rng, gradients);
        state_ = std::move(r.state);
        return std::move(r.coreset);
      }
      case PolicyKind::kRandom: return random_select(batch, cfg.keep_fraction, rng);
      case PolicyKind::kOnlineHard: return online_hard_select(batch, cfg.keep_fraction);
      case PolicyKind::kCcs: return ccs_select(batch, cfg.keep_fraction, policy_.ccs_strata(), rng);
      case PolicyKind::kInfoBatch: return infobatch_select(batch, cfg.keep_fraction, rng);
    }
    throw InternalError("unhandled policy kind");
  }

  /// Selection over raw gradients. SLAP featurizes with the current state and
  /// then folds the kept-sample mean gradient back into it.
  Coreset select_raw(std::span<const RawSample> raw, Rng& rng) {
    if (policy_.kind != PolicyKind::kSlap) {
      std::vector<SampleRecord> records;
      records.reserve(raw.size());
      for (const auto& r : raw) records.push_back({r.id, r.loss, {}});
      return select(Batch(std::move(records)), rng);
    }
    if (state_.rows() == 0 && !raw.empty())
      state_ = SecondMomentState(raw.front().gradient.rows(), raw.front().gradient.cols(),
                                 policy_.config.beta2, policy_.config.epsilon);
    auto fb = featurize(raw, state_);
    auto r = slap_select(fb.batch, policy_.config, fb.state, rng, fb.gradients);
    state_ = std::move(r.state);
    return std::move(r.coreset);
  }

 private:
  SelectionPolicy policy_;
  SecondMomentState state_;
};

}  // namespace slap
