#pragma once

// Greedy max-min (farthest-point) selection across loss strata.
//
// A single random point seeds the first stratum that has a non-zero quota.
// From then on every stratum, in ascending order, repeatedly takes the
// candidate whose minimum distance to everything already selected (in any
// stratum) is largest. Ties go to the lowest sample id. The minimum-distance
// cache is kept for every unselected sample and updated once per selection,
// so a run costs at most |B| * |S| distance evaluations.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slap/errors.hpp"
#include "slap/rng.hpp"
#include "slap/stratify.hpp"

namespace slap {

struct CoresetEntry {
  SampleId id = 0;
  std::size_t order = 0;
  double weight = 1.0;
  std::optional<std::size_t> stratum;
  /// Minimum distance to the selected set at the moment of selection; empty
  /// for the randomly seeded point and for policies that do not use distances.
  std::optional<double> min_dist_at_selection;

  friend bool operator==(const CoresetEntry&, const CoresetEntry&) = default;
};

struct Coreset {
  std::vector<CoresetEntry> selected;

  std::size_t size() const noexcept { return selected.size(); }
  std::vector<SampleId> ids() const {
    std::vector<SampleId> out;
    out.reserve(selected.size());
    for (const auto& e : selected) out.push_back(e.id);
    return out;
  }
  double total_weight() const {
    double w = 0.0;
    for (const auto& e : selected) w += e.weight;
    return w;
  }

  void push(SampleId id, double weight = 1.0, std::optional<std::size_t> stratum = {},
            std::optional<double> min_dist = {}) {
    selected.push_back({id, selected.size(), weight, stratum, min_dist});
  }

  friend bool operator==(const Coreset&, const Coreset&) = default;
};

inline double l2_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw SchemaError("l2_distance: length mismatch (" + std::to_string(a.size()) + " vs " +
                      std::to_string(b.size()) + ")");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

inline double min_distance_to_set(std::span<const double> candidate,
                                  std::span<const FeatureVector> selected) {
  if (selected.empty()) throw SchemaError("min_distance_to_set: empty selected set");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : selected) best = std::min(best, l2_distance(candidate, s));
  return best;
}

/// Snapshot handed to a step observer after each selection.
struct GreedyStep {
  std::size_t stratum;
  std::size_t chosen;                   // batch position
  std::span<const std::size_t> selected;  // batch positions, selection order
  std::span<const double> min_dist;     // per batch position; +inf before any selection
  std::span<const char> is_selected;  // per batch position, non-zero once taken
};

struct GreedyOptions {
  std::function<void(const GreedyStep&)> on_step;
  /// Incremented once per l2_distance evaluation when non-null.
  std::uint64_t* distance_evals = nullptr;
};

/// Random-stream usage: exactly one uniform_index(|B_s|) draw, where s is the
/// first stratum with a non-zero quota; nothing else.
inline Coreset greedy_max_min_select(const StratumPartition& partition,
                                     const SelectionCounts& counts, const Batch& batch, Rng& rng,
                                     const GreedyOptions& opts = {}) {
  if (counts.counts.size() != partition.k)
    throw IntegrityError("selection counts do not match the partition's stratum count");
  if (partition.assignment.size() != batch.size())
    throw IntegrityError("partition does not belong to this batch");
  for (std::size_t s = 0; s < partition.k; ++s) {
    if (counts.counts[s] > partition.stratum_size(s))
      throw IntegrityError("quota " + std::to_string(counts.counts[s]) + " exceeds stratum " +
                           std::to_string(s) + " population " +
                           std::to_string(partition.stratum_size(s)));
  }

  const std::size_t n = batch.size();
  std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
  std::vector<char> taken(n, 0);
  std::vector<std::size_t> order;
  Coreset out;

  auto distance = [&](std::size_t a, std::size_t b) {
    if (opts.distance_evals) ++*opts.distance_evals;
    return l2_distance(batch[a].feature, batch[b].feature);
  };

  auto take = [&](std::size_t pos, std::size_t stratum, std::optional<double> at_selection) {
    taken[pos] = 1;
    order.push_back(pos);
    out.push(batch[pos].id, 1.0, stratum, at_selection);
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      min_dist[i] = std::min(min_dist[i], distance(i, pos));
    }
    if (opts.on_step) opts.on_step(GreedyStep{stratum, pos, order, min_dist, taken});
  };

  bool seeded = false;
  for (std::size_t s = 0; s < partition.k; ++s) {
    std::size_t quota = counts.counts[s];
    if (quota == 0) continue;
    const auto& members = partition.members[s];
    if (!seeded) {
      const auto pick = static_cast<std::size_t>(rng.uniform_index(members.size()));
      take(members[pick], s, std::nullopt);
      seeded = true;
      --quota;
    }
    for (std::size_t j = 0; j < quota; ++j) {
      std::size_t best = n;
      for (auto pos : members) {
        if (taken[pos]) continue;
        if (best == n || min_dist[pos] > min_dist[best] ||
            (min_dist[pos] == min_dist[best] && batch[pos].id < batch[best].id))
          best = pos;
      }
      if (best == n) throw InternalError("stratum exhausted before its quota was met");
      take(best, s, min_dist[best]);
    }
  }
  return out;
}

}  // namespace slap
