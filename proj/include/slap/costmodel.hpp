#pragma once

// Training-step FLOPs accounting for full batches versus pruned batches.
// Forward cost covers every input and output token of the batch; backward
// cost covers output tokens only and is scaled by the kept fraction.

#include <cmath>
#include <cstdint>
#include <string>

#include "slap/errors.hpp"

namespace slap {

struct FlopsModel {
  std::uint64_t batch_size = 320;
  std::uint64_t input_len = 1;
  std::uint64_t output_len = 1;
  double forward_per_token = 1.0;
  double backward_per_token = 2.0;
  double prune_rate = 0.0;  // fraction removed before the backward pass

  /// Backward cost defaults to twice the forward cost.
  static FlopsModel with_default_backward(std::uint64_t b, std::uint64_t li, std::uint64_t lo,
                                          double ff, double alpha) {
    return FlopsModel{b, li, lo, ff, 2.0 * ff, alpha};
  }

  void validate() const {
    if (batch_size == 0 || input_len == 0 || output_len == 0)
      throw ConfigError("batch size and token lengths must be positive");
    if (!(forward_per_token > 0.0) || !std::isfinite(forward_per_token))
      throw ConfigError("forward FLOPs per token must be positive and finite");
    if (!(backward_per_token > 0.0) || !std::isfinite(backward_per_token))
      throw ConfigError("backward FLOPs per token must be positive and finite");
    if (!(prune_rate >= 0.0 && prune_rate < 1.0))
      throw ConfigError("prune rate must lie in [0, 1)");
  }
};

inline double forward_flops(const FlopsModel& m) {
  m.validate();
  return static_cast<double>(m.batch_size) *
         static_cast<double>(m.input_len + m.output_len) * m.forward_per_token;
}

inline double full_backward_flops(const FlopsModel& m) {
  m.validate();
  return static_cast<double>(m.batch_size) * static_cast<double>(m.output_len) *
         m.backward_per_token;
}

inline double pruned_backward_flops(const FlopsModel& m) {
  return (1.0 - m.prune_rate) * full_backward_flops(m);
}

inline double full_batch_flops(const FlopsModel& m) {
  return forward_flops(m) + full_backward_flops(m);
}

inline double slap_flops(const FlopsModel& m) {
  return forward_flops(m) + pruned_backward_flops(m);
}

inline double savings_ratio(const FlopsModel& m) {
  return slap_flops(m) / full_batch_flops(m);
}

/// Multiply-adds spent on distance evaluations during selection,
/// |B| * |S| * D. Reported separately; not part of slap_flops.
inline double selection_overhead_flops(std::uint64_t batch, std::uint64_t kept,
                                       std::uint64_t feature_dim) {
  return static_cast<double>(batch) * static_cast<double>(kept) *
         static_cast<double>(feature_dim);
}

}  // namespace slap
