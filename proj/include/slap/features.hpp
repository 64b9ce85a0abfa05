#pragma once

// Per-sample gradient features from output-layer quantities.
//
// A token's output-layer gradient is the outer product of the logit gradient
// (length D) with the last hidden state (length H). A sequence sums its token
// gradients without length normalization. Features are the per-row L2 norms
// of that D x H matrix after elementwise preconditioning by the bias-corrected
// second moment, which yields one non-negative value per vocabulary row.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "slap/errors.hpp"

namespace slap {

/// Dense row-major real matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  bool same_shape(const Matrix& o) const noexcept {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  Matrix& operator+=(const Matrix& o) {
    if (!same_shape(o)) throw SchemaError("matrix shape mismatch in accumulation");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  Matrix& operator*=(double s) {
    for (auto& x : data_) x *= s;
    return *this;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

using FeatureVector = std::vector<double>;

struct TokenGradientInput {
  std::vector<double> output_grad;  // dL/dlogits, length D
  std::vector<double> hidden;       // last hidden state, length H
};

/// Declared per-batch dimensions. Zero means "not yet fixed".
struct GradientShape {
  std::size_t d = 0;
  std::size_t h = 0;
};

namespace detail {

inline bool all_finite(std::span<const double> xs) {
  for (double x : xs)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace detail

/// Outer product output_grad ⊗ hidden. When `shape` has non-zero dimensions
/// the token must match them.
inline Matrix token_gradient(const TokenGradientInput& tok, GradientShape shape = {}) {
  const std::size_t d = tok.output_grad.size();
  const std::size_t h = tok.hidden.size();
  if (d == 0 || h == 0) throw SchemaError("token gradient with empty dimension");
  if ((shape.d != 0 && shape.d != d) || (shape.h != 0 && shape.h != h)) {
    throw SchemaError("token dimensions (" + std::to_string(d) + ", " +
                      std::to_string(h) + ") do not match declared (" +
                      std::to_string(shape.d) + ", " + std::to_string(shape.h) + ")");
  }
  if (!detail::all_finite(tok.output_grad) || !detail::all_finite(tok.hidden))
    throw SchemaError("token gradient input contains non-finite values");

  Matrix m(d, h);
  for (std::size_t i = 0; i < d; ++i) {
    const double gi = tok.output_grad[i];
    auto row = m.row(i);
    for (std::size_t j = 0; j < h; ++j) row[j] = gi * tok.hidden[j];
  }
  return m;
}

/// Sum (not mean) of token gradients, accumulated in token order.
inline Matrix sequence_gradient(std::span<const TokenGradientInput> tokens,
                                GradientShape shape = {}) {
  if (tokens.empty()) throw SchemaError("empty token sequence");
  if (shape.d == 0 || shape.h == 0)
    shape = {tokens.front().output_grad.size(), tokens.front().hidden.size()};
  Matrix sum = token_gradient(tokens.front(), shape);
  for (std::size_t t = 1; t < tokens.size(); ++t) sum += token_gradient(tokens[t], shape);
  return sum;
}

/// Adam-style exponential moving average of squared gradients.
struct SecondMomentState {
  static constexpr double kDefaultBeta2 = 0.999;
  static constexpr double kDefaultEpsilon = 1e-8;

  Matrix v;
  std::uint64_t step = 0;
  double beta2 = kDefaultBeta2;
  double epsilon = kDefaultEpsilon;

  SecondMomentState() = default;
  SecondMomentState(std::size_t d, std::size_t h, double beta2_ = kDefaultBeta2,
                    double epsilon_ = kDefaultEpsilon)
      : v(d, h), beta2(beta2_), epsilon(epsilon_) {
    if (!(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("beta2 must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  }

  std::size_t rows() const noexcept { return v.rows(); }
  std::size_t cols() const noexcept { return v.cols(); }
  bool initialized() const noexcept { return step > 0; }

  friend bool operator==(const SecondMomentState&, const SecondMomentState&) = default;
};

/// v' = beta2 * v + (1 - beta2) * g^2, step' = step + 1. The input is left
/// untouched.
[[nodiscard]] inline SecondMomentState update_second_moment(const SecondMomentState& state,
                                                            const Matrix& g) {
  if (!state.v.same_shape(g)) throw SchemaError("second-moment update: shape mismatch");
  SecondMomentState next = state;
  const double b = state.beta2;
  auto v = next.v.values();
  auto gv = g.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = b * v[i] + (1.0 - b) * gv[i] * gv[i];
  next.step = state.step + 1;
  return next;
}

inline Matrix bias_corrected_v(const SecondMomentState& state) {
  if (state.step == 0) throw NumericError("second-moment state is uninitialized (step 0)");
  const double correction =
      1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  Matrix out = state.v;
  for (auto& x : out.values()) x /= correction;
  return out;
}

/// Row-wise L2 norm of g / sqrt(v_hat + epsilon). Takes the precomputed v_hat
/// so a batch of samples can share one bias correction.
inline FeatureVector hessian_feature(const Matrix& g, const Matrix& v_hat, double epsilon) {
  if (!g.same_shape(v_hat)) throw SchemaError("hessian feature: shape mismatch");
  FeatureVector out(g.rows());
  for (std::size_t i = 0; i < g.rows(); ++i) {
    auto gr = g.row(i);
    auto vr = v_hat.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < gr.size(); ++j) {
      const double p = gr[j] / std::sqrt(vr[j] + epsilon);
      acc += p * p;
    }
    out[i] = std::sqrt(acc);
    if (!std::isfinite(out[i]))
      throw NumericError("hessian feature overflowed in row " + std::to_string(i));
  }
  return out;
}

inline FeatureVector hessian_feature(const Matrix& g, const SecondMomentState& state) {
  return hessian_feature(g, bias_corrected_v(state), state.epsilon);
}

/// Elementwise mean of several gradients (accumulated in the given order).
inline Matrix mean_gradient(std::span<const Matrix* const> grads) {
  if (grads.empty()) throw SchemaError("mean of zero gradients");
  Matrix acc = *grads.front();
  for (std::size_t i = 1; i < grads.size(); ++i) acc += *grads[i];
  acc *= 1.0 / static_cast<double>(grads.size());
  return acc;
}

}  // namespace slap
