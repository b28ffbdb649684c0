#pragma once

// Loss kernels shared by both training phases. Everything here is templated
// on the scalar type so the gradient checks can run in double precision while
// training runs in float.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "streetshop/error.hpp"

namespace streetshop::losses {

inline constexpr double kProbabilityEps = 1e-7;

template <typename T>
T clamp_probability(T p) {
  return std::clamp(p, static_cast<T>(kProbabilityEps), static_cast<T>(1.0 - kProbabilityEps));
}

template <typename T>
T sigmoid(T z) {
  return z >= 0 ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
}

template <typename T>
void check_probability(T p) {
  require(std::isfinite(static_cast<double>(p)) && p > T(0) && p < T(1), ErrorCode::kNumeric,
          "probability outside (0,1): " + std::to_string(static_cast<double>(p)));
}

/// Binary cross entropy -t*log(p) - (1-t)*log(1-p). Used for both the
/// real/fake and the domain discriminator.
template <typename T>
T binary_cross_entropy(T p, int t) {
  check_probability(p);
  return t ? -std::log(p) : -std::log1p(-p);
}

/// d/dp of binary_cross_entropy.
template <typename T>
T binary_cross_entropy_grad(T p, int t) {
  check_probability(p);
  return t ? -T(1) / p : T(1) / (T(1) - p);
}

template <typename T>
T loss_real_fake(T p, int t) {
  return binary_cross_entropy(p, t);
}

template <typename T>
T loss_domain(T p, int t) {
  return binary_cross_entropy(p, t);
}

/// Converter objective on an inference: -L_R(p_r, t=0)/2 - L_A(p_a, t=0)/2.
template <typename T>
T loss_converter(T p_real_fake, T p_domain) {
  return -T(0.5) * loss_real_fake(p_real_fake, 0) - T(0.5) * loss_domain(p_domain, 0);
}

template <typename T>
struct ConverterGrad {
  T d_real_fake;
  T d_domain;
};

template <typename T>
ConverterGrad<T> loss_converter_grad(T p_real_fake, T p_domain) {
  return {-T(0.5) * binary_cross_entropy_grad(p_real_fake, 0),
          -T(0.5) * binary_cross_entropy_grad(p_domain, 0)};
}

/// The converter's non-saturating surrogate: BCE against the "real" and
/// "associated" labels, averaged over both discriminators.
template <typename T>
T loss_converter_nonsaturating(T p_real_fake, T p_domain) {
  return T(0.5) * loss_real_fake(p_real_fake, 1) + T(0.5) * loss_domain(p_domain, 1);
}

template <typename T>
ConverterGrad<T> loss_converter_nonsaturating_grad(T p_real_fake, T p_domain) {
  return {T(0.5) * binary_cross_entropy_grad(p_real_fake, 1),
          T(0.5) * binary_cross_entropy_grad(p_domain, 1)};
}

/// Row-major m x d features with labels in [0, n). W is d x n (column j is
/// the weight vector of class j), b has n entries.
template <typename T>
struct SoftmaxInputs {
  std::span<const T> features;
  std::span<const int> labels;
  std::span<const T> weights;
  std::span<const T> bias;
  std::size_t dim;
  std::size_t classes;
};

template <typename T>
struct SoftmaxGrad {
  std::span<T> features;  // m x d, may be empty
  std::span<T> weights;   // d x n, may be empty
  std::span<T> bias;      // n, may be empty
};

namespace detail {
template <typename T>
std::size_t check_softmax(const SoftmaxInputs<T>& in) {
  require(in.dim > 0 && in.classes > 0, ErrorCode::kArgument, "softmax: empty head");
  require(in.features.size() % in.dim == 0, ErrorCode::kShape, "softmax: feature size");
  const std::size_t m = in.features.size() / in.dim;
  require(in.labels.size() == m, ErrorCode::kShape, "softmax: label count");
  require(in.weights.size() == in.dim * in.classes && in.bias.size() == in.classes,
          ErrorCode::kShape, "softmax: head shape");
  for (int y : in.labels)
    require(y >= 0 && static_cast<std::size_t>(y) < in.classes, ErrorCode::kArgument,
            "softmax: label " + std::to_string(y) + " out of range");
  return m;
}
}  // namespace detail

/// Summed softmax cross entropy over the batch, stabilized with
/// log-sum-exp. Accumulates into `grad` spans that are non-empty.
template <typename T>
T softmax_loss(const SoftmaxInputs<T>& in, const SoftmaxGrad<T>& grad = {}) {
  const std::size_t m = detail::check_softmax(in);
  const std::size_t d = in.dim, n = in.classes;
  std::vector<T> logits(n);
  T total = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const T* x = in.features.data() + i * d;
    for (std::size_t j = 0; j < n; ++j) {
      T z = in.bias[j];
      for (std::size_t k = 0; k < d; ++k) z += in.weights[k * n + j] * x[k];
      logits[j] = z;
    }
    const T top = *std::max_element(logits.begin(), logits.end());
    T sum = 0;
    for (T z : logits) sum += std::exp(z - top);
    const T lse = top + std::log(sum);
    const auto y = static_cast<std::size_t>(in.labels[i]);
    total += lse - logits[y];
    if (grad.features.empty() && grad.weights.empty() && grad.bias.empty()) continue;
    for (std::size_t j = 0; j < n; ++j) {
      const T delta = std::exp(logits[j] - lse) - (j == y ? T(1) : T(0));
      if (!grad.bias.empty()) grad.bias[j] += delta;
      for (std::size_t k = 0; k < d; ++k) {
        if (!grad.weights.empty()) grad.weights[k * n + j] += delta * x[k];
        if (!grad.features.empty()) grad.features[i * d + k] += delta * in.weights[k * n + j];
      }
    }
  }
  return total;
}

/// 0.5 * sum_i ||x_i - c_{y_i}||^2 with centers stored row-major (n x d).
/// Accumulates x_i - c_{y_i} into `grad_features` when non-empty.
template <typename T>
T center_loss(std::span<const T> features, std::span<const int> labels, std::span<const T> centers,
              std::size_t dim, std::span<T> grad_features = {}) {
  require(dim > 0 && features.size() % dim == 0 && centers.size() % dim == 0, ErrorCode::kShape,
          "center_loss: shape");
  const std::size_t m = features.size() / dim;
  const std::size_t n = centers.size() / dim;
  require(labels.size() == m, ErrorCode::kShape, "center_loss: label count");
  T total = 0;
  for (std::size_t i = 0; i < m; ++i) {
    require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < n, ErrorCode::kArgument,
            "center_loss: label " + std::to_string(labels[i]) + " out of range");
    const T* x = features.data() + i * dim;
    const T* c = centers.data() + static_cast<std::size_t>(labels[i]) * dim;
    for (std::size_t k = 0; k < dim; ++k) {
      const T diff = x[k] - c[k];
      total += diff * diff;
      if (!grad_features.empty()) grad_features[i * dim + k] += diff;
    }
  }
  return total / 2;
}

template <typename T>
T joint_loss(T softmax, T center, T lambda) {
  return softmax + lambda * center;
}

}  // namespace streetshop::losses
