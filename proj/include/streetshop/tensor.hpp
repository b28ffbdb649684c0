#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace streetshop {

/// Dense NCHW float tensor. Fully connected activations use H = W = 1.
class Tensor {
 public:
  using Shape = std::array<int, 4>;

  Tensor() : shape_{0, 0, 0, 0} {}
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(int n, int c, int h, int w, float fill = 0.0f)
      : Tensor(Shape{n, c, h, w}, fill) {}

  const Shape& shape() const noexcept { return shape_; }
  int n() const noexcept { return shape_[0]; }
  int c() const noexcept { return shape_[1]; }
  int h() const noexcept { return shape_[2]; }
  int w() const noexcept { return shape_[3]; }
  std::size_t size() const noexcept { return data_.size(); }
  /// Elements per batch item.
  std::size_t item_size() const noexcept {
    return static_cast<std::size_t>(shape_[1]) * shape_[2] * shape_[3];
  }
  bool empty() const noexcept { return data_.empty(); }

  float* data() noexcept { return data_.data(); }
  const float* data() const noexcept { return data_.data(); }
  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }
  std::span<float> item(int i) noexcept {
    return {data_.data() + i * item_size(), item_size()};
  }
  std::span<const float> item(int i) const noexcept {
    return {data_.data() + i * item_size(), item_size()};
  }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }
  float& at(int n, int c, int h, int w) noexcept {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  float at(int n, int c, int h, int w) const noexcept {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  void fill(float v);
  /// Same data, different shape; element counts must agree.
  Tensor reshaped(Shape shape) const;

  /// Rows [begin, end) of the batch dimension.
  Tensor slice(int begin, int end) const;
  /// Stacks items along the batch dimension; all items must share C, H, W.
  static Tensor stack(std::span<const Tensor> items);
  /// Channel concatenation of two tensors with equal N, H, W.
  static Tensor concat_channels(const Tensor& a, const Tensor& b);

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

std::string shape_string(const Tensor::Shape& shape);

}  // namespace streetshop
