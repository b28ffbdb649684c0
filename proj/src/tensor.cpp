#include "streetshop/tensor.hpp"

#include <algorithm>
#include <cstring>

#include "streetshop/error.hpp"

namespace streetshop {

Tensor::Tensor(Shape shape, float fill) : shape_(shape) {
  for (int d : shape_) require(d >= 0, ErrorCode::kShape, "negative tensor dimension");
  data_.assign(static_cast<std::size_t>(shape_[0]) * shape_[1] * shape_[2] * shape_[3], fill);
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
  Tensor out(shape);
  require(out.size() == size(), ErrorCode::kShape,
          "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  out.data_ = data_;
  return out;
}

Tensor Tensor::slice(int begin, int end) const {
  require(0 <= begin && begin <= end && end <= n(), ErrorCode::kShape, "batch slice out of range");
  Tensor out(end - begin, c(), h(), w());
  std::copy_n(data_.data() + begin * item_size(), out.size(), out.data());
  return out;
}

Tensor Tensor::stack(std::span<const Tensor> items) {
  if (items.empty()) return {};
  const auto& first = items.front().shape();
  int total = 0;
  for (const auto& t : items) {
    require(t.c() == first[1] && t.h() == first[2] && t.w() == first[3], ErrorCode::kShape,
            "stack: mismatched item shapes " + shape_string(first) + " vs " + shape_string(t.shape()));
    total += t.n();
  }
  Tensor out(total, first[1], first[2], first[3]);
  float* dst = out.data();
  for (const auto& t : items) {
    std::memcpy(dst, t.data(), t.size() * sizeof(float));
    dst += t.size();
  }
  return out;
}

Tensor Tensor::concat_channels(const Tensor& a, const Tensor& b) {
  require(a.n() == b.n() && a.h() == b.h() && a.w() == b.w(), ErrorCode::kShape,
          "concat_channels: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor out(a.n(), a.c() + b.c(), a.h(), a.w());
  for (int i = 0; i < a.n(); ++i) {
    auto dst = out.item(i);
    auto sa = a.item(i);
    auto sb = b.item(i);
    std::copy(sa.begin(), sa.end(), dst.begin());
    std::copy(sb.begin(), sb.end(), dst.begin() + static_cast<std::ptrdiff_t>(sa.size()));
  }
  return out;
}

std::string shape_string(const Tensor::Shape& shape) {
  return "[" + std::to_string(shape[0]) + "x" + std::to_string(shape[1]) + "x" +
         std::to_string(shape[2]) + "x" + std::to_string(shape[3]) + "]";
}

}  // namespace streetshop
