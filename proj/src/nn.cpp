#include "streetshop/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <Eigen/Core>

#include "streetshop/error.hpp"

namespace streetshop::nn {
namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

int conv_out(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

// Unfolds one (C, H, W) image into rows (c, ky, kx) of a matrix with row
// stride `ld`, writing columns [offset, offset + out_h * out_w).
void im2col(const float* img, int channels, int height, int width, int kernel, int stride,
            int pad, int out_h, int out_w, float* cols, std::size_t ld, std::size_t offset) {
  for (int c = 0; c < channels; ++c) {
    const float* plane = img + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        float* row = cols + ((static_cast<std::size_t>(c) * kernel + ky) * kernel + kx) * ld + offset;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          float* dst = row + static_cast<std::size_t>(oy) * out_w;
          if (iy < 0 || iy >= height) {
            std::fill_n(dst, out_w, 0.0f);
            continue;
          }
          const float* src = plane + static_cast<std::size_t>(iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < width) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates matrix columns back into the image.
void col2im(const float* cols, std::size_t ld, std::size_t offset, int channels, int height,
            int width, int kernel, int stride, int pad, int out_h, int out_w, float* img) {
  for (int c = 0; c < channels; ++c) {
    float* plane = img + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const float* row =
            cols + ((static_cast<std::size_t>(c) * kernel + ky) * kernel + kx) * ld + offset;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          const float* src = row + static_cast<std::size_t>(oy) * out_w;
          float* dst = plane + static_cast<std::size_t>(iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// (N, C, P) -> (C, N * P)
RowMatrix batch_to_channel_major(const Tensor& t) {
  const int n = t.n(), c = t.c();
  const int p = t.h() * t.w();
  RowMatrix m(c, static_cast<Eigen::Index>(n) * p);
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      std::memcpy(m.data() + static_cast<std::size_t>(ch) * n * p + static_cast<std::size_t>(i) * p,
                  t.data() + (static_cast<std::size_t>(i) * c + ch) * p, p * sizeof(float));
  return m;
}

// (C, N * P) -> (N, C, P), optionally adding a per-channel bias.
void channel_major_to_batch(const RowMatrix& m, const float* bias, Tensor& out) {
  const int n = out.n(), c = out.c();
  const int p = out.h() * out.w();
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const float* src = m.data() + static_cast<std::size_t>(ch) * n * p + static_cast<std::size_t>(i) * p;
      float* dst = out.data() + (static_cast<std::size_t>(i) * c + ch) * p;
      const float b = bias ? bias[ch] : 0.0f;
      for (int j = 0; j < p; ++j) dst[j] = src[j] + b;
    }
  }
}

void check_channels(const Tensor::Shape& in, int expected, const char* layer) {
  require(in[1] == expected, ErrorCode::kShape,
          std::string(layer) + ": expected " + std::to_string(expected) + " input channels, got " +
              shape_string(in));
}

Parameter make_param(std::string name, Tensor::Shape shape, float fill = 0.0f) {
  Tensor value(shape, fill);
  Tensor grad(shape);
  return Parameter{std::move(name), std::move(value), std::move(grad)};
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), pad_(pad),
      weight_(make_param("weight", {out_channels, in_channels * kernel * kernel, 1, 1})),
      bias_(make_param("bias", {out_channels, 1, 1, 1})) {}

Tensor::Shape Conv2d::output_shape(const Tensor::Shape& in) const {
  check_channels(in, in_, "conv2d");
  const int oh = conv_out(in[2], kernel_, stride_, pad_);
  const int ow = conv_out(in[3], kernel_, stride_, pad_);
  require(oh > 0 && ow > 0, ErrorCode::kShape, "conv2d: input too small " + shape_string(in));
  return {in[0], out_, oh, ow};
}

Tensor Conv2d::run(const Tensor& x, std::vector<float>* cols_out) const {
  const auto os = output_shape(x.shape());
  const int n = x.n();
  const std::size_t p = static_cast<std::size_t>(os[2]) * os[3];
  const std::size_t rows = static_cast<std::size_t>(in_) * kernel_ * kernel_;
  const std::size_t ld = n * p;
  std::vector<float> local;
  std::vector<float>& cols = cols_out ? *cols_out : local;
  cols.resize(rows * ld);
  for (int i = 0; i < n; ++i)
    im2col(x.item(i).data(), in_, x.h(), x.w(), kernel_, stride_, pad_, os[2], os[3], cols.data(),
           ld, i * p);
  ConstMatrixMap w(weight_.value.data(), out_, static_cast<Eigen::Index>(rows));
  ConstMatrixMap c(cols.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(ld));
  RowMatrix y = w * c;
  Tensor out(os);
  channel_major_to_batch(y, bias_.value.data(), out);
  return out;
}

Tensor Conv2d::infer(const Tensor& x) const { return run(x, nullptr); }

Tensor Conv2d::forward(const Tensor& x) {
  in_shape_ = x.shape();
  return run(x, &cols_);
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  const auto& is = in_shape_;
  const int n = is[0];
  const std::size_t p = static_cast<std::size_t>(grad_out.h()) * grad_out.w();
  const std::size_t rows = static_cast<std::size_t>(in_) * kernel_ * kernel_;
  const std::size_t ld = n * p;
  RowMatrix dy = batch_to_channel_major(grad_out);
  ConstMatrixMap cols(cols_.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(ld));
  MatrixMap dw(weight_.grad.data(), out_, static_cast<Eigen::Index>(rows));
  dw.noalias() += dy * cols.transpose();
  Eigen::Map<Eigen::VectorXf> db(bias_.grad.data(), out_);
  db += dy.rowwise().sum();
  ConstMatrixMap w(weight_.value.data(), out_, static_cast<Eigen::Index>(rows));
  RowMatrix dcols = w.transpose() * dy;
  Tensor dx(is);
  for (int i = 0; i < n; ++i)
    col2im(dcols.data(), ld, i * p, in_, is[2], is[3], kernel_, stride_, pad_, grad_out.h(),
           grad_out.w(), dx.item(i).data());
  return dx;
}

nlohmann::json Conv2d::describe() const {
  return {{"type", "conv2d"}, {"in", in_},        {"out", out_},
          {"kernel", kernel_}, {"stride", stride_}, {"pad", pad_}};
}

// ------------------------------------------------------- ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(int in_channels, int out_channels, int kernel, int stride,
                                 int pad, int output_pad)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), pad_(pad),
      output_pad_(output_pad),
      weight_(make_param("weight", {in_channels, out_channels * kernel * kernel, 1, 1})),
      bias_(make_param("bias", {out_channels, 1, 1, 1})) {}

Tensor::Shape ConvTranspose2d::output_shape(const Tensor::Shape& in) const {
  check_channels(in, in_, "conv_transpose2d");
  const int oh = (in[2] - 1) * stride_ - 2 * pad_ + kernel_ + output_pad_;
  const int ow = (in[3] - 1) * stride_ - 2 * pad_ + kernel_ + output_pad_;
  require(oh > 0 && ow > 0, ErrorCode::kShape, "conv_transpose2d: bad geometry");
  return {in[0], out_, oh, ow};
}

Tensor ConvTranspose2d::infer(const Tensor& x) const {
  const auto os = output_shape(x.shape());
  const int n = x.n();
  const std::size_t p = static_cast<std::size_t>(x.h()) * x.w();
  const std::size_t rows = static_cast<std::size_t>(out_) * kernel_ * kernel_;
  const std::size_t ld = n * p;
  RowMatrix xm = batch_to_channel_major(x);
  ConstMatrixMap w(weight_.value.data(), in_, static_cast<Eigen::Index>(rows));
  RowMatrix cols = w.transpose() * xm;
  Tensor out(os);
  for (int i = 0; i < n; ++i) {
    col2im(cols.data(), ld, i * p, out_, os[2], os[3], kernel_, stride_, pad_, x.h(), x.w(),
           out.item(i).data());
    auto item = out.item(i);
    const std::size_t plane = static_cast<std::size_t>(os[2]) * os[3];
    for (int c = 0; c < out_; ++c)
      for (std::size_t j = 0; j < plane; ++j) item[c * plane + j] += bias_.value[c];
  }
  return out;
}

Tensor ConvTranspose2d::forward(const Tensor& x) {
  input_ = x;
  return infer(x);
}

Tensor ConvTranspose2d::backward(const Tensor& grad_out) {
  const int n = input_.n();
  const int h = input_.h(), w = input_.w();
  const std::size_t p = static_cast<std::size_t>(h) * w;
  const std::size_t rows = static_cast<std::size_t>(out_) * kernel_ * kernel_;
  const std::size_t ld = n * p;
  std::vector<float> dcols(rows * ld);
  for (int i = 0; i < n; ++i)
    im2col(grad_out.item(i).data(), out_, grad_out.h(), grad_out.w(), kernel_, stride_, pad_, h,
           w, dcols.data(), ld, i * p);
  ConstMatrixMap dc(dcols.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(ld));
  RowMatrix xm = batch_to_channel_major(input_);
  MatrixMap dw(weight_.grad.data(), in_, static_cast<Eigen::Index>(rows));
  dw.noalias() += xm * dc.transpose();
  const std::size_t plane = static_cast<std::size_t>(grad_out.h()) * grad_out.w();
  for (int i = 0; i < n; ++i) {
    auto g = grad_out.item(i);
    for (int c = 0; c < out_; ++c) {
      float s = 0.0f;
      for (std::size_t j = 0; j < plane; ++j) s += g[c * plane + j];
      bias_.grad[c] += s;
    }
  }
  ConstMatrixMap wm(weight_.value.data(), in_, static_cast<Eigen::Index>(rows));
  RowMatrix dx = wm * dc;
  Tensor out(input_.shape());
  channel_major_to_batch(dx, nullptr, out);
  return out;
}

nlohmann::json ConvTranspose2d::describe() const {
  return {{"type", "conv_transpose2d"}, {"in", in_},   {"out", out_},
          {"kernel", kernel_},          {"stride", stride_}, {"pad", pad_},
          {"output_pad", output_pad_}};
}

// ---------------------------------------------------------------- Linear

Linear::Linear(int in_features, int out_features)
    : in_(in_features), out_(out_features),
      weight_(make_param("weight", {out_features, in_features, 1, 1})),
      bias_(make_param("bias", {out_features, 1, 1, 1})) {}

Tensor::Shape Linear::output_shape(const Tensor::Shape& in) const {
  require(in[1] * in[2] * in[3] == in_, ErrorCode::kShape,
          "linear: expected " + std::to_string(in_) + " features, got " + shape_string(in));
  return {in[0], out_, 1, 1};
}

Tensor Linear::infer(const Tensor& x) const {
  const auto os = output_shape(x.shape());
  ConstMatrixMap xm(x.data(), x.n(), in_);
  ConstMatrixMap w(weight_.value.data(), out_, in_);
  Eigen::Map<const Eigen::RowVectorXf> b(bias_.value.data(), out_);
  Tensor out(os);
  MatrixMap y(out.data(), x.n(), out_);
  y.noalias() = xm * w.transpose();
  y.rowwise() += b;
  return out;
}

Tensor Linear::forward(const Tensor& x) {
  input_ = x;
  return infer(x);
}

Tensor Linear::backward(const Tensor& grad_out) {
  ConstMatrixMap dy(grad_out.data(), grad_out.n(), out_);
  ConstMatrixMap xm(input_.data(), input_.n(), in_);
  MatrixMap dw(weight_.grad.data(), out_, in_);
  dw.noalias() += dy.transpose() * xm;
  Eigen::Map<Eigen::RowVectorXf> db(bias_.grad.data(), out_);
  db += dy.colwise().sum();
  ConstMatrixMap w(weight_.value.data(), out_, in_);
  Tensor dx(input_.shape());
  MatrixMap dxm(dx.data(), input_.n(), in_);
  dxm.noalias() = dy * w;
  return dx;
}

nlohmann::json Linear::describe() const {
  return {{"type", "linear"}, {"in", in_}, {"out", out_}};
}

// ------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(int channels, float momentum, float eps)
    : channels_(channels), momentum_(momentum), eps_(eps),
      gamma_(make_param("gamma", {channels, 1, 1, 1}, 1.0f)),
      beta_(make_param("beta", {channels, 1, 1, 1})),
      running_mean_(channels, 1, 1, 1, 0.0f),
      running_var_(channels, 1, 1, 1, 1.0f) {}

Tensor::Shape BatchNorm::output_shape(const Tensor::Shape& in) const {
  check_channels(in, channels_, "batchnorm");
  return in;
}

Tensor BatchNorm::infer(const Tensor& x) const {
  output_shape(x.shape());
  Tensor out(x.shape());
  const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
  for (int c = 0; c < channels_; ++c) {
    const float scale = gamma_.value[c] / std::sqrt(running_var_[c] + eps_);
    const float shift = beta_.value[c] - running_mean_[c] * scale;
    for (int i = 0; i < x.n(); ++i) {
      const float* src = x.item(i).data() + c * plane;
      float* dst = out.item(i).data() + c * plane;
      for (std::size_t j = 0; j < plane; ++j) dst[j] = src[j] * scale + shift;
    }
  }
  return out;
}

Tensor BatchNorm::forward(const Tensor& x) {
  output_shape(x.shape());
  const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
  const double count = static_cast<double>(plane) * x.n();
  normalized_ = Tensor(x.shape());
  inv_std_.assign(channels_, 0.0f);
  Tensor out(x.shape());
  for (int c = 0; c < channels_; ++c) {
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < x.n(); ++i) {
      const float* src = x.item(i).data() + c * plane;
      for (std::size_t j = 0; j < plane; ++j) sum += src[j];
    }
    const double mean = sum / count;
    for (int i = 0; i < x.n(); ++i) {
      const float* src = x.item(i).data() + c * plane;
      for (std::size_t j = 0; j < plane; ++j) sq += (src[j] - mean) * (src[j] - mean);
    }
    const double var = sq / count;
    const float inv = static_cast<float>(1.0 / std::sqrt(var + eps_));
    inv_std_[c] = inv;
    for (int i = 0; i < x.n(); ++i) {
      const float* src = x.item(i).data() + c * plane;
      float* xh = normalized_.item(i).data() + c * plane;
      float* dst = out.item(i).data() + c * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        xh[j] = static_cast<float>((src[j] - mean) * inv);
        dst[j] = gamma_.value[c] * xh[j] + beta_.value[c];
      }
    }
    const double unbiased = count > 1 ? var * count / (count - 1) : var;
    running_mean_[c] = (1 - momentum_) * running_mean_[c] + momentum_ * static_cast<float>(mean);
    running_var_[c] = (1 - momentum_) * running_var_[c] + momentum_ * static_cast<float>(unbiased);
  }
  return out;
}

Tensor BatchNorm::backward(const Tensor& grad_out) {
  const auto& shape = normalized_.shape();
  const std::size_t plane = static_cast<std::size_t>(shape[2]) * shape[3];
  const double count = static_cast<double>(plane) * shape[0];
  Tensor dx(shape);
  for (int c = 0; c < channels_; ++c) {
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (int i = 0; i < shape[0]; ++i) {
      const float* dy = grad_out.item(i).data() + c * plane;
      const float* xh = normalized_.item(i).data() + c * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        sum_dy += dy[j];
        sum_dy_xh += dy[j] * xh[j];
      }
    }
    gamma_.grad[c] += static_cast<float>(sum_dy_xh);
    beta_.grad[c] += static_cast<float>(sum_dy);
    const double g = gamma_.value[c];
    const double k = g * inv_std_[c] / count;
    for (int i = 0; i < shape[0]; ++i) {
      const float* dy = grad_out.item(i).data() + c * plane;
      const float* xh = normalized_.item(i).data() + c * plane;
      float* out = dx.item(i).data() + c * plane;
      for (std::size_t j = 0; j < plane; ++j)
        out[j] = static_cast<float>(k * (count * dy[j] - sum_dy - xh[j] * sum_dy_xh));
    }
  }
  return dx;
}

nlohmann::json BatchNorm::describe() const {
  return {{"type", "batchnorm"}, {"channels", channels_}};
}

// ----------------------------------------------------------- activations

Tensor LeakyRelu::infer(const Tensor& x) const {
  Tensor out = x;
  for (auto& v : out.values()) v = v > 0 ? v : slope_ * v;
  return out;
}

Tensor LeakyRelu::forward(const Tensor& x) {
  input_ = x;
  return infer(x);
}

Tensor LeakyRelu::backward(const Tensor& grad_out) {
  Tensor dx = grad_out;
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (input_[i] <= 0) dx[i] *= slope_;
  return dx;
}

nlohmann::json LeakyRelu::describe() const { return {{"type", "leaky_relu"}, {"slope", slope_}}; }

Tensor Relu::infer(const Tensor& x) const {
  Tensor out = x;
  for (auto& v : out.values()) v = std::max(v, 0.0f);
  return out;
}

Tensor Relu::forward(const Tensor& x) {
  input_ = x;
  return infer(x);
}

Tensor Relu::backward(const Tensor& grad_out) {
  Tensor dx = grad_out;
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (input_[i] <= 0) dx[i] = 0;
  return dx;
}

nlohmann::json Relu::describe() const { return {{"type", "relu"}}; }

Tensor Tanh::infer(const Tensor& x) const {
  Tensor out = x;
  for (auto& v : out.values()) v = std::tanh(v);
  return out;
}

Tensor Tanh::forward(const Tensor& x) {
  output_ = infer(x);
  return output_;
}

Tensor Tanh::backward(const Tensor& grad_out) {
  Tensor dx = grad_out;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= 1.0f - output_[i] * output_[i];
  return dx;
}

nlohmann::json Tanh::describe() const { return {{"type", "tanh"}}; }

// ------------------------------------------------------- shape utilities

Tensor::Shape Reshape::output_shape(const Tensor::Shape& in) const {
  require(in[1] * in[2] * in[3] == c_ * h_ * w_, ErrorCode::kShape,
          "reshape: cannot view " + shape_string(in) + " as " + std::to_string(c_) + "x" +
              std::to_string(h_) + "x" + std::to_string(w_));
  return {in[0], c_, h_, w_};
}

Tensor Reshape::infer(const Tensor& x) const { return x.reshaped(output_shape(x.shape())); }

Tensor Reshape::forward(const Tensor& x) {
  in_shape_ = x.shape();
  return infer(x);
}

Tensor Reshape::backward(const Tensor& grad_out) { return grad_out.reshaped(in_shape_); }

nlohmann::json Reshape::describe() const {
  return {{"type", "reshape"}, {"c", c_}, {"h", h_}, {"w", w_}};
}

Tensor::Shape GlobalAvgPool::output_shape(const Tensor::Shape& in) const {
  return {in[0], in[1], 1, 1};
}

Tensor GlobalAvgPool::infer(const Tensor& x) const {
  Tensor out(output_shape(x.shape()));
  const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
  for (int i = 0; i < x.n(); ++i)
    for (int c = 0; c < x.c(); ++c) {
      const float* src = x.item(i).data() + c * plane;
      double s = 0.0;
      for (std::size_t j = 0; j < plane; ++j) s += src[j];
      out.at(i, c, 0, 0) = static_cast<float>(s / plane);
    }
  return out;
}

Tensor GlobalAvgPool::forward(const Tensor& x) {
  in_shape_ = x.shape();
  return infer(x);
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
  Tensor dx(in_shape_);
  const std::size_t plane = static_cast<std::size_t>(in_shape_[2]) * in_shape_[3];
  for (int i = 0; i < in_shape_[0]; ++i)
    for (int c = 0; c < in_shape_[1]; ++c) {
      const float g = grad_out.at(i, c, 0, 0) / static_cast<float>(plane);
      float* dst = dx.item(i).data() + c * plane;
      std::fill_n(dst, plane, g);
    }
  return dx;
}

nlohmann::json GlobalAvgPool::describe() const { return {{"type", "global_avg_pool"}}; }

Tensor L2Normalize::infer(const Tensor& x) const {
  Tensor out = x;
  for (int i = 0; i < x.n(); ++i) {
    auto v = out.item(i);
    double sq = 0.0;
    for (float f : v) sq += static_cast<double>(f) * f;
    const double norm = std::max(std::sqrt(sq), 1e-12);
    for (auto& f : v) f = static_cast<float>(f / norm);
  }
  return out;
}

Tensor L2Normalize::forward(const Tensor& x) {
  norms_.assign(x.n(), 0.0f);
  for (int i = 0; i < x.n(); ++i) {
    double sq = 0.0;
    for (float f : x.item(i)) sq += static_cast<double>(f) * f;
    norms_[i] = static_cast<float>(std::max(std::sqrt(sq), 1e-12));
  }
  output_ = infer(x);
  return output_;
}

Tensor L2Normalize::backward(const Tensor& grad_out) {
  Tensor dx(grad_out.shape());
  for (int i = 0; i < grad_out.n(); ++i) {
    auto y = output_.item(i);
    auto g = grad_out.item(i);
    auto d = dx.item(i);
    double dot = 0.0;
    for (std::size_t j = 0; j < y.size(); ++j) dot += static_cast<double>(y[j]) * g[j];
    for (std::size_t j = 0; j < y.size(); ++j)
      d[j] = static_cast<float>((g[j] - y[j] * dot) / norms_[i]);
  }
  return dx;
}

nlohmann::json L2Normalize::describe() const { return {{"type", "l2_normalize"}}; }

// --------------------------------------------------------------- factory

std::unique_ptr<Layer> make_layer(const nlohmann::json& spec) {
  try {
    const auto type = spec.at("type").get<std::string>();
    if (type == "conv2d")
      return std::make_unique<Conv2d>(spec.at("in"), spec.at("out"), spec.at("kernel"),
                                      spec.at("stride"), spec.at("pad"));
    if (type == "conv_transpose2d")
      return std::make_unique<ConvTranspose2d>(spec.at("in"), spec.at("out"), spec.at("kernel"),
                                               spec.at("stride"), spec.at("pad"),
                                               spec.at("output_pad"));
    if (type == "linear") return std::make_unique<Linear>(spec.at("in"), spec.at("out"));
    if (type == "batchnorm") return std::make_unique<BatchNorm>(spec.at("channels").get<int>());
    if (type == "leaky_relu") return std::make_unique<LeakyRelu>(spec.at("slope").get<float>());
    if (type == "relu") return std::make_unique<Relu>();
    if (type == "tanh") return std::make_unique<Tanh>();
    if (type == "reshape") return std::make_unique<Reshape>(spec.at("c"), spec.at("h"), spec.at("w"));
    if (type == "global_avg_pool") return std::make_unique<GlobalAvgPool>();
    if (type == "l2_normalize") return std::make_unique<L2Normalize>();
    fail(ErrorCode::kFormat, "unknown layer type '" + type + "'");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("malformed layer spec: ") + e.what());
  }
}

// ------------------------------------------------------------ Sequential

Sequential::Sequential(const nlohmann::json& layer_list) {
  require(layer_list.is_array(), ErrorCode::kFormat, "layer list must be an array");
  for (const auto& spec : layer_list) add(make_layer(spec));
}

std::vector<Tensor::Shape> Sequential::trace_shapes(const Tensor::Shape& in) const {
  std::vector<Tensor::Shape> shapes;
  Tensor::Shape s = in;
  for (const auto& layer : layers_) {
    s = layer->output_shape(s);
    shapes.push_back(s);
  }
  return shapes;
}

Tensor Sequential::infer(const Tensor& x) const {
  Tensor y = x;
  for (const auto& layer : layers_) y = layer->infer(y);
  return y;
}

Tensor Sequential::forward(const Tensor& x) {
  Tensor y = x;
  for (auto& layer : layers_) y = layer->forward(y);
  return y;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

std::vector<Parameter*> Sequential::parameters() {
  std::vector<Parameter*> out;
  for (auto& layer : layers_)
    for (auto* p : layer->parameters()) out.push_back(p);
  return out;
}

std::vector<NamedTensor> Sequential::state() {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string prefix = std::to_string(i) + ".";
    for (auto* p : layers_[i]->parameters()) out.push_back({prefix + p->name, &p->value});
    for (auto& b : layers_[i]->buffers()) out.push_back({prefix + b.name, b.tensor});
  }
  return out;
}

std::vector<ConstNamedTensor> Sequential::state() const {
  std::vector<ConstNamedTensor> out;
  for (const auto& t : const_cast<Sequential*>(this)->state()) out.push_back({t.name, t.tensor});
  return out;
}

void Sequential::zero_grad() {
  for (auto* p : parameters()) p->grad.fill(0.0f);
}

nlohmann::json Sequential::describe() const {
  auto list = nlohmann::json::array();
  for (const auto& layer : layers_) list.push_back(layer->describe());
  return list;
}

void Sequential::init_normal(Rng& rng, float stddev) {
  auto dist = [&](Rng& r) { return static_cast<float>(r.normal(0.0, stddev)); };
  for (auto& layer : layers_) {
    for (auto* p : layer->parameters()) {
      if (p->name == "weight") {
        for (auto& v : p->value.values()) v = dist(rng);
      } else if (p->name == "gamma") {
        // scale around one so normalization starts near identity
        for (auto& v : p->value.values()) v = 1.0f + dist(rng);
      } else {
        p->value.fill(0.0f);
      }
    }
  }
}

void Sequential::init_he(Rng& rng) {
  for (auto& layer : layers_) {
    for (auto* p : layer->parameters()) {
      if (p->name == "weight") {
        // fan-in is the second dimension for conv/linear; first for transposed conv
        const auto desc = layer->describe();
        const bool transposed = desc.at("type") == "conv_transpose2d";
        const int fan_in = transposed ? p->value.n() : p->value.c();
        const double stddev = std::sqrt(2.0 / fan_in);
        for (auto& v : p->value.values()) v = static_cast<float>(rng.normal(0.0, stddev));
      } else if (p->name == "gamma") {
        p->value.fill(1.0f);
      } else {
        p->value.fill(0.0f);
      }
    }
  }
}

// ------------------------------------------------------------------ Adam

Adam::Adam(std::vector<Parameter*> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  require(config_.learning_rate > 0, ErrorCode::kArgument, "learning rate must be positive");
  for (auto* p : params_) {
    m_.emplace_back(p->value.size(), 0.0f);
    v_.emplace_back(p->value.size(), 0.0f);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  const float step = static_cast<float>(config_.learning_rate * std::sqrt(bc2) / bc1);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& value = params_[k]->value;
    const auto& grad = params_[k]->grad;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const float g = grad[i];
      m[i] = config_.beta1 * m[i] + (1 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1 - config_.beta2) * g * g;
      value[i] -= step * m[i] / (std::sqrt(v[i]) + config_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto* p : params_) p->grad.fill(0.0f);
}

}  // namespace streetshop::nn
