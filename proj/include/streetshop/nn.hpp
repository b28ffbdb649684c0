#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "streetshop/random.hpp"
#include "streetshop/tensor.hpp"

namespace streetshop::nn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

struct ConstNamedTensor {
  std::string name;
  const Tensor* tensor;
};

/// A differentiable layer.
///
/// `infer` is const and keeps no state, so it is safe to call concurrently.
/// `forward` is the training path: it uses batch statistics where relevant
/// and caches whatever `backward` needs. `backward` accumulates parameter
/// gradients and returns the gradient with respect to the last `forward` input.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Tensor::Shape output_shape(const Tensor::Shape& in) const = 0;
  virtual Tensor infer(const Tensor& x) const = 0;
  virtual Tensor forward(const Tensor& x) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;

  virtual std::vector<Parameter*> parameters() { return {}; }
  /// Non-trainable state that still belongs in a checkpoint.
  virtual std::vector<NamedTensor> buffers() { return {}; }
  /// Architecture description; `make_layer` inverts it.
  virtual nlohmann::json describe() const = 0;
};

std::unique_ptr<Layer> make_layer(const nlohmann::json& spec);

class Conv2d : public Layer {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad);

  Tensor::Shape output_shape(const Tensor::Shape& in) const override;
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
  nlohmann::json describe() const override;

 private:
  Tensor run(const Tensor& x, std::vector<float>* cols_out) const;

  int in_, out_, kernel_, stride_, pad_;
  Parameter weight_;  // out x (in * k * k)
  Parameter bias_;
  std::vector<float> cols_;
  Tensor::Shape in_shape_{};
};

/// Transposed convolution; `output_pad` extra rows/cols make stride-2 layers
/// exactly double the spatial size.
class ConvTranspose2d : public Layer {
 public:
  ConvTranspose2d(int in_channels, int out_channels, int kernel, int stride, int pad,
                  int output_pad);

  Tensor::Shape output_shape(const Tensor::Shape& in) const override;
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
  nlohmann::json describe() const override;

 private:
  int in_, out_, kernel_, stride_, pad_, output_pad_;
  Parameter weight_;  // in x (out * k * k)
  Parameter bias_;
  Tensor input_;
};

class Linear : public Layer {
 public:
  Linear(int in_features, int out_features);

  Tensor::Shape output_shape(const Tensor::Shape& in) const override;
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
  nlohmann::json describe() const override;

 private:
  int in_, out_;
  Parameter weight_;  // out x in
  Parameter bias_;
  Tensor input_;
};

/// Per-channel batch normalization over N, H and W.
class BatchNorm : public Layer {
 public:
  explicit BatchNorm(int channels, float momentum = 0.1f, float eps = 1e-5f);

  Tensor::Shape output_shape(const Tensor::Shape& in) const override;
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Parameter*> parameters() override { return {&gamma_, &beta_}; }
  std::vector<NamedTensor> buffers() override {
    return {{"running_mean", &running_mean_}, {"running_var", &running_var_}};
  }
  nlohmann::json describe() const override;

 private:
  int channels_;
  float momentum_, eps_;
  Parameter gamma_, beta_;
  Tensor running_mean_, running_var_;
  Tensor normalized_;
  std::vector<float> inv_std_;
};

class LeakyRelu : public Layer {
 public:
  explicit LeakyRelu(float slope = 0.2f) : slope_(slope) {}
  Tensor::Shape output_shape(const Tensor::Shape& in) const override { return in; }
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  nlohmann::json describe() const override;

 private:
  float slope_;
  Tensor input_;
};

class Relu : public Layer {
 public:
  Tensor::Shape output_shape(const Tensor::Shape& in) const override { return in; }
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  nlohmann::json describe() const override;

 private:
  Tensor input_;
};

class Tanh : public Layer {
 public:
  Tensor::Shape output_shape(const Tensor::Shape& in) const override { return in; }
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  nlohmann::json describe() const override;

 private:
  Tensor output_;
};

/// Reinterprets each batch item as (c, h, w).
class Reshape : public Layer {
 public:
  Reshape(int c, int h, int w) : c_(c), h_(h), w_(w) {}
  Tensor::Shape output_shape(const Tensor::Shape& in) const override;
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  nlohmann::json describe() const override;

 private:
  int c_, h_, w_;
  Tensor::Shape in_shape_{};
};

class GlobalAvgPool : public Layer {
 public:
  Tensor::Shape output_shape(const Tensor::Shape& in) const override;
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  nlohmann::json describe() const override;

 private:
  Tensor::Shape in_shape_{};
};

/// Scales every batch item to unit L2 norm.
class L2Normalize : public Layer {
 public:
  Tensor::Shape output_shape(const Tensor::Shape& in) const override { return in; }
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  nlohmann::json describe() const override;

 private:
  Tensor output_;
  std::vector<float> norms_;
};

class Sequential {
 public:
  Sequential() = default;
  explicit Sequential(const nlohmann::json& layer_list);

  void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }
  std::size_t size() const noexcept { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }

  /// Propagates a shape through every layer, throwing on the first mismatch.
  /// Returns the shape after each layer.
  std::vector<Tensor::Shape> trace_shapes(const Tensor::Shape& in) const;

  Tensor infer(const Tensor& x) const;
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out);

  std::vector<Parameter*> parameters();
  /// Parameters and buffers under stable names ("3.weight", "4.running_mean").
  std::vector<NamedTensor> state();
  std::vector<ConstNamedTensor> state() const;
  void zero_grad();

  nlohmann::json describe() const;

  /// Zero-mean Gaussian weights; biases zero and batch-norm scales at one.
  void init_normal(Rng& rng, float stddev);
  /// Fan-in scaled Gaussian weights for ReLU stacks.
  void init_he(Rng& rng);

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

struct AdamConfig {
  float learning_rate = 2e-4f;
  float beta1 = 0.5f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig config);

  void step();
  void zero_grad();
  std::int64_t steps() const noexcept { return t_; }

 private:
  std::vector<Parameter*> params_;
  AdamConfig config_;
  std::vector<std::vector<float>> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace streetshop::nn
