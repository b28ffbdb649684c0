#include <algorithm>
#include <cmath>

#include <doctest.h>

#include "support.hpp"
#include "streetshop/error.hpp"
#include "streetshop/nn.hpp"

using namespace streetshop;
using nlohmann::json;

namespace {

// Float layers are checked against float finite differences, so the
// tolerance is far looser than the double-precision loss checks.
constexpr double kLayerTolerance = 2e-2;
constexpr double kLayerFloor = 1e-2;

Tensor random_tensor(Rng& rng, Tensor::Shape shape, double away_from_zero = 0.0) {
  Tensor t(shape);
  for (auto& v : t.values()) {
    double x = rng.uniform(-1.0, 1.0);
    if (std::abs(x) < away_from_zero) x = x < 0 ? x - away_from_zero : x + away_from_zero;
    v = static_cast<float>(x);
  }
  return t;
}

double weighted_sum(const Tensor& out, const Tensor& r) {
  double s = 0;
  for (std::size_t i = 0; i < out.size(); ++i) s += static_cast<double>(out[i]) * r[i];
  return s;
}

double rel(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), kLayerFloor}); }

// Worst relative error over sampled input and parameter coordinates of
// L = sum(forward(x) * r).
double layer_gradient_error(nn::Layer& layer, Tensor x, Rng& rng, float h) {
  const Tensor probe = layer.forward(x);
  const Tensor r = random_tensor(rng, probe.shape());
  for (auto* p : layer.parameters()) p->grad.fill(0.0f);
  layer.forward(x);
  const Tensor dx = layer.backward(r);

  double worst = 0;
  auto check = [&](float& slot, double analytic) {
    const float saved = slot;
    slot = saved + h;
    const double up = weighted_sum(layer.forward(x), r);
    slot = saved - h;
    const double down = weighted_sum(layer.forward(x), r);
    slot = saved;
    worst = std::max(worst, rel(analytic, (up - down) / (2.0 * h)));
  };
  for (int s = 0; s < 24; ++s) {
    const auto i = rng.below(x.size());
    check(x[i], dx[i]);
  }
  for (auto* p : layer.parameters())
    for (int s = 0; s < 12; ++s) {
      const auto i = rng.below(p->value.size());
      check(p->value[i], p->grad[i]);
    }
  return worst;
}

void init(nn::Layer& layer, Rng& rng) {
  for (auto* p : layer.parameters())
    for (auto& v : p->value.values()) v = static_cast<float>(rng.normal(0.0, 0.5));
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor a(2, 3, 4, 5, 1.5f);
  CHECK(a.size() == 120);
  CHECK(a.item_size() == 60);
  CHECK(a.at(1, 2, 3, 4) == 1.5f);
  a.at(1, 0, 0, 0) = 7.0f;
  CHECK(a.item(1)[0] == 7.0f);
  CHECK(a.slice(1, 2).at(0, 0, 0, 0) == 7.0f);
  CHECK(a.reshaped({2, 60, 1, 1}).shape() == Tensor::Shape{2, 60, 1, 1});
  CHECK_THROWS_AS(a.reshaped({2, 61, 1, 1}), Error);

  const Tensor b(1, 3, 4, 5, 2.0f);
  const std::vector<Tensor> items{a.slice(0, 1), b};
  const Tensor s = Tensor::stack(items);
  CHECK(s.shape() == Tensor::Shape{2, 3, 4, 5});
  CHECK(s.at(1, 2, 3, 4) == 2.0f);

  const Tensor c = Tensor::concat_channels(b, Tensor(1, 2, 4, 5, -1.0f));
  CHECK(c.shape() == Tensor::Shape{1, 5, 4, 5});
  CHECK(c.at(0, 2, 0, 0) == 2.0f);
  CHECK(c.at(0, 3, 0, 0) == -1.0f);
  CHECK_THROWS_AS(Tensor::concat_channels(b, Tensor(2, 2, 4, 5)), Error);
  CHECK(shape_string({1, 2, 3, 4}) == "[1x2x3x4]");
}

TEST_CASE("convolution matches a direct loop") {
  Rng rng(1);
  nn::Conv2d conv(3, 4, 5, 2, 2);
  init(conv, rng);
  const Tensor x = random_tensor(rng, {2, 3, 9, 9});
  const Tensor y = conv.infer(x);
  REQUIRE(y.shape() == Tensor::Shape{2, 4, 5, 5});
  const auto& w = conv.parameters()[0]->value;  // out x (in*k*k)
  const auto& b = conv.parameters()[1]->value;
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 4; ++o)
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) {
          double s = b[o];
          for (int c = 0; c < 3; ++c)
            for (int ki = 0; ki < 5; ++ki)
              for (int kj = 0; kj < 5; ++kj) {
                const int yi = i * 2 - 2 + ki, xj = j * 2 - 2 + kj;
                if (yi < 0 || yi >= 9 || xj < 0 || xj >= 9) continue;
                s += static_cast<double>(w[static_cast<std::size_t>(o) * 75 + c * 25 + ki * 5 + kj]) *
                     x.at(n, c, yi, xj);
              }
          CHECK(y.at(n, o, i, j) == doctest::Approx(s).epsilon(1e-4));
        }
}

TEST_CASE("transposed convolution doubles the spatial size") {
  nn::ConvTranspose2d up(4, 2, 5, 2, 2, 1);
  CHECK(up.output_shape({3, 4, 8, 8}) == Tensor::Shape{3, 2, 16, 16});
  CHECK_THROWS_AS(up.output_shape({3, 5, 8, 8}), Error);
}

TEST_CASE("layer gradients match finite differences") {
  Rng rng(2);
  SUBCASE("conv2d") {
    nn::Conv2d layer(2, 3, 5, 2, 2);
    init(layer, rng);
    CHECK(layer_gradient_error(layer, random_tensor(rng, {2, 2, 6, 6}), rng, 1e-2f) < kLayerTolerance);
  }
  SUBCASE("conv_transpose2d") {
    nn::ConvTranspose2d layer(3, 2, 5, 2, 2, 1);
    init(layer, rng);
    CHECK(layer_gradient_error(layer, random_tensor(rng, {2, 3, 3, 3}), rng, 1e-2f) < kLayerTolerance);
  }
  SUBCASE("linear") {
    nn::Linear layer(6, 4);
    init(layer, rng);
    CHECK(layer_gradient_error(layer, random_tensor(rng, {3, 6, 1, 1}), rng, 1e-2f) < kLayerTolerance);
  }
  SUBCASE("batchnorm") {
    nn::BatchNorm layer(3);
    init(layer, rng);
    CHECK(layer_gradient_error(layer, random_tensor(rng, {4, 3, 2, 2}), rng, 1e-2f) < kLayerTolerance);
  }
  SUBCASE("leaky_relu") {
    nn::LeakyRelu layer(0.2f);
    CHECK(layer_gradient_error(layer, random_tensor(rng, {2, 3, 2, 2}, 0.05), rng, 1e-3f) <
          kLayerTolerance);
  }
  SUBCASE("relu") {
    nn::Relu layer;
    CHECK(layer_gradient_error(layer, random_tensor(rng, {2, 3, 2, 2}, 0.05), rng, 1e-3f) <
          kLayerTolerance);
  }
  SUBCASE("tanh") {
    nn::Tanh layer;
    CHECK(layer_gradient_error(layer, random_tensor(rng, {2, 3, 2, 2}), rng, 1e-2f) < kLayerTolerance);
  }
  SUBCASE("global_avg_pool") {
    nn::GlobalAvgPool layer;
    CHECK(layer_gradient_error(layer, random_tensor(rng, {2, 3, 4, 4}), rng, 1e-2f) < kLayerTolerance);
  }
  SUBCASE("l2_normalize") {
    nn::L2Normalize layer;
    CHECK(layer_gradient_error(layer, random_tensor(rng, {3, 8, 1, 1}), rng, 1e-2f) < kLayerTolerance);
  }
  SUBCASE("reshape") {
    nn::Reshape layer(2, 2, 2);
    CHECK(layer_gradient_error(layer, random_tensor(rng, {2, 8, 1, 1}), rng, 1e-2f) < kLayerTolerance);
  }
}

TEST_CASE("l2 normalize yields unit rows") {
  Rng rng(3);
  nn::L2Normalize layer;
  const Tensor y = layer.infer(random_tensor(rng, {50, 128, 1, 1}));
  for (int i = 0; i < 50; ++i) {
    double norm = 0;
    for (float v : y.item(i)) norm += static_cast<double>(v) * v;
    CHECK(std::abs(std::sqrt(norm) - 1.0) <= 1e-5);
  }
}

TEST_CASE("batchnorm uses batch statistics in training and running statistics at inference") {
  nn::BatchNorm bn(1, 1.0f);
  Tensor x(4, 1, 1, 1);
  for (int i = 0; i < 4; ++i) x[i] = static_cast<float>(i);
  const Tensor y = bn.forward(x);
  double mean = 0;
  for (float v : y.values()) mean += v;
  CHECK(mean / 4 == doctest::Approx(0.0).epsilon(1e-6));
  // momentum 1 copies the batch statistics into the running buffers; the
  // running variance is the unbiased estimate
  const Tensor z = bn.infer(x);
  for (int i = 0; i < 4; ++i) CHECK(z[i] == doctest::Approx(y[i] * std::sqrt(3.0 / 4.0)).epsilon(1e-3));
}

TEST_CASE("sequential round-trips through its description") {
  const json layers = json::array({{{"type", "conv2d"}, {"in", 3}, {"out", 4}, {"kernel", 3}, {"stride", 2}, {"pad", 1}},
                                   {{"type", "batchnorm"}, {"channels", 4}},
                                   {{"type", "leaky_relu"}, {"slope", 0.2}},
                                   {{"type", "global_avg_pool"}},
                                   {{"type", "linear"}, {"in", 4}, {"out", 2}},
                                   {{"type", "l2_normalize"}}});
  nn::Sequential net(layers);
  const nn::Sequential again(net.describe());
  CHECK(again.describe() == net.describe());
  const auto shapes = net.trace_shapes({5, 3, 8, 8});
  CHECK(shapes.front() == Tensor::Shape{5, 4, 4, 4});
  CHECK(shapes.back() == Tensor::Shape{5, 2, 1, 1});
  CHECK_THROWS_AS(net.trace_shapes({5, 2, 8, 8}), Error);

  std::vector<std::string> names;
  for (const auto& s : net.state()) names.push_back(s.name);
  CHECK(std::find(names.begin(), names.end(), "1.running_mean") != names.end());
  CHECK(std::find(names.begin(), names.end(), "4.weight") != names.end());

  CHECK_THROWS_AS(nn::Sequential(json::array({{{"type", "bogus"}}})), Error);
}

TEST_CASE("adam descends a quadratic") {
  nn::Parameter p{"weight", Tensor(1, 1, 1, 2), Tensor(1, 1, 1, 2)};
  p.value[0] = 3.0f;
  p.value[1] = -2.0f;
  nn::Adam opt({&p}, {0.1f, 0.9f, 0.999f, 1e-8f});
  opt.zero_grad();
  p.grad[0] = 2 * p.value[0];
  p.grad[1] = 2 * p.value[1];
  opt.step();
  // the first bias-corrected step moves each coordinate by the learning rate
  CHECK(p.value[0] == doctest::Approx(2.9f).epsilon(1e-5));
  CHECK(p.value[1] == doctest::Approx(-1.9f).epsilon(1e-5));
  for (int i = 0; i < 500; ++i) {
    opt.zero_grad();
    p.grad[0] = 2 * p.value[0];
    p.grad[1] = 2 * p.value[1];
    opt.step();
  }
  CHECK(std::abs(p.value[0]) < 0.05f);
  CHECK(std::abs(p.value[1]) < 0.05f);
  CHECK(opt.steps() == 501);
}

TEST_CASE("inference is reentrant") {
  Rng rng(4);
  nn::Sequential net(json::array({{{"type", "conv2d"}, {"in", 3}, {"out", 4}, {"kernel", 3}, {"stride", 2}, {"pad", 1}},
                                  {{"type", "batchnorm"}, {"channels", 4}},
                                  {{"type", "relu"}}}));
  net.init_he(rng);
  const Tensor x = random_tensor(rng, {2, 3, 8, 8});
  const Tensor a = net.infer(x);
  net.forward(random_tensor(rng, {2, 3, 8, 8}));
  const Tensor b = net.infer(x);
  // a training forward updates running statistics, so only equality of
  // repeated inference without training in between is promised
  CHECK(net.infer(x) == b);
  CHECK(a.shape() == b.shape());
}
