#include <algorithm>
#include <cmath>
#include <sstream>

#include <doctest.h>

#include "support.hpp"
#include "streetshop/binary_io.hpp"
#include "streetshop/error.hpp"
#include "streetshop/gan.hpp"
#include "streetshop/image.hpp"
#include "streetshop/losses.hpp"

using namespace streetshop;
using testing::world;

namespace {

gan::GanTrainConfig tiny_config(std::uint64_t seed = 3) {
  gan::GanTrainConfig c;
  c.arch.width = 4;
  c.steps = 4;
  c.batch_size = 4;
  c.seed = seed;
  return c;
}

const gan::PairedTensors& paired() {
  static const auto data = gan::load_paired(world().paired);
  return data;
}

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return ErrorCode::kArgument;
}

Tensor::Shape shape(int c, int hw) { return {1, c, hw, hw}; }

}  // namespace

TEST_CASE("the full-width converter has the documented shape chain") {
  const gan::GanModel model;  // width 128
  const auto chain = model.shape_chain();
  const std::vector<Tensor::Shape> milestones = {shape(128, 32), shape(256, 16), shape(512, 8), shape(1024, 4),
                                                 shape(64, 1),   shape(1024, 4), shape(512, 8), shape(256, 16),
                                                 shape(128, 32), shape(3, 64)};
  std::size_t next = 0;
  for (const auto& s : chain)
    if (next < milestones.size() && s == milestones[next]) ++next;
  CHECK(next == milestones.size());
  CHECK(chain.back() == shape(3, 64));
  CHECK(model.describe().at("domain").at(0).at("in") == 6);
  CHECK(model.describe().at("real_fake").at(0).at("in") == 3);
}

TEST_CASE("a layer list that breaks the chain is rejected at construction") {
  gan::GanArch arch;
  arch.width = 4;
  auto broken = gan::trunk_layers(arch, 3, arch.latent_dim, true);
  broken.erase(broken.begin());  // drop the first stride-2 convolution
  CHECK_THROWS_AS(nn::Sequential(broken).trace_shapes({1, 3, 64, 64}), Error);
  CHECK(code_of([] {
          gan::GanArch bad;
          bad.width = 0;
          gan::GanModel m(bad);
        }) == ErrorCode::kArgument);
}

TEST_CASE("encode and decode contracts") {
  gan::GanArch arch;
  arch.width = 4;
  gan::GanModel model(arch);
  Rng rng(1);
  model.init(rng);

  const Tensor x = testing::random_images(rng, 3);
  const Tensor z = model.encode(x);
  CHECK(z.shape() == Tensor::Shape{3, 64, 1, 1});
  CHECK(std::all_of(z.values().begin(), z.values().end(), [](float v) { return std::isfinite(v); }));

  const std::vector<Tensor> twins{x.slice(0, 1), x.slice(0, 1)};
  const Tensor zz = model.encode(Tensor::stack(twins));
  CHECK(std::equal(zz.item(0).begin(), zz.item(0).end(), zz.item(1).begin()));

  const Tensor zero_img = model.decode(Tensor(1, 64, 1, 1));
  CHECK(zero_img.shape() == Tensor::Shape{1, 3, 64, 64});
  Tensor wild(4, 64, 1, 1);
  for (auto& v : wild.values()) v = static_cast<float>(rng.normal(0.0, 50.0));
  for (const Tensor& img : {zero_img, model.decode(wild), model.generate(x)})
    for (float v : img.values()) {
      CHECK(v >= -1.0f);
      CHECK(v <= 1.0f);
    }

  CHECK(code_of([&] { model.encode(Tensor(1, 3, 32, 32)); }) == ErrorCode::kShape);
  CHECK(code_of([&] { model.encode(Tensor(1, 1, 64, 64)); }) == ErrorCode::kShape);
  CHECK(code_of([&] { model.decode(Tensor(1, 63, 1, 1)); }) == ErrorCode::kShape);
}

TEST_CASE("discriminator outputs stay strictly inside (0,1)") {
  gan::GanArch arch;
  arch.width = 4;
  gan::GanModel model(arch);
  Rng rng(2);
  model.init(rng);
  const Tensor a = testing::random_images(rng, 5), b = testing::random_images(rng, 5);
  const auto pr = model.discriminate_real_fake(a);
  const auto pa = model.discriminate_domain(a, b);
  CHECK(pr.size() == 5);
  CHECK(pa.size() == 5);
  for (float p : pr) CHECK((p > 0.0f && p < 1.0f));
  for (float p : pa) CHECK((p > 0.0f && p < 1.0f));
  CHECK(code_of([&] { model.discriminate_domain(a, b.slice(0, 2)); }) == ErrorCode::kShape);

  // drive the final logit far past the clamp in both directions
  for (float bias : {1e4f, -1e4f}) {
    auto state = model.real_fake().state();
    auto& last_bias = *std::find_if(state.rbegin(), state.rend(), [](const auto& t) {
                         return t.name.ends_with(".bias");
                       })->tensor;
    last_bias.fill(bias);
    for (float p : model.discriminate_real_fake(a)) {
      CHECK(p > 0.0f);
      CHECK(p < 1.0f);
      CHECK(std::isfinite(losses::loss_real_fake(p, 0)));
      CHECK(std::isfinite(losses::loss_real_fake(p, 1)));
    }
  }
}

TEST_CASE("target classes are drawn uniformly") {
  Rng rng(30000);
  std::array<int, 3> counts{};
  const int draws = 30000;
  for (int i = 0; i < draws; ++i)
    ++counts[static_cast<int>(gan::sample_target_class(rng, {1.0 / 3, 1.0 / 3, 1.0 / 3}))];
  double chi2 = 0;
  for (int c : counts) chi2 += (c - draws / 3.0) * (c - draws / 3.0) / (draws / 3.0);
  // chi-square critical value, 2 degrees of freedom, 1% significance
  CHECK(chi2 < 9.2103);
  for (int c : counts) CHECK(std::abs(c - 10000) <= 3 * std::sqrt(30000 * (1.0 / 3) * (2.0 / 3)));
}

TEST_CASE("training targets follow the sampled class") {
  gan::GanArch arch;
  arch.width = 4;
  gan::GanModel model(arch);
  Rng init(3);
  model.init(init);
  const auto& data = paired();
  Rng rng(4);
  int seen[3] = {0, 0, 0};
  for (int i = 0; i < 60; ++i) {
    const std::size_t pair = rng.below(data.pair_product.size());
    const auto target = gan::sample_training_target(data, pair, model, rng);
    ++seen[static_cast<int>(target.target_class)];
    const int own = data.pair_product[pair];
    const Tensor own_photo = data.products.slice(own, own + 1);
    CHECK(target.image.shape() == Tensor::Shape{1, 3, 64, 64});
    switch (target.target_class) {
      case gan::TargetClass::kGroundTruth:
        CHECK(target.t == 1);
        CHECK(target.image == own_photo);
        break;
      case gan::TargetClass::kInference:
        CHECK(target.t == 0);
        CHECK(target.image == model.generate(data.sources.slice(static_cast<int>(pair), static_cast<int>(pair) + 1)));
        break;
      case gan::TargetClass::kIrrelevant:
        CHECK(target.t == 0);
        CHECK(target.image != own_photo);
        break;
    }
  }
  CHECK(seen[0] > 0);
  CHECK(seen[1] > 0);
  CHECK(seen[2] > 0);

  gan::PairedTensors single;
  single.sources = data.sources.slice(0, 1);
  single.pair_product = {0};
  single.products = data.products.slice(0, 1);
  single.product_ids = {data.product_ids[0]};
  CHECK(code_of([&] { gan::sample_training_target(single, 0, model, rng); }) == ErrorCode::kSampling);
}

TEST_CASE("training config validation and JSON round trip") {
  auto c = tiny_config();
  c.objective = gan::ConverterObjective::kSaturating;
  const auto again = gan::GanTrainConfig::from_json(c.to_json());
  CHECK(again.to_json() == c.to_json());
  CHECK(again.objective == gan::ConverterObjective::kSaturating);

  auto bad = tiny_config();
  bad.target_probabilities = {0.5, 0.5, 0.5};
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::kArgument);
  bad = tiny_config();
  bad.converter_lr = 0;
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::kArgument);
  CHECK(code_of([] { gan::converter_objective_from_string("sideways"); }) == ErrorCode::kArgument);
}

TEST_CASE("zero steps yields the initialization") {
  auto c = tiny_config();
  c.steps = 0;
  const auto ckpt = gan::train_gan(paired(), c);
  CHECK(ckpt.steps == 0);
  CHECK(ckpt.history.empty());
  const gan::GanCheckpoint expected{gan::initialize(c), 0, c.seed, {}};
  CHECK(gan::serialize(ckpt) == gan::serialize(expected));
}

TEST_CASE("training is deterministic for a seed and records every step") {
  const auto c = tiny_config(5);
  std::vector<std::int64_t> reported;
  const auto a = gan::train_gan(paired(), c, [&](std::int64_t step, const gan::GanLossRecord&) {
    reported.push_back(step);
  });
  const auto b = gan::train_gan(paired(), c);
  REQUIRE(a.history.size() == 4);
  CHECK(reported == std::vector<std::int64_t>{1, 2, 3, 4});
  CHECK(gan::serialize(a) == gan::serialize(b));
  for (const auto& r : a.history) {
    CHECK(std::isfinite(r.loss_r));
    CHECK(std::isfinite(r.loss_c));
    CHECK(r.loss_r >= 0);
    CHECK(r.loss_a >= 0);
  }
  const auto other = gan::train_gan(paired(), tiny_config(6));
  CHECK(gan::serialize(other) != gan::serialize(a));

  const auto csv = gan::history_csv(a);
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "step,loss_r,loss_a,loss_c");
  int rows = 0;
  while (std::getline(lines, line)) ++rows;
  CHECK(rows == 4);
}

TEST_CASE("the saturating objective records the literal converter loss") {
  auto c = tiny_config(8);
  c.steps = 2;
  c.objective = gan::ConverterObjective::kSaturating;
  const auto ckpt = gan::train_gan(paired(), c);
  REQUIRE(ckpt.history.size() == 2);
  // the literal loss is a negated cross entropy, so never positive
  for (const auto& r : ckpt.history) CHECK(r.loss_c <= 0.0f);
}

TEST_CASE("divergence aborts training") {
  auto c = tiny_config(9);
  c.steps = 40;
  c.converter_lr = 1e30f;
  c.discriminator_lr = 1e30f;
  CHECK(code_of([&] { gan::train_gan(paired(), c); }) == ErrorCode::kDiverged);
}

TEST_CASE("train_gan rejects a shopping manifest") {
  CHECK(code_of([] { gan::train_gan(world().shop.catalog, tiny_config()); }) == ErrorCode::kArgument);
}

TEST_CASE("checkpoint round trip is bit exact and corruption is rejected") {
  const auto ckpt = gan::train_gan(paired(), tiny_config(10));
  const auto bytes = gan::serialize(ckpt);
  CHECK(bytes.substr(0, 9) == std::string(gan::kCheckpointMagic));
  const auto back = gan::deserialize_gan(bytes);
  CHECK(gan::serialize(back) == bytes);
  CHECK(back.steps == 4);
  CHECK(back.history.size() == 4);

  testing::TempDir dir("gan-ckpt");
  gan::save(ckpt, dir / "g.ckpt");
  CHECK(gan::serialize(gan::load_gan(dir / "g.ckpt")) == bytes);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(code_of([&] { gan::deserialize_gan(bad_magic); }) == ErrorCode::kFormat);
  CHECK(code_of([&] { gan::deserialize_gan(bytes.substr(0, bytes.size() / 2)); }) == ErrorCode::kFormat);
  // an embedder checkpoint carries the other magic
  const auto embedder_bytes = io::read_file(world().embedder_checkpoint);
  CHECK(code_of([&] { gan::deserialize_gan(embedder_bytes); }) == ErrorCode::kFormat);
}

TEST_CASE("generated garments are deterministic 64x64 images") {
  const auto ckpt = gan::load_gan(world().gan_checkpoint);
  const cv::Mat photo = load_image(world().street_photos.front());
  const Tensor a = gan::generate_garment(photo, ckpt.model);
  const Tensor b = gan::generate_garment(photo, ckpt.model);
  CHECK(a.shape() == Tensor::Shape{1, 3, 64, 64});
  CHECK(a == b);
  const cv::Mat img = tensor_to_image(a);
  CHECK(img.rows == 64);
  CHECK(img.cols == 64);
}
