#include "streetshop/gan.hpp"

#include <cmath>
#include <sstream>

#include "streetshop/error.hpp"
#include "streetshop/image.hpp"
#include "streetshop/losses.hpp"

namespace streetshop::gan {
namespace {

using nlohmann::json;

constexpr int kTrunkDepth = 4;  // stride-2 convolutions: 64 -> 32 -> 16 -> 8 -> 4

json conv(int in, int out, int kernel, int stride, int pad) {
  return {{"type", "conv2d"}, {"in", in}, {"out", out}, {"kernel", kernel}, {"stride", stride},
          {"pad", pad}};
}

json tconv(int in, int out) {
  return {{"type", "conv_transpose2d"}, {"in", in},   {"out", out},       {"kernel", 5},
          {"stride", 2},                {"pad", 2},   {"output_pad", 1}};
}

json batchnorm(int channels) { return {{"type", "batchnorm"}, {"channels", channels}}; }

// D(I) = sigmoid(logit), clamped; returns probabilities and dL/dlogit factors.
std::vector<float> probabilities(const Tensor& logits) {
  std::vector<float> p(logits.n());
  for (int i = 0; i < logits.n(); ++i)
    p[i] = losses::clamp_probability(losses::sigmoid(logits[i]));
  return p;
}

std::vector<float> training_probabilities(const Tensor& logits, std::int64_t step) {
  for (float z : logits.values())
    if (std::isnan(z))
      fail(ErrorCode::kDiverged,
           "training diverged: discriminator output is NaN at step " + std::to_string(step));
  return probabilities(logits);
}

void check_finite(double v, std::int64_t step, const char* what) {
  if (!std::isfinite(v))
    fail(ErrorCode::kDiverged, std::string("training diverged: ") + what + " is not finite at step " +
                                   std::to_string(step));
}

Tensor gather(const Tensor& source, const std::vector<int>& rows) {
  Tensor out(static_cast<int>(rows.size()), source.c(), source.h(), source.w());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto src = source.item(rows[i]);
    std::copy(src.begin(), src.end(), out.item(static_cast<int>(i)).begin());
  }
  return out;
}

int irrelevant_product(const PairedTensors& data, int own, Rng& rng) {
  const auto n = data.products.n();
  require(n >= 2, ErrorCode::kSampling, "need at least 2 products to draw an irrelevant target");
  int other = static_cast<int>(rng.below(static_cast<std::uint64_t>(n - 1)));
  if (other >= own) ++other;
  return other;
}

}  // namespace

// ---------------------------------------------------------------- topology

json GanArch::to_json() const {
  return {{"width", width}, {"latent_dim", latent_dim}, {"leaky_slope", leaky_slope}};
}

namespace {
const GanArch& checked(const GanArch& a) {
  require(a.width > 0 && a.latent_dim > 0, ErrorCode::kArgument, "gan arch: sizes must be positive");
  return a;
}
}  // namespace

GanArch GanArch::from_json(const json& j) {
  GanArch a;
  a.width = j.value("width", a.width);
  a.latent_dim = j.value("latent_dim", a.latent_dim);
  a.leaky_slope = j.value("leaky_slope", a.leaky_slope);
  return checked(a);
}

json trunk_layers(const GanArch& arch, int in_channels, int out_dim, bool normalize_input) {
  json layers = json::array();
  int channels = in_channels;
  for (int i = 0; i < kTrunkDepth; ++i) {
    const int filters = arch.width << i;
    layers.push_back(conv(channels, filters, 5, 2, 2));
    if (i > 0 || normalize_input) layers.push_back(batchnorm(filters));
    layers.push_back({{"type", "leaky_relu"}, {"slope", arch.leaky_slope}});
    channels = filters;
  }
  // collapse the 4x4 map with a full-extent convolution
  layers.push_back(conv(channels, out_dim, 4, 1, 0));
  return layers;
}

json decoder_layers(const GanArch& arch) {
  const int top = arch.width << (kTrunkDepth - 1);
  json layers = json::array();
  layers.push_back({{"type", "linear"}, {"in", arch.latent_dim}, {"out", top * 16}});
  layers.push_back({{"type", "reshape"}, {"c", top}, {"h", 4}, {"w", 4}});
  layers.push_back(batchnorm(top));
  layers.push_back({{"type", "relu"}});
  int channels = top;
  for (int i = 0; i < kTrunkDepth - 1; ++i) {
    layers.push_back(tconv(channels, channels / 2));
    layers.push_back(batchnorm(channels / 2));
    layers.push_back({{"type", "relu"}});
    channels /= 2;
  }
  layers.push_back(tconv(channels, 3));
  layers.push_back({{"type", "tanh"}});
  return layers;
}

GanModel::GanModel(const GanArch& arch)
    : arch_(checked(arch)),
      encoder_(trunk_layers(arch, 3, arch.latent_dim, true)),
      decoder_(decoder_layers(arch)),
      real_fake_(trunk_layers(arch, 3, 1, false)),
      domain_(trunk_layers(arch, 6, 1, false)) {
  // 64x64x3 -> 32x32xw -> 16x16x2w -> 8x8x4w -> 4x4x8w -> latent -> 4x4x8w -> ... -> 64x64x3
  const auto chain = shape_chain();
  std::vector<Tensor::Shape> expected;
  for (int i = 0; i < kTrunkDepth; ++i)
    expected.push_back({1, arch.width << i, kImageSize >> (i + 1), kImageSize >> (i + 1)});
  expected.push_back({1, arch.latent_dim, 1, 1});
  for (int i = kTrunkDepth - 1; i >= 0; --i)
    expected.push_back({1, arch.width << i, kImageSize >> (i + 1), kImageSize >> (i + 1)});
  expected.push_back({1, 3, kImageSize, kImageSize});

  std::vector<Tensor::Shape> observed;
  auto keep = [&](const nn::Sequential& net, std::size_t offset, const std::vector<Tensor::Shape>& shapes) {
    (void)net;
    for (std::size_t i = offset; i < shapes.size(); ++i) {
      const auto& s = shapes[i];
      if (observed.empty() || observed.back() != s) observed.push_back(s);
    }
  };
  keep(encoder_, 0, encoder_.trace_shapes({1, 3, kImageSize, kImageSize}));
  auto dec = decoder_.trace_shapes({1, arch.latent_dim, 1, 1});
  // the projection's flat output is not part of the spatial chain
  keep(decoder_, 1, dec);
  require(observed == expected, ErrorCode::kShape, "converter shape chain mismatch");
  for (auto* disc : {&real_fake_, &domain_}) {
    const int in = disc == &domain_ ? 6 : 3;
    const auto shapes = disc->trace_shapes({1, in, kImageSize, kImageSize});
    require(shapes.back() == Tensor::Shape{1, 1, 1, 1}, ErrorCode::kShape,
            "discriminator must reduce to a single logit");
  }
  (void)chain;
}

std::vector<Tensor::Shape> GanModel::shape_chain() const {
  auto shapes = encoder_.trace_shapes({1, 3, kImageSize, kImageSize});
  const auto dec = decoder_.trace_shapes(shapes.back());
  shapes.insert(shapes.end(), dec.begin(), dec.end());
  return shapes;
}

void GanModel::init(Rng& rng, float stddev) {
  encoder_.init_normal(rng, stddev);
  decoder_.init_normal(rng, stddev);
  real_fake_.init_normal(rng, stddev);
  domain_.init_normal(rng, stddev);
}

void check_image_batch(const Tensor& images, const char* what) {
  const auto& s = images.shape();
  require(s[0] >= 1 && s[1] == 3 && s[2] == kImageSize && s[3] == kImageSize, ErrorCode::kShape,
          std::string(what) + ": expected N x 3 x 64 x 64, got " + shape_string(s));
}

Tensor GanModel::encode(const Tensor& images) const {
  check_image_batch(images, "encode");
  return encoder_.infer(images);
}

Tensor GanModel::decode(const Tensor& latent) const {
  const auto& s = latent.shape();
  require(s[0] >= 1 && s[1] * s[2] * s[3] == arch_.latent_dim, ErrorCode::kShape,
          "decode: expected latent of length " + std::to_string(arch_.latent_dim) + ", got " +
              shape_string(s));
  return decoder_.infer(latent.reshaped({s[0], arch_.latent_dim, 1, 1}));
}

std::vector<float> GanModel::discriminate_real_fake(const Tensor& images) const {
  check_image_batch(images, "discriminate_real_fake");
  return probabilities(real_fake_.infer(images));
}

std::vector<float> GanModel::discriminate_domain(const Tensor& source, const Tensor& candidate) const {
  check_image_batch(source, "discriminate_domain source");
  check_image_batch(candidate, "discriminate_domain candidate");
  return probabilities(domain_.infer(Tensor::concat_channels(source, candidate)));
}

json GanModel::describe() const {
  return {{"encoder", encoder_.describe()},
          {"decoder", decoder_.describe()},
          {"real_fake", real_fake_.describe()},
          {"domain", domain_.describe()}};
}

std::vector<nn::NamedTensor> GanModel::state() {
  std::vector<nn::NamedTensor> out;
  for (auto [prefix, net] : {std::pair{"encoder.", &encoder_}, std::pair{"decoder.", &decoder_},
                             std::pair{"real_fake.", &real_fake_}, std::pair{"domain.", &domain_}})
    for (auto& t : net->state()) out.push_back({prefix + t.name, t.tensor});
  return out;
}

std::vector<nn::ConstNamedTensor> GanModel::state() const {
  std::vector<nn::ConstNamedTensor> out;
  for (const auto& t : const_cast<GanModel*>(this)->state()) out.push_back({t.name, t.tensor});
  return out;
}

std::string_view to_string(ConverterObjective o) {
  return o == ConverterObjective::kSaturating ? "saturating" : "non_saturating";
}

ConverterObjective converter_objective_from_string(std::string_view s) {
  if (s == "saturating") return ConverterObjective::kSaturating;
  if (s == "non_saturating") return ConverterObjective::kNonSaturating;
  fail(ErrorCode::kArgument, "unknown converter_objective '" + std::string(s) + "'");
}

// --------------------------------------------------------- target sampling

std::string_view to_string(TargetClass c) {
  switch (c) {
    case TargetClass::kGroundTruth: return "ground_truth";
    case TargetClass::kInference: return "inference";
    case TargetClass::kIrrelevant: return "irrelevant";
  }
  return "ground_truth";
}

TargetClass sample_target_class(Rng& rng, const std::array<double, 3>& probabilities) {
  const double u = rng.uniform();
  if (u < probabilities[0]) return TargetClass::kGroundTruth;
  if (u < probabilities[0] + probabilities[1]) return TargetClass::kInference;
  return TargetClass::kIrrelevant;
}

TrainingTarget sample_training_target(const PairedTensors& data, std::size_t pair_index,
                                      const GanModel& model, Rng& rng,
                                      const std::array<double, 3>& probabilities) {
  require(data.products.n() >= 2, ErrorCode::kSampling,
          "need at least 2 products to draw an irrelevant target");
  require(pair_index < data.pair_product.size(), ErrorCode::kArgument, "pair index out of range");
  TrainingTarget target;
  target.target_class = sample_target_class(rng, probabilities);
  const int own = data.pair_product[pair_index];
  switch (target.target_class) {
    case TargetClass::kGroundTruth:
      target.image = data.products.slice(own, own + 1);
      target.t = 1;
      break;
    case TargetClass::kInference: {
      const int i = static_cast<int>(pair_index);
      target.image = model.generate(data.sources.slice(i, i + 1));
      target.t = 0;
      break;
    }
    case TargetClass::kIrrelevant: {
      const int other = irrelevant_product(data, own, rng);
      target.image = data.products.slice(other, other + 1);
      target.t = 0;
      break;
    }
  }
  return target;
}

PairedTensors load_paired(const data::DatasetManifest& manifest) {
  require(manifest.kind() == data::ManifestKind::kPaired, ErrorCode::kArgument,
          "GAN training needs a paired manifest");
  PairedTensors out;
  std::vector<Tensor> product_images;
  std::map<std::string, int, std::less<>> product_index;
  for (const auto& rec : manifest.products()) {
    product_index.emplace(rec.product_id, static_cast<int>(out.product_ids.size()));
    out.product_ids.push_back(rec.product_id);
    product_images.push_back(preprocess(load_image(rec.image_paths.front()), kImageSize));
  }
  std::vector<Tensor> sources;
  for (const auto& pair : manifest.pairs()) {
    sources.push_back(preprocess(load_image(pair.source_image), kImageSize));
    out.pair_product.push_back(product_index.at(pair.product_id));
  }
  require(!sources.empty(), ErrorCode::kValidation, "paired manifest has no street images");
  out.sources = Tensor::stack(sources);
  out.products = Tensor::stack(product_images);
  return out;
}

// ------------------------------------------------------------------ config

void GanTrainConfig::validate() const {
  require(steps >= 0, ErrorCode::kArgument, "steps must be >= 0");
  require(batch_size >= 1, ErrorCode::kArgument, "batch_size must be >= 1");
  require(converter_lr > 0 && discriminator_lr > 0, ErrorCode::kArgument,
          "learning rates must be > 0");
  double sum = 0;
  for (double p : target_probabilities) {
    require(p >= 0, ErrorCode::kArgument, "target probabilities must be >= 0");
    sum += p;
  }
  require(std::abs(sum - 1.0) < 1e-9, ErrorCode::kArgument, "target probabilities must sum to 1");
}

json GanTrainConfig::to_json() const {
  return {{"arch", arch.to_json()},
          {"steps", steps},
          {"batch_size", batch_size},
          {"converter_lr", converter_lr},
          {"discriminator_lr", discriminator_lr},
          {"beta1", beta1},
          {"init_stddev", init_stddev},
          {"seed", seed},
          {"target_probabilities", target_probabilities},
          {"converter_objective", to_string(objective)}};
}

GanTrainConfig GanTrainConfig::from_json(const json& j) {
  GanTrainConfig c;
  try {
    if (j.contains("arch")) c.arch = GanArch::from_json(j.at("arch"));
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.converter_lr = j.value("converter_lr", c.converter_lr);
    c.discriminator_lr = j.value("discriminator_lr", c.discriminator_lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.init_stddev = j.value("init_stddev", c.init_stddev);
    c.seed = j.value("seed", c.seed);
    if (j.contains("converter_objective"))
      c.objective = converter_objective_from_string(j.at("converter_objective").get<std::string>());
    if (j.contains("target_probabilities"))
      c.target_probabilities = j.at("target_probabilities").get<std::array<double, 3>>();
  } catch (const json::exception& e) {
    fail(ErrorCode::kArgument, std::string("invalid GAN config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------- training

GanModel initialize(const GanTrainConfig& config, Rng& rng) {
  GanModel model(config.arch);
  Rng init_rng = rng.fork(0x1417);
  model.init(init_rng, config.init_stddev);
  return model;
}

GanModel initialize(const GanTrainConfig& config) {
  Rng rng(config.seed);
  return initialize(config, rng);
}

GanCheckpoint train_gan(const PairedTensors& data, const GanTrainConfig& config,
                        const GanProgress& progress) {
  config.validate();
  require(data.products.n() >= 2, ErrorCode::kSampling,
          "need at least 2 products to draw irrelevant targets");
  Rng rng(config.seed);
  GanCheckpoint ckpt{initialize(config, rng), 0, config.seed, {}};
  GanModel& model = ckpt.model;

  std::vector<nn::Parameter*> converter_params = model.encoder().parameters();
  for (auto* p : model.decoder().parameters()) converter_params.push_back(p);
  std::vector<nn::Parameter*> disc_params = model.real_fake().parameters();
  for (auto* p : model.domain().parameters()) disc_params.push_back(p);
  nn::Adam converter_opt(converter_params, {config.converter_lr, config.beta1});
  nn::Adam disc_opt(disc_params, {config.discriminator_lr, config.beta1});

  const int batch = config.batch_size;
  const auto n_pairs = static_cast<std::uint64_t>(data.pair_product.size());
  const float inv_batch = 1.0f / static_cast<float>(batch);

  for (std::int64_t step = 1; step <= config.steps; ++step) {
    std::vector<int> rows(batch), own(batch);
    for (int i = 0; i < batch; ++i) {
      rows[i] = static_cast<int>(rng.below(n_pairs));
      own[i] = data.pair_product[rows[i]];
    }
    const Tensor source = gather(data.sources, rows);
    const Tensor fake = model.decoder().forward(model.encoder().forward(source));

    // discriminator step: one target per pair, drawn from the three classes.
    // Photos and inferences go through the discriminators in separate passes
    // so batch statistics match those seen in the converter step.
    std::vector<int> photo_rows, photo_items, fake_items;
    std::vector<int> photo_domain;
    for (int i = 0; i < batch; ++i) {
      const auto cls = sample_target_class(rng, config.target_probabilities);
      if (cls == TargetClass::kInference) {
        fake_items.push_back(i);
        continue;
      }
      photo_items.push_back(i);
      photo_rows.push_back(cls == TargetClass::kGroundTruth ? own[i]
                                                            : irrelevant_product(data, own[i], rng));
      photo_domain.push_back(cls == TargetClass::kGroundTruth);
    }
    disc_opt.zero_grad();
    GanLossRecord record;
    double total_r = 0, total_a = 0;
    auto disc_pass = [&](nn::Sequential& net, const Tensor& input, const std::vector<int>& targets) {
      const Tensor logits = net.forward(input);
      const auto p = training_probabilities(logits, step);
      Tensor grad(logits.shape());
      double total = 0;
      for (int i = 0; i < logits.n(); ++i) {
        total += losses::binary_cross_entropy(p[i], targets[i]);
        grad[i] = losses::binary_cross_entropy_grad(p[i], targets[i]) * p[i] * (1 - p[i]) * inv_batch;
      }
      net.backward(grad);
      return total;
    };
    if (!photo_items.empty()) {
      const Tensor photos = gather(data.products, photo_rows);
      const Tensor paired = Tensor::concat_channels(gather(source, photo_items), photos);
      total_r += disc_pass(model.real_fake(), photos, std::vector<int>(photo_items.size(), 1));
      total_a += disc_pass(model.domain(), paired, photo_domain);
    }
    if (!fake_items.empty()) {
      const Tensor fakes = gather(fake, fake_items);
      const Tensor paired = Tensor::concat_channels(gather(source, fake_items), fakes);
      const std::vector<int> zeros(fake_items.size(), 0);
      total_r += disc_pass(model.real_fake(), fakes, zeros);
      total_a += disc_pass(model.domain(), paired, zeros);
    }
    record.loss_r = static_cast<float>(total_r / batch);
    record.loss_a = static_cast<float>(total_a / batch);
    check_finite(record.loss_r, step, "loss_r");
    check_finite(record.loss_a, step, "loss_a");
    disc_opt.step();

    // converter step on the same inferences
    converter_opt.zero_grad();
    disc_opt.zero_grad();
    const Tensor logit_r = model.real_fake().forward(fake);
    const Tensor logit_a = model.domain().forward(Tensor::concat_channels(source, fake));
    const auto p_r = training_probabilities(logit_r, step);
    const auto p_a = training_probabilities(logit_a, step);
    Tensor grad_r(logit_r.shape()), grad_a(logit_a.shape());
    double total = 0;
    for (int i = 0; i < batch; ++i) {
      total += losses::loss_converter(p_r[i], p_a[i]);
      const auto g = config.objective == ConverterObjective::kSaturating
                         ? losses::loss_converter_grad(p_r[i], p_a[i])
                         : losses::loss_converter_nonsaturating_grad(p_r[i], p_a[i]);
      grad_r[i] = g.d_real_fake * p_r[i] * (1 - p_r[i]) * inv_batch;
      grad_a[i] = g.d_domain * p_a[i] * (1 - p_a[i]) * inv_batch;
    }
    record.loss_c = static_cast<float>(total / batch);
    check_finite(record.loss_c, step, "loss_c");
    Tensor grad_fake = model.real_fake().backward(grad_r);
    const Tensor grad_pair = model.domain().backward(grad_a);
    const std::size_t plane = static_cast<std::size_t>(3) * kImageSize * kImageSize;
    for (int i = 0; i < batch; ++i) {
      auto dst = grad_fake.item(i);
      auto src = grad_pair.item(i);
      for (std::size_t k = 0; k < plane; ++k) dst[k] += src[plane + k];
    }
    model.encoder().backward(model.decoder().backward(grad_fake));
    converter_opt.step();
    disc_opt.zero_grad();

    ckpt.history.push_back(record);
    ckpt.steps = step;
    if (progress) progress(step, record);
  }
  return ckpt;
}

GanCheckpoint train_gan(const data::DatasetManifest& manifest, const GanTrainConfig& config,
                        const GanProgress& progress) {
  config.validate();
  return train_gan(load_paired(manifest), config, progress);
}

Tensor generate_garment(const cv::Mat& street_photo, const GanModel& model) {
  return model.generate(preprocess(street_photo, kImageSize));
}

// ----------------------------------------------------------- serialization

std::string serialize(const GanCheckpoint& checkpoint) {
  io::Container c;
  c.meta = {{"kind", "gan"},
            {"arch", checkpoint.model.arch().to_json()},
            {"layers", checkpoint.model.describe()},
            {"steps", checkpoint.steps},
            {"seed", checkpoint.seed}};
  for (const auto& t : checkpoint.model.state()) c.tensors.push_back({t.name, *t.tensor});
  const int n = static_cast<int>(checkpoint.history.size());
  Tensor history(1, 3, 1, n);
  for (int i = 0; i < n; ++i) {
    history.at(0, 0, 0, i) = checkpoint.history[i].loss_r;
    history.at(0, 1, 0, i) = checkpoint.history[i].loss_a;
    history.at(0, 2, 0, i) = checkpoint.history[i].loss_c;
  }
  c.tensors.push_back({"history", std::move(history)});
  return io::encode_container(kCheckpointMagic, c);
}

GanCheckpoint deserialize_gan(std::string_view bytes) {
  const auto c = io::decode_container(kCheckpointMagic, bytes, "GAN checkpoint");
  GanCheckpoint ckpt;
  try {
    require(c.meta.at("kind") == "gan", ErrorCode::kCheckpointMismatch, "not a GAN checkpoint");
    ckpt.model = GanModel(GanArch::from_json(c.meta.at("arch")));
    require(c.meta.at("layers") == ckpt.model.describe(), ErrorCode::kCheckpointMismatch,
            "GAN checkpoint layer list does not match its architecture");
    ckpt.steps = c.meta.at("steps").get<std::int64_t>();
    ckpt.seed = c.meta.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("GAN checkpoint: bad metadata: ") + e.what());
  }
  auto state = ckpt.model.state();
  require(c.tensors.size() == state.size() + 1, ErrorCode::kCheckpointMismatch,
          "GAN checkpoint tensor count mismatch");
  for (auto& t : state) {
    const auto& stored = c.tensor(t.name);
    require(stored.shape() == t.tensor->shape(), ErrorCode::kCheckpointMismatch,
            "GAN checkpoint: shape mismatch for " + t.name);
    *t.tensor = stored;
  }
  const auto& history = c.tensor("history");
  require(history.c() == 3 && history.n() == 1, ErrorCode::kCheckpointMismatch, "bad loss history");
  for (int i = 0; i < history.w(); ++i)
    ckpt.history.push_back({history.at(0, 0, 0, i), history.at(0, 1, 0, i), history.at(0, 2, 0, i)});
  return ckpt;
}

void save(const GanCheckpoint& checkpoint, const std::filesystem::path& path) {
  io::write_file(path, serialize(checkpoint));
}

GanCheckpoint load_gan(const std::filesystem::path& path) {
  return deserialize_gan(io::read_file(path));
}

std::string history_csv(const GanCheckpoint& checkpoint) {
  std::ostringstream out;
  out.precision(9);
  out << "step,loss_r,loss_a,loss_c\n";
  for (std::size_t i = 0; i < checkpoint.history.size(); ++i) {
    const auto& r = checkpoint.history[i];
    out << i + 1 << ',' << r.loss_r << ',' << r.loss_a << ',' << r.loss_c << '\n';
  }
  return out.str();
}

}  // namespace streetshop::gan
