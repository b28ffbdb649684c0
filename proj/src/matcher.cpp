#include "streetshop/matcher.hpp"

#include <cmath>
#include <sstream>

#include "streetshop/error.hpp"
#include "streetshop/image.hpp"
#include "streetshop/losses.hpp"

namespace streetshop::matcher {
namespace {

using nlohmann::json;

nn::Parameter make_param(std::string name, Tensor::Shape shape) {
  return {std::move(name), Tensor(shape), Tensor(shape)};
}

void check_layers(const EmbedderSpec& spec, const nn::Sequential& net) {
  const auto shapes = net.trace_shapes({1, 3, spec.input_size, spec.input_size});
  require(shapes.back() == Tensor::Shape{1, spec.embedding_dim, 1, 1}, ErrorCode::kShape,
          "embedder must produce " + std::to_string(spec.embedding_dim) + " features, got " +
              shape_string(shapes.back()));
  const auto described = net.describe();
  require(!described.empty() && described.back().at("type") == "l2_normalize", ErrorCode::kShape,
          "embedder must end in an l2_normalize layer");
}

struct Sample {
  Tensor image;
  int label;
};

}  // namespace

// ----------------------------------------------------------------- spec

json EmbedderSpec::to_json() const {
  json j = {{"backbone", backbone},
            {"input_size", input_size},
            {"width", width},
            {"embedding_dim", embedding_dim}};
  if (backbone == "custom") j["layers"] = layers;
  return j;
}

EmbedderSpec EmbedderSpec::from_json(const json& j) {
  EmbedderSpec s;
  try {
    s.backbone = j.value("backbone", s.backbone);
    s.input_size = j.value("input_size", s.input_size);
    s.width = j.value("width", s.width);
    s.embedding_dim = j.value("embedding_dim", s.embedding_dim);
    if (j.contains("layers")) s.layers = j.at("layers");
  } catch (const json::exception& e) {
    fail(ErrorCode::kArgument, std::string("invalid embedder spec: ") + e.what());
  }
  require(s.backbone == "compact_cnn" || s.backbone == "custom", ErrorCode::kArgument,
          "unknown backbone '" + s.backbone + "'");
  require(s.input_size >= 16 && s.width >= 1 && s.embedding_dim >= 1, ErrorCode::kArgument,
          "embedder sizes out of range");
  require(s.backbone != "custom" || s.layers.is_array(), ErrorCode::kArgument,
          "custom backbone needs a layer list");
  return s;
}

json embedder_layers(const EmbedderSpec& spec) {
  if (spec.backbone == "custom") return spec.layers;
  json layers = json::array();
  int channels = 3;
  for (int i = 0; i < 4; ++i) {
    const int filters = spec.width << i;
    layers.push_back({{"type", "conv2d"}, {"in", channels}, {"out", filters}, {"kernel", 3},
                      {"stride", 2}, {"pad", 1}});
    layers.push_back({{"type", "batchnorm"}, {"channels", filters}});
    layers.push_back({{"type", "relu"}});
    channels = filters;
  }
  layers.push_back({{"type", "global_avg_pool"}});
  layers.push_back({{"type", "linear"}, {"in", channels}, {"out", spec.embedding_dim}});
  layers.push_back({{"type", "l2_normalize"}});
  return layers;
}

// ------------------------------------------------------------- embedder

Embedder::Embedder(const EmbedderSpec& spec) : spec_(spec), net_(embedder_layers(spec)) {
  check_layers(spec_, net_);
}

void Embedder::check_input(const Tensor& images) const {
  const auto& s = images.shape();
  require(s[0] >= 1 && s[1] == 3 && s[2] == spec_.input_size && s[3] == spec_.input_size,
          ErrorCode::kShape,
          "embed: expected N x 3 x " + std::to_string(spec_.input_size) + " x " +
              std::to_string(spec_.input_size) + ", got " + shape_string(s));
}

std::vector<float> Embedder::embed(const Tensor& images) const {
  check_input(images);
  const Tensor out = net_.infer(images);
  return {out.values().begin(), out.values().end()};
}

std::vector<float> Embedder::embed_image(const cv::Mat& image) const {
  return embed(preprocess(image, spec_.input_size));
}

ClassifierHead::ClassifierHead(int d, int n)
    : dim(d),
      classes(n),
      weight(make_param("head.weight", {1, 1, d, n})),
      bias(make_param("head.bias", {1, 1, 1, n})) {}

// -------------------------------------------------------------- centers

void update_centers(CenterBank& bank, std::span<const float> features, std::span<const int> labels) {
  const auto d = static_cast<std::size_t>(bank.dim);
  const int n = bank.classes();
  require(d > 0 && features.size() == labels.size() * d, ErrorCode::kShape,
          "update_centers: feature/label mismatch");
  std::vector<double> delta(bank.centers.size(), 0.0);
  std::vector<int> counts(n, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    require(y >= 0 && y < n, ErrorCode::kArgument,
            "update_centers: label " + std::to_string(y) + " out of range");
    ++counts[y];
    for (std::size_t k = 0; k < d; ++k)
      delta[y * d + k] += bank.centers[y * d + k] - features[i * d + k];
  }
  for (int j = 0; j < n; ++j) {
    if (!counts[j]) continue;
    for (std::size_t k = 0; k < d; ++k)
      bank.centers[j * d + k] -=
          static_cast<float>(bank.alpha * delta[j * d + k] / (1.0 + counts[j]));
  }
}

std::string_view to_string(ClassGranularity g) {
  return g == ClassGranularity::kCategory ? "category" : "product";
}

ClassGranularity class_granularity_from_string(std::string_view s) {
  if (s == "product") return ClassGranularity::kProduct;
  if (s == "category") return ClassGranularity::kCategory;
  fail(ErrorCode::kArgument, "unknown class granularity '" + std::string(s) + "'");
}

// --------------------------------------------------------------- config

void MatcherTrainConfig::validate() const {
  require(epochs >= 0, ErrorCode::kArgument, "epochs must be >= 0");
  require(lambda >= 0, ErrorCode::kArgument, "lambda must be >= 0");
  require(alpha > 0 && alpha <= 1, ErrorCode::kArgument, "alpha must be in (0, 1]");
  require(learning_rate > 0, ErrorCode::kArgument, "learning_rate must be > 0");
  require(batch_size >= 1, ErrorCode::kArgument, "batch_size must be >= 1");
}

json MatcherTrainConfig::to_json() const {
  return {{"spec", spec.to_json()},
          {"epochs", epochs},
          {"lambda", lambda},
          {"alpha", alpha},
          {"learning_rate", learning_rate},
          {"batch_size", batch_size},
          {"seed", seed},
          {"granularity", to_string(granularity)},
          {"init_checkpoint", init_checkpoint.string()}};
}

MatcherTrainConfig MatcherTrainConfig::from_json(const json& j) {
  MatcherTrainConfig c;
  try {
    if (j.contains("spec")) c.spec = EmbedderSpec::from_json(j.at("spec"));
    c.epochs = j.value("epochs", c.epochs);
    c.lambda = j.value("lambda", c.lambda);
    c.alpha = j.value("alpha", c.alpha);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    if (j.contains("granularity"))
      c.granularity = class_granularity_from_string(j.at("granularity").get<std::string>());
    c.init_checkpoint = j.value("init_checkpoint", std::string());
  } catch (const json::exception& e) {
    fail(ErrorCode::kArgument, std::string("invalid matcher config: ") + e.what());
  }
  c.validate();
  return c;
}

// ------------------------------------------------------------- training

EmbedderCheckpoint initialize(const data::DatasetManifest& manifest, const MatcherTrainConfig& config,
                              Rng& rng) {
  config.validate();
  EmbedderCheckpoint ckpt{Embedder(config.spec), {}, {}, config.granularity, {}, config.lambda, 0,
                          config.seed, {}};
  if (config.granularity == ClassGranularity::kProduct) {
    for (const auto& p : manifest.products()) ckpt.class_labels.push_back(p.product_id);
  } else {
    ckpt.class_labels = manifest.categories();
  }
  const int n_classes = static_cast<int>(ckpt.class_labels.size());
  require(n_classes >= 2, ErrorCode::kArgument, "matcher training needs at least 2 classes");

  const int d = config.spec.embedding_dim;
  Rng init_rng = rng.fork(0xE3B);
  auto& net = ckpt.embedder.network();
  ckpt.embedder.init(init_rng);
  ckpt.head = ClassifierHead(d, n_classes);
  for (auto& w : ckpt.head.weight.value.values()) w = static_cast<float>(init_rng.normal(0.0, 0.01));
  ckpt.centers =
      CenterBank{d, config.alpha, std::vector<float>(static_cast<std::size_t>(n_classes) * d, 0.0f)};

  if (!config.init_checkpoint.empty()) {
    const auto base = load_embedder(config.init_checkpoint);
    require(base.embedder.network().describe() == net.describe(), ErrorCode::kCheckpointMismatch,
            "init checkpoint backbone does not match the embedder spec");
    auto dst = net.state();
    const auto src = base.embedder.network().state();
    for (std::size_t i = 0; i < dst.size(); ++i) *dst[i].tensor = *src[i].tensor;
  }
  return ckpt;
}

EmbedderCheckpoint initialize(const data::DatasetManifest& manifest, const MatcherTrainConfig& config) {
  Rng rng(config.seed);
  return initialize(manifest, config, rng);
}

EmbedderCheckpoint fine_tune(const data::DatasetManifest& manifest, const MatcherTrainConfig& config,
                             const MatcherProgress& progress) {
  config.validate();
  require(manifest.kind() == data::ManifestKind::kShopping, ErrorCode::kArgument,
          "matcher training needs a shopping manifest");

  Rng rng(config.seed);
  EmbedderCheckpoint ckpt = initialize(manifest, config, rng);
  auto& net = ckpt.embedder.network();
  const int d = config.spec.embedding_dim;
  const int n_classes = static_cast<int>(ckpt.class_labels.size());

  const auto products = manifest.products();
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < products.size(); ++i) {
    const int label = config.granularity == ClassGranularity::kProduct
                          ? static_cast<int>(i)
                          : manifest.category_index(products[i].category);
    for (const auto& path : products[i].image_paths)
      samples.push_back({preprocess(load_image(path), config.spec.input_size), label});
  }

  auto params = net.parameters();
  params.push_back(&ckpt.head.weight);
  params.push_back(&ckpt.head.bias);
  nn::Adam opt(params, {config.learning_rate, 0.9f});

  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::int64_t step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const auto m = static_cast<int>(end - begin);
      std::vector<Tensor> items;
      std::vector<int> labels;
      for (std::size_t i = begin; i < end; ++i) {
        items.push_back(samples[order[i]].image);
        labels.push_back(samples[order[i]].label);
      }
      opt.zero_grad();
      const Tensor features = net.forward(Tensor::stack(items));
      const auto x = features.values();
      std::vector<float> grad_softmax(x.size(), 0.0f), grad_center(x.size(), 0.0f);
      const float l_s = losses::softmax_loss<float>(
          {x, labels, ckpt.head.weight.value.values(), ckpt.head.bias.value.values(),
           static_cast<std::size_t>(d), static_cast<std::size_t>(n_classes)},
          {grad_softmax, ckpt.head.weight.grad.values(), ckpt.head.bias.grad.values()});
      const float l_c = losses::center_loss<float>(x, labels, ckpt.centers.centers,
                                                   static_cast<std::size_t>(d), grad_center);
      const float joint = losses::joint_loss(l_s, l_c, config.lambda);
      ++step;
      require(std::isfinite(joint), ErrorCode::kDiverged,
              "matcher training diverged at epoch " + std::to_string(epoch) + ", step " +
                  std::to_string(step));

      const float inv_m = 1.0f / static_cast<float>(m);
      Tensor grad(features.shape());
      for (std::size_t k = 0; k < x.size(); ++k)
        grad[k] = (grad_softmax[k] + config.lambda * grad_center[k]) * inv_m;
      for (auto& g : ckpt.head.weight.grad.values()) g *= inv_m;
      for (auto& g : ckpt.head.bias.grad.values()) g *= inv_m;
      net.backward(grad);
      opt.step();
      update_centers(ckpt.centers, x, labels);

      const MatcherLossRecord record{epoch, step, l_s * inv_m, l_c * inv_m, joint * inv_m};
      ckpt.history.push_back(record);
      if (progress) progress(record);
    }
    ckpt.epochs = epoch;
  }
  return ckpt;
}

// -------------------------------------------------------- serialization

std::string serialize(const EmbedderCheckpoint& checkpoint) {
  io::Container c;
  json steps = json::array();
  for (const auto& r : checkpoint.history) steps.push_back({r.epoch, r.step});
  c.meta = {{"kind", "embedder"},
            {"spec", checkpoint.embedder.spec().to_json()},
            {"layers", checkpoint.embedder.network().describe()},
            {"granularity", to_string(checkpoint.granularity)},
            {"class_labels", checkpoint.class_labels},
            {"lambda", checkpoint.lambda},
            {"alpha", checkpoint.centers.alpha},
            {"epochs", checkpoint.epochs},
            {"seed", checkpoint.seed},
            {"history_steps", steps}};
  for (const auto& t : checkpoint.embedder.network().state())
    c.tensors.push_back({"embedder." + t.name, *t.tensor});
  c.tensors.push_back({"head.weight", checkpoint.head.weight.value});
  c.tensors.push_back({"head.bias", checkpoint.head.bias.value});
  Tensor centers(1, 1, checkpoint.centers.classes(), checkpoint.centers.dim);
  std::copy(checkpoint.centers.centers.begin(), checkpoint.centers.centers.end(),
            centers.values().begin());
  c.tensors.push_back({"centers", std::move(centers)});
  const int n = static_cast<int>(checkpoint.history.size());
  Tensor history(1, 3, 1, n);
  for (int i = 0; i < n; ++i) {
    history.at(0, 0, 0, i) = checkpoint.history[i].l_s;
    history.at(0, 1, 0, i) = checkpoint.history[i].l_c;
    history.at(0, 2, 0, i) = checkpoint.history[i].joint;
  }
  c.tensors.push_back({"history", std::move(history)});
  return io::encode_container(kCheckpointMagic, c);
}

EmbedderCheckpoint deserialize_embedder(std::string_view bytes) {
  const auto c = io::decode_container(kCheckpointMagic, bytes, "embedder checkpoint");
  EmbedderCheckpoint ckpt;
  json steps;
  try {
    require(c.meta.at("kind") == "embedder", ErrorCode::kCheckpointMismatch,
            "not an embedder checkpoint");
    ckpt.embedder = Embedder(EmbedderSpec::from_json(c.meta.at("spec")));
    require(c.meta.at("layers") == ckpt.embedder.network().describe(), ErrorCode::kCheckpointMismatch,
            "embedder checkpoint layer list does not match its spec");
    ckpt.granularity = class_granularity_from_string(c.meta.at("granularity").get<std::string>());
    ckpt.class_labels = c.meta.at("class_labels").get<std::vector<std::string>>();
    ckpt.lambda = c.meta.at("lambda").get<float>();
    ckpt.centers.alpha = c.meta.at("alpha").get<float>();
    ckpt.epochs = c.meta.at("epochs").get<int>();
    ckpt.seed = c.meta.at("seed").get<std::uint64_t>();
    steps = c.meta.at("history_steps");
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, std::string("embedder checkpoint: bad metadata: ") + e.what());
  }
  auto state = ckpt.embedder.network().state();
  for (auto& t : state) {
    const auto& stored = c.tensor("embedder." + t.name);
    require(stored.shape() == t.tensor->shape(), ErrorCode::kCheckpointMismatch,
            "embedder checkpoint: shape mismatch for " + t.name);
    *t.tensor = stored;
  }
  const int dim = ckpt.embedder.spec().embedding_dim;
  const int n = static_cast<int>(ckpt.class_labels.size());
  ckpt.head = ClassifierHead(dim, n);
  const auto& w = c.tensor("head.weight");
  const auto& b = c.tensor("head.bias");
  const auto& centers = c.tensor("centers");
  require(w.shape() == ckpt.head.weight.value.shape() && b.shape() == ckpt.head.bias.value.shape() &&
              centers.shape() == Tensor::Shape{1, 1, n, dim},
          ErrorCode::kCheckpointMismatch, "embedder checkpoint: head/center shape mismatch");
  ckpt.head.weight.value = w;
  ckpt.head.bias.value = b;
  ckpt.centers.dim = dim;
  ckpt.centers.centers.assign(centers.values().begin(), centers.values().end());
  const auto& history = c.tensor("history");
  require(history.c() == 3 && history.w() == static_cast<int>(steps.size()),
          ErrorCode::kCheckpointMismatch, "embedder checkpoint: bad loss history");
  for (int i = 0; i < history.w(); ++i)
    ckpt.history.push_back({steps[i][0].get<int>(), steps[i][1].get<std::int64_t>(),
                            history.at(0, 0, 0, i), history.at(0, 1, 0, i), history.at(0, 2, 0, i)});
  require(c.tensors.size() == state.size() + 4, ErrorCode::kCheckpointMismatch,
          "embedder checkpoint tensor count mismatch");
  return ckpt;
}

void save(const EmbedderCheckpoint& checkpoint, const std::filesystem::path& path) {
  io::write_file(path, serialize(checkpoint));
}

EmbedderCheckpoint load_embedder(const std::filesystem::path& path) {
  return deserialize_embedder(io::read_file(path));
}

io::Digest fingerprint(const EmbedderCheckpoint& checkpoint) {
  return io::sha256(serialize(checkpoint));
}

std::string history_csv(const EmbedderCheckpoint& checkpoint) {
  std::ostringstream out;
  out.precision(9);
  out << "epoch,step,l_s,l_c,joint\n";
  for (const auto& r : checkpoint.history)
    out << r.epoch << ',' << r.step << ',' << r.l_s << ',' << r.l_c << ',' << r.joint << '\n';
  return out.str();
}

}  // namespace streetshop::matcher
