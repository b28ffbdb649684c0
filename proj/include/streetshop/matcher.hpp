#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "streetshop/binary_io.hpp"
#include "streetshop/data.hpp"
#include "streetshop/nn.hpp"
#include "streetshop/random.hpp"

namespace streetshop::matcher {

inline constexpr std::string_view kCheckpointMagic{"PSHK-EMB\x01", 9};
inline constexpr int kEmbeddingDim = 128;

/// Embedder geometry. The "compact_cnn" backbone is four conv3x3/stride-2
/// blocks (width, 2w, 4w, 8w) with batch norm and ReLU, global average
/// pooling, a linear projection and L2 normalization. "custom" takes an
/// explicit layer list, which must end in an `l2_normalize` layer and yield
/// `embedding_dim` features.
struct EmbedderSpec {
  std::string backbone = "compact_cnn";
  int input_size = 64;
  int width = 16;
  int embedding_dim = kEmbeddingDim;
  nlohmann::json layers;  // only for "custom"

  nlohmann::json to_json() const;
  static EmbedderSpec from_json(const nlohmann::json& j);
  bool operator==(const EmbedderSpec&) const = default;
};

nlohmann::json embedder_layers(const EmbedderSpec& spec);

class Embedder {
 public:
  explicit Embedder(const EmbedderSpec& spec = {});

  const EmbedderSpec& spec() const noexcept { return spec_; }
  nn::Sequential& network() { return net_; }
  const nn::Sequential& network() const { return net_; }

  void init(Rng& rng) { net_.init_he(rng); }

  /// N x 3 x S x S preprocessed images -> N x D unit vectors (row-major).
  std::vector<float> embed(const Tensor& images) const;
  /// preprocess + embed for one decoded photo.
  std::vector<float> embed_image(const cv::Mat& image) const;

 private:
  void check_input(const Tensor& images) const;

  EmbedderSpec spec_;
  nn::Sequential net_;
};

/// Softmax classifier over training classes. Weight column j is W_j.
struct ClassifierHead {
  int dim = 0;
  int classes = 0;
  nn::Parameter weight;  // 1 x 1 x dim x classes
  nn::Parameter bias;    // 1 x 1 x 1 x classes

  ClassifierHead() = default;
  ClassifierHead(int dim, int classes);
};

/// One center per class, row-major (classes x dim).
struct CenterBank {
  int dim = 0;
  float alpha = 0.5f;
  std::vector<float> centers;

  int classes() const { return dim ? static_cast<int>(centers.size()) / dim : 0; }
};

/// c_j <- c_j - alpha * sum_{i: y_i = j}(c_j - x_i) / (1 + n_j); classes
/// without samples in the batch are left as they are.
void update_centers(CenterBank& bank, std::span<const float> features, std::span<const int> labels);

enum class ClassGranularity { kProduct, kCategory };
std::string_view to_string(ClassGranularity g);
ClassGranularity class_granularity_from_string(std::string_view s);

struct MatcherTrainConfig {
  EmbedderSpec spec;
  int epochs = 10;
  float lambda = 0.95f;
  float alpha = 0.5f;
  float learning_rate = 1e-4f;
  int batch_size = 32;
  std::uint64_t seed = 0;
  ClassGranularity granularity = ClassGranularity::kProduct;
  /// Optional embedder checkpoint whose backbone weights seed training.
  std::filesystem::path init_checkpoint;

  void validate() const;
  nlohmann::json to_json() const;
  static MatcherTrainConfig from_json(const nlohmann::json& j);
};

/// Per-batch means of the softmax, center and joint losses.
struct MatcherLossRecord {
  int epoch = 0;
  std::int64_t step = 0;
  float l_s = 0;
  float l_c = 0;
  float joint = 0;
};

struct EmbedderCheckpoint {
  Embedder embedder;
  ClassifierHead head;
  CenterBank centers;
  ClassGranularity granularity = ClassGranularity::kProduct;
  std::vector<std::string> class_labels;  // class index -> product id or category
  float lambda = 0.95f;
  int epochs = 0;
  std::uint64_t seed = 0;
  std::vector<MatcherLossRecord> history;
};

/// The checkpoint `fine_tune` starts from: classes from the manifest, fresh
/// head and zero centers, backbone from `init_checkpoint` when set.
EmbedderCheckpoint initialize(const data::DatasetManifest& manifest, const MatcherTrainConfig& config);
EmbedderCheckpoint initialize(const data::DatasetManifest& manifest, const MatcherTrainConfig& config,
                              Rng& rng);

using MatcherProgress = std::function<void(const MatcherLossRecord&)>;

EmbedderCheckpoint fine_tune(const data::DatasetManifest& manifest, const MatcherTrainConfig& config,
                             const MatcherProgress& progress = {});

std::string serialize(const EmbedderCheckpoint& checkpoint);
EmbedderCheckpoint deserialize_embedder(std::string_view bytes);
void save(const EmbedderCheckpoint& checkpoint, const std::filesystem::path& path);
EmbedderCheckpoint load_embedder(const std::filesystem::path& path);

/// SHA-256 of the serialized checkpoint, which is what an index records.
io::Digest fingerprint(const EmbedderCheckpoint& checkpoint);

/// Loss history as CSV: epoch,step,l_s,l_c,joint
std::string history_csv(const EmbedderCheckpoint& checkpoint);

}  // namespace streetshop::matcher
