#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "streetshop/binary_io.hpp"
#include "streetshop/data.hpp"
#include "streetshop/nn.hpp"
#include "streetshop/random.hpp"

namespace streetshop::gan {

inline constexpr int kImageSize = 64;
inline constexpr std::string_view kCheckpointMagic{"PSHK-GAN\x01", 9};

/// Converter and discriminator geometry. `width` is the filter count of the
/// first convolution; each following stride-2 layer doubles it, so the
/// default reproduces the 128/256/512/1024 stack. Narrower widths keep the
/// same spatial chain and are used for desk-scale runs.
struct GanArch {
  int width = 128;
  int latent_dim = 64;
  float leaky_slope = 0.2f;

  nlohmann::json to_json() const;
  static GanArch from_json(const nlohmann::json& j);
  bool operator==(const GanArch&) const = default;
};

/// Layer lists for the stride-2 trunk shared by the encoder and both
/// discriminators, and for the decoder.
nlohmann::json trunk_layers(const GanArch& arch, int in_channels, int out_dim, bool normalize_input);
nlohmann::json decoder_layers(const GanArch& arch);

/// Encoder, decoder, real/fake discriminator D_R and domain discriminator D_A.
/// Construction checks the full shape chain and throws on any mismatch.
class GanModel {
 public:
  explicit GanModel(const GanArch& arch = {});

  const GanArch& arch() const noexcept { return arch_; }

  void init(Rng& rng, float stddev = 0.02f);

  /// N x 3 x 64 x 64 images in [-1, 1] -> N x latent x 1 x 1.
  Tensor encode(const Tensor& images) const;
  /// N x latent (x 1 x 1) -> N x 3 x 64 x 64 in [-1, 1].
  Tensor decode(const Tensor& latent) const;
  Tensor generate(const Tensor& images) const { return decode(encode(images)); }

  /// Per-item D_R(I), clamped into [eps, 1 - eps].
  std::vector<float> discriminate_real_fake(const Tensor& images) const;
  /// Per-item D_A(I_S, I) on the channel concatenation [source | candidate].
  std::vector<float> discriminate_domain(const Tensor& source, const Tensor& candidate) const;

  nn::Sequential& encoder() { return encoder_; }
  nn::Sequential& decoder() { return decoder_; }
  nn::Sequential& real_fake() { return real_fake_; }
  nn::Sequential& domain() { return domain_; }

  nlohmann::json describe() const;
  std::vector<nn::NamedTensor> state();
  std::vector<nn::ConstNamedTensor> state() const;

  /// Shapes after every layer of encoder then decoder for a single 64x64 input.
  std::vector<Tensor::Shape> shape_chain() const;

 private:
  GanArch arch_;
  nn::Sequential encoder_, decoder_, real_fake_, domain_;
};

void check_image_batch(const Tensor& images, const char* what);

enum class TargetClass { kGroundTruth = 0, kInference = 1, kIrrelevant = 2 };
std::string_view to_string(TargetClass c);

/// Preprocessed paired data held in memory.
struct PairedTensors {
  Tensor sources;                        // one street photo per pair
  std::vector<int> pair_product;         // pair -> product index
  Tensor products;                       // one clean photo per product
  std::vector<std::string> product_ids;
};

PairedTensors load_paired(const data::DatasetManifest& manifest);

struct TrainingTarget {
  Tensor image;  // 1 x 3 x 64 x 64
  int t = 0;     // domain label: 1 iff ground truth
  TargetClass target_class = TargetClass::kGroundTruth;
};

/// Draws the target class with the given probabilities (uniform thirds by
/// default).
TargetClass sample_target_class(Rng& rng, const std::array<double, 3>& probabilities);

/// Chooses I for pair `pair_index`: its ground truth product, the converter's
/// inference, or a different product's photo.
TrainingTarget sample_training_target(const PairedTensors& data, std::size_t pair_index,
                                      const GanModel& model, Rng& rng,
                                      const std::array<double, 3>& probabilities = {
                                          1.0 / 3, 1.0 / 3, 1.0 / 3});

/// How the converter's gradient is formed. Both record the same converter
/// loss; `kSaturating` descends it directly, `kNonSaturating` descends
/// BCE(p, 1) on the inference instead, which shares its fixed points but
/// keeps a useful gradient while the discriminators are winning.
enum class ConverterObjective { kNonSaturating, kSaturating };
std::string_view to_string(ConverterObjective o);
ConverterObjective converter_objective_from_string(std::string_view s);

struct GanTrainConfig {
  GanArch arch;
  int steps = 2000;
  int batch_size = 64;
  float converter_lr = 2e-4f;
  float discriminator_lr = 2e-4f;
  float beta1 = 0.5f;
  float init_stddev = 0.02f;
  std::uint64_t seed = 0;
  std::array<double, 3> target_probabilities{1.0 / 3, 1.0 / 3, 1.0 / 3};
  ConverterObjective objective = ConverterObjective::kNonSaturating;

  void validate() const;
  nlohmann::json to_json() const;
  static GanTrainConfig from_json(const nlohmann::json& j);
};

struct GanLossRecord {
  float loss_r = 0;  // real/fake discriminator BCE, batch mean
  float loss_a = 0;  // domain discriminator BCE, batch mean
  float loss_c = 0;  // converter loss, batch mean
};

struct GanCheckpoint {
  GanModel model;
  std::int64_t steps = 0;
  std::uint64_t seed = 0;
  std::vector<GanLossRecord> history;
};

/// The model `train_gan` starts from for this config.
GanModel initialize(const GanTrainConfig& config);
GanModel initialize(const GanTrainConfig& config, Rng& rng);

using GanProgress = std::function<void(std::int64_t step, const GanLossRecord&)>;

GanCheckpoint train_gan(const PairedTensors& data, const GanTrainConfig& config,
                        const GanProgress& progress = {});
GanCheckpoint train_gan(const data::DatasetManifest& manifest, const GanTrainConfig& config,
                        const GanProgress& progress = {});

/// preprocess -> encode -> decode. Returns 1 x 3 x 64 x 64 in [-1, 1].
Tensor generate_garment(const cv::Mat& street_photo, const GanModel& model);

std::string serialize(const GanCheckpoint& checkpoint);
GanCheckpoint deserialize_gan(std::string_view bytes);
void save(const GanCheckpoint& checkpoint, const std::filesystem::path& path);
GanCheckpoint load_gan(const std::filesystem::path& path);

/// Loss history as CSV: step,loss_r,loss_a,loss_c
std::string history_csv(const GanCheckpoint& checkpoint);

}  // namespace streetshop::gan
