#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <opencv2/core.hpp>

namespace streetshop::data {

/// The five shopping categories used by the synthetic generator and the
/// default manifests.
inline const std::vector<std::string>& default_categories() {
  static const std::vector<std::string> kCategories = {
      "Blue T-Shirts", "Red Sweaters", "Bridal Dress", "Yellow T-Shirts", "Others"};
  return kCategories;
}

enum class ManifestKind { kShopping, kPaired };
enum class ImageRole { kProduct, kStreet, kAugmented };

std::string_view to_string(ManifestKind kind);
std::string_view to_string(ImageRole role);

/// One manifest line. `image_path` is absolute once loaded.
struct ManifestEntry {
  std::string product_id;
  std::string category;
  ImageRole role = ImageRole::kProduct;
  std::filesystem::path image_path;
};

struct ProductRecord {
  std::string product_id;
  std::string category;
  /// The product photo first, then augmented variants in manifest order.
  std::vector<std::filesystem::path> image_paths;
};

struct PairedSample {
  std::string product_id;
  std::filesystem::path source_image;  // street / model photo
  std::filesystem::path target_image;  // clean product photo
};

class DatasetManifest {
 public:
  DatasetManifest() = default;
  DatasetManifest(ManifestKind kind, std::vector<std::string> categories,
                  std::vector<ManifestEntry> entries);

  ManifestKind kind() const noexcept { return kind_; }
  const std::vector<std::string>& categories() const noexcept { return categories_; }
  const std::vector<ManifestEntry>& entries() const noexcept { return entries_; }

  /// Products in first-appearance order.
  std::vector<ProductRecord> products() const;
  /// One pair per street image, linked to its product photo.
  std::vector<PairedSample> pairs() const;
  std::size_t image_count() const noexcept { return entries_.size(); }
  int category_index(std::string_view label) const;

  /// Structural checks (ids, categories, roles). With `check_files`, also
  /// verifies every referenced image exists; offending ids are reported.
  void validate(bool check_files) const;

 private:
  ManifestKind kind_ = ManifestKind::kShopping;
  std::vector<std::string> categories_;
  std::vector<ManifestEntry> entries_;
};

/// Parses manifest text; relative image paths resolve against `base_dir`.
DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir);
std::string format_manifest(const DatasetManifest& manifest, const std::filesystem::path& base_dir);

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// `count` label-preserving variants (flip, small rotation, scale and
/// translation jitter, brightness/contrast jitter), each the input's size.
std::vector<cv::Mat> augment_product(const cv::Mat& image, int count, std::uint64_t seed);

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

/// Stratified split by product: within each category floor(n * fraction)
/// products go to train and the rest to test. All images of a product stay
/// on one side.
std::pair<DatasetManifest, DatasetManifest> split_train_test(const DatasetManifest& manifest,
                                                            const SplitSpec& spec);

struct SyntheticOptions {
  int street_per_product = 4;
  int product_size = 96;
  int street_width = 96;
  int street_height = 128;
};

/// Renders `n_products` synthetic garments: one clean product photo each plus
/// `street_per_product` street renderings with clutter, occlusion, translation
/// and brightness shifts. Writes images and `paired.tsv` under `out_dir`.
DatasetManifest generate_synthetic_paired_dataset(int n_products, std::uint64_t seed,
                                                  const std::filesystem::path& out_dir,
                                                  const SyntheticOptions& options = {});

struct IngestResult {
  DatasetManifest catalog;  // product + augmented images
  DatasetManifest train;
  DatasetManifest test;
};

/// Validates a manifest and builds the shopping catalog: each product photo
/// plus `images_per_product - 1` augmented variants (written under
/// `out_dir/augmented`), so 326 products at the default of 8 give 2,608
/// images. Writes catalog.tsv, train.tsv and test.tsv into `out_dir`.
IngestResult ingest(const DatasetManifest& manifest, const std::filesystem::path& out_dir,
                    int images_per_product, std::uint64_t seed, double train_fraction = 0.8);

}  // namespace streetshop::data
