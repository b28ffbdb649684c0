#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "streetshop/data.hpp"
#include "streetshop/gan.hpp"
#include "streetshop/index.hpp"
#include "streetshop/matcher.hpp"

namespace streetshop {

struct PipelinePaths {
  std::filesystem::path gan_checkpoint;  // empty: embed the photo as is
  std::filesystem::path embedder_checkpoint;
  std::filesystem::path index;
  std::filesystem::path catalog;  // shopping manifest; empty: metadata from the index only
};

struct PipelineResult {
  std::optional<Tensor> garment;  // 1 x 3 x 64 x 64, when a converter is loaded
  std::vector<index::RankedMatch> matches;
};

/// Street photo -> garment -> embedding -> ranked products. Immutable after
/// construction, so one instance can serve concurrent queries.
class Pipeline {
 public:
  Pipeline(std::optional<gan::GanCheckpoint> gan, matcher::EmbedderCheckpoint embedder,
           index::EmbeddingIndex index, std::optional<data::DatasetManifest> catalog = {});

  static std::shared_ptr<const Pipeline> load(const PipelinePaths& paths);

  PipelineResult run(const cv::Mat& photo, int k, bool dedupe_products = true) const;
  PipelineResult run_bytes(std::string_view photo_bytes, int k, bool dedupe_products = true) const;

  bool has_converter() const noexcept { return gan_.has_value(); }
  const matcher::EmbedderCheckpoint& embedder() const noexcept { return embedder_; }
  const index::EmbeddingIndex& index() const noexcept { return index_; }

  const io::Digest& embedder_fingerprint() const noexcept { return embedder_fp_; }
  const std::string& gan_fingerprint_hex() const noexcept { return gan_fp_hex_; }
  bool fingerprint_matches() const noexcept { return index_.fingerprint() == embedder_fp_; }

  struct Product {
    std::string category;
    std::vector<std::filesystem::path> image_paths;  // empty without a catalog
  };
  /// Products of the index, with image paths when a catalog was given.
  const Product* product(std::string_view product_id) const;
  std::size_t product_count() const noexcept { return products_.size(); }

 private:
  std::optional<gan::GanCheckpoint> gan_;
  matcher::EmbedderCheckpoint embedder_;
  index::EmbeddingIndex index_;
  io::Digest embedder_fp_{};
  std::string gan_fp_hex_;
  std::map<std::string, Product, std::less<>> products_;
};

}  // namespace streetshop
