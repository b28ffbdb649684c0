#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "streetshop/binary_io.hpp"
#include "streetshop/data.hpp"
#include "streetshop/matcher.hpp"

namespace streetshop::index {

inline constexpr std::string_view kIndexMagic{"PSHK-IDX\x01", 9};

struct IndexEntry {
  std::string image_id;  // "<product_id>#<n>", n = position in the product's image list
  std::string product_id;
  std::string category;
  std::vector<float> vector;

  bool operator==(const IndexEntry&) const = default;
};

struct RankedMatch {
  std::string product_id;
  std::string image_id;
  std::string category;
  float score = 0;  // L2 distance
  int rank = 0;     // 1-based

  bool operator==(const RankedMatch&) const = default;
};

class EmbeddingIndex {
 public:
  EmbeddingIndex() = default;
  EmbeddingIndex(int dim, io::Digest fingerprint) : dim_(dim), fingerprint_(fingerprint) {}

  int dim() const noexcept { return dim_; }
  const io::Digest& fingerprint() const noexcept { return fingerprint_; }
  const std::vector<IndexEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  /// Vectors must have `dim` finite components and unit norm (within 1e-3).
  void add(IndexEntry entry);

  /// Distinct product ids in first-appearance order.
  std::vector<std::string> product_ids() const;
  /// Category of a product, or nullptr when unknown.
  const std::string* category_of(std::string_view product_id) const;

  bool operator==(const EmbeddingIndex&) const = default;

 private:
  int dim_ = matcher::kEmbeddingDim;
  io::Digest fingerprint_{};
  std::vector<IndexEntry> entries_;
};

/// Embeds every image of every product in the manifest.
EmbeddingIndex build_index(const data::DatasetManifest& manifest,
                           const matcher::EmbedderCheckpoint& checkpoint);

struct QueryOptions {
  /// Rank products by their best-scoring image instead of ranking images.
  bool dedupe_products = true;
};

/// The k nearest entries (or products) by L2 distance, ascending, ties broken
/// by product id then image id. Returns everything when k exceeds the count.
std::vector<RankedMatch> query(const EmbeddingIndex& index, std::span<const float> q, int k,
                               const QueryOptions& options = {});

std::string serialize(const EmbeddingIndex& index);
EmbeddingIndex deserialize_index(std::string_view bytes);
void save_index(const EmbeddingIndex& index, const std::filesystem::path& path);
EmbeddingIndex load_index(const std::filesystem::path& path);

}  // namespace streetshop::index
