#include "streetshop/index.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "streetshop/error.hpp"
#include "streetshop/image.hpp"

namespace streetshop::index {
namespace {

constexpr int kEmbedBatch = 32;

bool ranks_before(const RankedMatch& a, const RankedMatch& b) {
  return std::tie(a.score, a.product_id, a.image_id) < std::tie(b.score, b.product_id, b.image_id);
}

float l2(std::span<const float> a, std::span<const float> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return static_cast<float>(std::sqrt(s));
}

void check_vector(std::span<const float> v, int dim, const std::string& what) {
  require(static_cast<int>(v.size()) == dim, ErrorCode::kShape,
          what + ": expected " + std::to_string(dim) + " components, got " + std::to_string(v.size()));
  double norm = 0;
  for (float x : v) {
    require(std::isfinite(x), ErrorCode::kNumeric, what + ": non-finite component");
    norm += static_cast<double>(x) * x;
  }
  require(std::abs(std::sqrt(norm) - 1.0) <= 1e-3, ErrorCode::kArgument, what + ": not unit norm");
}

}  // namespace

void EmbeddingIndex::add(IndexEntry entry) {
  check_vector(entry.vector, dim_, "index entry " + entry.image_id);
  entries_.push_back(std::move(entry));
}

std::vector<std::string> EmbeddingIndex::product_ids() const {
  std::vector<std::string> ids;
  std::map<std::string_view, bool, std::less<>> seen;
  for (const auto& e : entries_)
    if (seen.emplace(e.product_id, true).second) ids.push_back(e.product_id);
  return ids;
}

const std::string* EmbeddingIndex::category_of(std::string_view product_id) const {
  for (const auto& e : entries_)
    if (e.product_id == product_id) return &e.category;
  return nullptr;
}

EmbeddingIndex build_index(const data::DatasetManifest& manifest,
                           const matcher::EmbedderCheckpoint& checkpoint) {
  const auto& embedder = checkpoint.embedder;
  const int dim = embedder.spec().embedding_dim;
  EmbeddingIndex index(dim, matcher::fingerprint(checkpoint));
  std::vector<IndexEntry> pending;
  std::vector<Tensor> images;
  auto flush = [&] {
    if (images.empty()) return;
    const auto vectors = embedder.embed(Tensor::stack(images));
    for (std::size_t i = 0; i < pending.size(); ++i) {
      pending[i].vector.assign(vectors.begin() + i * dim, vectors.begin() + (i + 1) * dim);
      index.add(std::move(pending[i]));
    }
    pending.clear();
    images.clear();
  };
  for (const auto& product : manifest.products()) {
    for (std::size_t n = 0; n < product.image_paths.size(); ++n) {
      const std::string image_id = product.product_id + "#" + std::to_string(n);
      try {
        images.push_back(preprocess(load_image(product.image_paths[n]), embedder.spec().input_size));
      } catch (const Error& e) {
        throw Error(e.code(), "cannot embed " + image_id + ": " + e.what(), {image_id});
      }
      pending.push_back({image_id, product.product_id, product.category, {}});
      if (static_cast<int>(images.size()) == kEmbedBatch) flush();
    }
  }
  flush();
  return index;
}

std::vector<RankedMatch> query(const EmbeddingIndex& index, std::span<const float> q, int k,
                               const QueryOptions& options) {
  require(k >= 1, ErrorCode::kArgument, "k must be >= 1");
  require(!index.empty(), ErrorCode::kQuery, "cannot query an empty index");
  check_vector(q, index.dim(), "query vector");

  std::vector<RankedMatch> candidates;
  candidates.reserve(index.size());
  for (const auto& e : index.entries())
    candidates.push_back({e.product_id, e.image_id, e.category, l2(q, e.vector), 0});

  if (options.dedupe_products) {
    std::map<std::string_view, std::size_t, std::less<>> best;
    std::vector<RankedMatch> unique;
    for (auto& c : candidates) {
      auto [it, inserted] = best.emplace(c.product_id, unique.size());
      if (inserted)
        unique.push_back(c);
      else if (ranks_before(c, unique[it->second]))
        unique[it->second] = c;
    }
    candidates = std::move(unique);
  }

  const auto n = std::min<std::size_t>(static_cast<std::size_t>(k), candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(n),
                    candidates.end(), ranks_before);
  candidates.resize(n);
  for (std::size_t i = 0; i < n; ++i) candidates[i].rank = static_cast<int>(i + 1);
  return candidates;
}

std::string serialize(const EmbeddingIndex& index) {
  io::Writer w;
  w.raw(kIndexMagic);
  w.u32(static_cast<std::uint32_t>(index.dim()));
  w.u32(static_cast<std::uint32_t>(index.size()));
  for (const auto& e : index.entries()) {
    w.str(e.image_id);
    w.str(e.product_id);
    w.str(e.category);
    w.f32s(e.vector);
  }
  w.raw(std::string_view(reinterpret_cast<const char*>(index.fingerprint().data()),
                         index.fingerprint().size()));
  return w.take();
}

EmbeddingIndex deserialize_index(std::string_view bytes) {
  io::Reader r(bytes);
  r.expect_magic(kIndexMagic, "index");
  const auto dim = static_cast<int>(r.u32());
  const auto count = r.u32();
  require(dim >= 1 && dim <= 65536, ErrorCode::kFormat, "index: bad dimension");
  std::vector<IndexEntry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    IndexEntry e;
    e.image_id = r.str();
    e.product_id = r.str();
    e.category = r.str();
    e.vector.resize(dim);
    r.f32s(e.vector);
    entries.push_back(std::move(e));
  }
  io::Digest fp;
  const auto raw = r.raw(fp.size());
  std::copy(raw.begin(), raw.end(), reinterpret_cast<char*>(fp.data()));
  require(r.done(), ErrorCode::kFormat, "index: trailing bytes");
  EmbeddingIndex index(dim, fp);
  for (auto& e : entries) {
    try {
      index.add(std::move(e));
    } catch (const Error& err) {
      fail(ErrorCode::kFormat, std::string("index: ") + err.what());
    }
  }
  return index;
}

void save_index(const EmbeddingIndex& index, const std::filesystem::path& path) {
  io::write_file(path, serialize(index));
}

EmbeddingIndex load_index(const std::filesystem::path& path) {
  return deserialize_index(io::read_file(path));
}

}  // namespace streetshop::index
