#include "streetshop/pipeline.hpp"

#include "streetshop/error.hpp"
#include "streetshop/image.hpp"

namespace streetshop {

Pipeline::Pipeline(std::optional<gan::GanCheckpoint> gan, matcher::EmbedderCheckpoint embedder,
                   index::EmbeddingIndex index, std::optional<data::DatasetManifest> catalog)
    : gan_(std::move(gan)), embedder_(std::move(embedder)), index_(std::move(index)) {
  embedder_fp_ = matcher::fingerprint(embedder_);
  if (gan_) gan_fp_hex_ = io::to_hex(io::sha256(gan::serialize(*gan_)));
  for (const auto& e : index_.entries()) products_.try_emplace(e.product_id, Product{e.category, {}});
  if (catalog) {
    for (auto& rec : catalog->products()) {
      auto it = products_.find(rec.product_id);
      if (it != products_.end()) it->second.image_paths = std::move(rec.image_paths);
    }
  }
}

std::shared_ptr<const Pipeline> Pipeline::load(const PipelinePaths& paths) {
  std::optional<gan::GanCheckpoint> gan;
  if (!paths.gan_checkpoint.empty()) gan = gan::load_gan(paths.gan_checkpoint);
  auto embedder = matcher::load_embedder(paths.embedder_checkpoint);
  auto index = index::load_index(paths.index);
  std::optional<data::DatasetManifest> catalog;
  if (!paths.catalog.empty()) catalog = data::load_manifest(paths.catalog);
  return std::make_shared<const Pipeline>(std::move(gan), std::move(embedder), std::move(index),
                                          std::move(catalog));
}

PipelineResult Pipeline::run(const cv::Mat& photo, int k, bool dedupe_products) const {
  PipelineResult result;
  std::vector<float> q;
  if (gan_) {
    result.garment = gan::generate_garment(photo, gan_->model);
    q = embedder_.embedder.embed_image(tensor_to_image(*result.garment, 0));
  } else {
    q = embedder_.embedder.embed_image(photo);
  }
  result.matches = index::query(index_, q, k, {dedupe_products});
  return result;
}

PipelineResult Pipeline::run_bytes(std::string_view photo_bytes, int k, bool dedupe_products) const {
  return run(decode_image(photo_bytes), k, dedupe_products);
}

const Pipeline::Product* Pipeline::product(std::string_view product_id) const {
  const auto it = products_.find(product_id);
  return it == products_.end() ? nullptr : &it->second;
}

}  // namespace streetshop
