#include "support.hpp"

#include <cmath>
#include <mutex>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "streetshop/binary_io.hpp"
#include "streetshop/gan.hpp"
#include "streetshop/index.hpp"
#include "streetshop/matcher.hpp"

namespace streetshop::testing {

TempDir::TempDir(const std::string& tag) {
  static int counter = 0;
  path_ = fs::temp_directory_path() /
          ("streetshop-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

namespace {

World build_world() {
  static TempDir dir("world");
  World w;
  w.root = dir.path();

  data::SyntheticOptions synth;
  synth.street_per_product = 2;
  w.paired = data::generate_synthetic_paired_dataset(10, 7, w.root / "paired", synth);
  w.paired_manifest = w.root / "paired" / "paired.tsv";
  for (const auto& pair : w.paired.pairs()) w.street_photos.push_back(pair.source_image);

  w.shop = data::ingest(w.paired, w.root / "shop", 3, 7, 0.5);
  w.catalog_manifest = w.root / "shop" / "catalog.tsv";
  w.train_manifest = w.root / "shop" / "train.tsv";
  w.test_manifest = w.root / "shop" / "test.tsv";

  gan::GanTrainConfig gan_config;
  gan_config.arch.width = 4;
  gan_config.steps = 3;
  gan_config.batch_size = 4;
  gan_config.seed = 7;
  w.gan_checkpoint = w.root / "gan.ckpt";
  gan::save(gan::train_gan(w.paired, gan_config), w.gan_checkpoint);

  matcher::MatcherTrainConfig matcher_config;
  matcher_config.spec.width = 4;
  matcher_config.epochs = 2;
  matcher_config.batch_size = 8;
  matcher_config.learning_rate = 2e-3f;
  matcher_config.seed = 7;
  const auto embedder = matcher::fine_tune(w.shop.catalog, matcher_config);
  w.embedder_checkpoint = w.root / "embedder.ckpt";
  matcher::save(embedder, w.embedder_checkpoint);

  w.index = w.root / "catalog.idx";
  index::save_index(index::build_index(w.shop.catalog, embedder), w.index);

  w.service_config = w.root / "service.json";
  io::write_file(w.service_config, nlohmann::json{{"host", "127.0.0.1"},
                                                  {"port", 0},
                                                  {"gan_checkpoint", "gan.ckpt"},
                                                  {"embedder_checkpoint", "embedder.ckpt"},
                                                  {"index", "catalog.idx"},
                                                  {"catalog", "shop/catalog.tsv"},
                                                  {"spool_dir", "spool"},
                                                  {"threads", 4}}
                                           .dump(2));
  return w;
}

}  // namespace

const World& world() {
  static std::once_flag once;
  static World w;
  std::call_once(once, [] { w = build_world(); });
  return w;
}

Tensor random_images(Rng& rng, int n, int size) {
  Tensor t(n, 3, size, size);
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

std::vector<float> random_unit(Rng& rng, int dim) {
  std::vector<float> v(dim);
  double norm = 0;
  for (auto& x : v) {
    x = static_cast<float>(rng.normal());
    norm += static_cast<double>(x) * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x = static_cast<float>(x / norm);
  return v;
}

fs::path tool_path() { return STREETSHOP_TOOL_PATH; }

}  // namespace streetshop::testing
