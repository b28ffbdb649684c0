#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "streetshop/data.hpp"
#include "streetshop/random.hpp"
#include "streetshop/tensor.hpp"

namespace streetshop::testing {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const noexcept { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

/// A miniature trained system, built once per test process: synthetic paired
/// data, an ingested catalog, a few GAN steps, a briefly trained embedder and
/// an index over the catalog.
struct World {
  fs::path root;
  fs::path paired_manifest;
  fs::path catalog_manifest;
  fs::path train_manifest;
  fs::path test_manifest;
  fs::path gan_checkpoint;
  fs::path embedder_checkpoint;
  fs::path index;
  fs::path service_config;
  data::DatasetManifest paired;
  data::IngestResult shop;
  /// Street photos of the paired set, in manifest order.
  std::vector<fs::path> street_photos;
};

const World& world();

/// N x 3 x size x size tensor, uniform in [-1, 1].
Tensor random_images(Rng& rng, int n, int size = 64);
/// Uniform random vector scaled to unit length.
std::vector<float> random_unit(Rng& rng, int dim);

/// Path of the command line tool under test.
fs::path tool_path();

}  // namespace streetshop::testing
