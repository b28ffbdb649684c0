#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "streetshop/error.hpp"
#include "streetshop/index.hpp"
#include "streetshop/pipeline.hpp"

namespace streetshop::service {

inline constexpr std::string_view kEnvPrefix = "STREETSHOP_";

/// Every key can be overridden by an environment variable named
/// STREETSHOP_<KEY IN UPPER CASE>, e.g. STREETSHOP_PORT=9000.
struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path gan_checkpoint;
  std::filesystem::path embedder_checkpoint;
  std::filesystem::path index;
  std::filesystem::path catalog;
  std::filesystem::path spool_dir;
  int default_k = 10;
  std::int64_t max_upload_bytes = 10 * 1024 * 1024;
  int session_capacity = 256;
  int spool_ttl_seconds = 3600;
  int threads = 8;
  bool dedupe_products = true;

  nlohmann::json to_json() const;
  /// Relative paths resolve against `base_dir`.
  static ServiceConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  void validate() const;
};

/// Reads a JSON config file, then applies environment overrides.
ServiceConfig load_service_config(const std::filesystem::path& path);
/// Applies STREETSHOP_* overrides on top of `j`, keeping each key's type.
nlohmann::json apply_env_overrides(nlohmann::json j, std::string_view prefix = kEnvPrefix);

struct QuerySession {
  std::string query_id;
  std::string photo_sha256;
  std::filesystem::path garment_png;
  std::vector<index::RankedMatch> matches;
  std::chrono::system_clock::time_point created;
};

struct ProductInfo {
  std::string product_id;
  std::string category;
  std::size_t image_count = 0;
};

class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  const ServiceConfig& config() const noexcept { return config_; }

  /// Decodes the photo, runs the pipeline and remembers the session.
  QuerySession handle_query(std::string_view photo_bytes, std::optional<int> k);
  ProductInfo get_product(std::string_view product_id) const;
  /// PNG bytes of the product's first image.
  std::string product_image_png(std::string_view product_id) const;
  std::optional<std::string> garment_png(std::string_view query_id) const;
  nlohmann::json health() const;

  /// Loads checkpoints and index again and swaps them in atomically.
  void reload();

  /// Binds and serves until `stop()`. Returns false if binding failed.
  bool listen();
  /// Binds to an ephemeral port on `host`; returns the port, or -1.
  int bind_any_port();
  bool listen_after_bind();
  void stop();
  bool running() const;

  nlohmann::json session_json(const QuerySession& session) const;

 private:
  std::shared_ptr<const Pipeline> pipeline() const;

  struct Impl;
  ServiceConfig config_;
  std::unique_ptr<Impl> impl_;
};

/// HTTP status for an error code.
int http_status(ErrorCode code);

}  // namespace streetshop::service
