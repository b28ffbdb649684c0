#include "streetshop/service.hpp"

#include <atomic>
#include <cctype>
#include <cstdlib>
#include <list>
#include <mutex>
#include <random>
#include <unordered_map>

#include <httplib.h>

#include "streetshop/binary_io.hpp"
#include "streetshop/image.hpp"

namespace streetshop::service {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kMaxK = 50;

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

std::string error_body(std::string_view code, std::string_view message) {
  return json{{"code", code}, {"message", message}}.dump();
}

void send_error(httplib::Response& res, const Error& e) {
  res.status = http_status(e.code());
  res.set_content(error_body(error_code_name(e.code()), e.what()), "application/json");
}

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

bool valid_query_id(std::string_view id) {
  if (id.size() != 16) return false;
  for (char c : id)
    if (!std::isxdigit(static_cast<unsigned char>(c))) return false;
  return true;
}

}  // namespace

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kArgument:
    case ErrorCode::kDecode:
    case ErrorCode::kShape: return 400;
    case ErrorCode::kNotFound: return 404;
    case ErrorCode::kPayloadTooLarge: return 413;
    case ErrorCode::kValidation: return 422;
    default: return 500;
  }
}

// ---------------------------------------------------------------- config

json ServiceConfig::to_json() const {
  return {{"host", host},
          {"port", port},
          {"gan_checkpoint", gan_checkpoint.string()},
          {"embedder_checkpoint", embedder_checkpoint.string()},
          {"index", index.string()},
          {"catalog", catalog.string()},
          {"spool_dir", spool_dir.string()},
          {"default_k", default_k},
          {"max_upload_bytes", max_upload_bytes},
          {"session_capacity", session_capacity},
          {"spool_ttl_seconds", spool_ttl_seconds},
          {"threads", threads},
          {"dedupe_products", dedupe_products}};
}

ServiceConfig ServiceConfig::from_json(const json& j, const fs::path& base_dir) {
  ServiceConfig c;
  require(j.is_object(), ErrorCode::kArgument, "service config must be a JSON object");
  const json defaults = c.to_json();
  for (const auto& [key, value] : j.items())
    require(defaults.contains(key), ErrorCode::kArgument, "unknown service config key '" + key + "'");
  try {
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    c.gan_checkpoint = resolve(base_dir, j.value("gan_checkpoint", std::string()));
    c.embedder_checkpoint = resolve(base_dir, j.value("embedder_checkpoint", std::string()));
    c.index = resolve(base_dir, j.value("index", std::string()));
    c.catalog = resolve(base_dir, j.value("catalog", std::string()));
    c.spool_dir = resolve(base_dir, j.value("spool_dir", std::string()));
    c.default_k = j.value("default_k", c.default_k);
    c.max_upload_bytes = j.value("max_upload_bytes", c.max_upload_bytes);
    c.session_capacity = j.value("session_capacity", c.session_capacity);
    c.spool_ttl_seconds = j.value("spool_ttl_seconds", c.spool_ttl_seconds);
    c.threads = j.value("threads", c.threads);
    c.dedupe_products = j.value("dedupe_products", c.dedupe_products);
  } catch (const json::exception& e) {
    fail(ErrorCode::kArgument, std::string("invalid service config: ") + e.what());
  }
  if (c.spool_dir.empty()) c.spool_dir = fs::temp_directory_path() / "streetshop-spool";
  return c;
}

void ServiceConfig::validate() const {
  require(port >= 0 && port <= 65535, ErrorCode::kArgument, "port out of range");
  require(default_k >= 1 && default_k <= kMaxK, ErrorCode::kArgument, "default_k must be in [1, 50]");
  require(max_upload_bytes >= 1, ErrorCode::kArgument, "max_upload_bytes must be positive");
  require(session_capacity >= 1, ErrorCode::kArgument, "session_capacity must be positive");
  require(spool_ttl_seconds >= 1, ErrorCode::kArgument, "spool_ttl_seconds must be positive");
  require(threads >= 1, ErrorCode::kArgument, "threads must be positive");
  std::vector<std::string> missing;
  for (const auto& [name, path] : {std::pair{"gan_checkpoint", &gan_checkpoint},
                                   std::pair{"embedder_checkpoint", &embedder_checkpoint},
                                   std::pair{"index", &index}, std::pair{"catalog", &catalog}}) {
    if (path->empty() || !fs::exists(*path)) missing.push_back(name);
  }
  if (!missing.empty()) {
    std::string names;
    for (const auto& m : missing) names += (names.empty() ? "" : ", ") + m;
    throw Error(ErrorCode::kArgument, "service config: missing or nonexistent " + names, missing);
  }
}

json apply_env_overrides(json j, std::string_view prefix) {
  const json defaults = ServiceConfig{}.to_json();
  for (const auto& [key, def] : defaults.items()) {
    std::string name(prefix);
    for (char ch : key) name += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    const char* raw = std::getenv(name.c_str());
    if (!raw) continue;
    const std::string v(raw);
    try {
      if (def.is_boolean()) {
        require(v == "1" || v == "0" || v == "true" || v == "false", ErrorCode::kArgument,
                name + " must be true/false");
        j[key] = v == "1" || v == "true";
      } else if (def.is_number_integer()) {
        std::size_t used = 0;
        const long long n = std::stoll(v, &used);
        require(used == v.size(), ErrorCode::kArgument, name + " must be an integer");
        j[key] = n;
      } else {
        j[key] = v;
      }
    } catch (const std::logic_error&) {
      fail(ErrorCode::kArgument, name + " must be an integer");
    }
  }
  return j;
}

ServiceConfig load_service_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kArgument, path.string() + ": " + e.what());
  }
  return ServiceConfig::from_json(apply_env_overrides(std::move(j)), path.parent_path());
}

// --------------------------------------------------------------- service

struct Service::Impl {
  mutable std::mutex pipeline_mu;
  std::shared_ptr<const Pipeline> pipeline;

  mutable std::mutex sessions_mu;
  std::list<QuerySession> sessions;  // most recent first
  std::unordered_map<std::string, std::list<QuerySession>::iterator> by_id;
  std::chrono::steady_clock::time_point last_sweep;

  std::atomic<std::uint64_t> counter{0};
  std::uint64_t salt = 0;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  httplib::Server server;
};

Service::Service(ServiceConfig config) : config_(std::move(config)), impl_(std::make_unique<Impl>()) {
  config_.validate();
  impl_->pipeline = Pipeline::load({config_.gan_checkpoint, config_.embedder_checkpoint, config_.index,
                                    config_.catalog});
  fs::create_directories(config_.spool_dir);
  impl_->salt = std::random_device{}() ^ static_cast<std::uint64_t>(
                                             std::chrono::system_clock::now().time_since_epoch().count());

  auto& srv = impl_->server;
  const int threads = config_.threads;
  srv.new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
  // leave room for multipart framing; the photo itself is checked below
  srv.set_payload_max_length(static_cast<std::size_t>(config_.max_upload_bytes) + 64 * 1024);

  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
    const std::string code = res.status == 404   ? "not_found"
                             : res.status == 413 ? "payload_too_large"
                                                 : "http_" + std::to_string(res.status);
    res.set_content(error_body(code, httplib::status_message(res.status)), "application/json");
    return httplib::Server::HandlerResponse::Handled;
  });
  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const Error& e) {
      send_error(res, e);
    } catch (const std::exception& e) {
      res.status = 500;
      res.set_content(error_body("internal", e.what()), "application/json");
    }
  });

  srv.Post("/api/query", [this](const httplib::Request& req, httplib::Response& res) {
    require(req.is_multipart_form_data() && req.has_file("photo"), ErrorCode::kArgument,
            "expected multipart/form-data with a 'photo' field");
    std::optional<int> k;
    if (req.has_param("k")) {
      const auto raw = req.get_param_value("k");
      std::size_t used = 0;
      int parsed = 0;
      try {
        parsed = std::stoi(raw, &used);
      } catch (const std::logic_error&) {
        used = 0;
      }
      require(used == raw.size() && !raw.empty(), ErrorCode::kValidation, "k must be an integer");
      k = parsed;
    }
    const auto session = handle_query(req.get_file_value("photo").content, k);
    res.set_content(session_json(session).dump(), "application/json");
  });

  srv.Get(R"(/api/query/([^/]+)/garment\.png)", [this](const httplib::Request& req, httplib::Response& res) {
    const auto png = garment_png(req.matches[1].str());
    require(png.has_value(), ErrorCode::kNotFound, "unknown or expired query '" + req.matches[1].str() + "'");
    res.set_content(*png, "image/png");
  });

  srv.Get(R"(/api/products/([^/]+)/image\.png)", [this](const httplib::Request& req, httplib::Response& res) {
    res.set_content(product_image_png(req.matches[1].str()), "image/png");
    res.set_header("Cache-Control", "public, max-age=31536000, immutable");
  });

  srv.Get(R"(/api/products/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    const auto info = get_product(req.matches[1].str());
    const json body = {{"product_id", info.product_id},
                       {"category", info.category},
                       {"image_count", info.image_count},
                       {"image_url", "/api/products/" + info.product_id + "/image.png"}};
    res.set_content(body.dump(), "application/json");
    res.set_header("Cache-Control", "public, max-age=31536000, immutable");
  });

  srv.Get("/api/health", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(health().dump(), "application/json");
  });
}

Service::~Service() { stop(); }

std::shared_ptr<const Pipeline> Service::pipeline() const {
  std::lock_guard lock(impl_->pipeline_mu);
  return impl_->pipeline;
}

void Service::reload() {
  auto fresh = Pipeline::load({config_.gan_checkpoint, config_.embedder_checkpoint, config_.index,
                               config_.catalog});
  std::lock_guard lock(impl_->pipeline_mu);
  impl_->pipeline = std::move(fresh);
}

QuerySession Service::handle_query(std::string_view photo_bytes, std::optional<int> k) {
  require(static_cast<std::int64_t>(photo_bytes.size()) <= config_.max_upload_bytes,
          ErrorCode::kPayloadTooLarge,
          "photo exceeds " + std::to_string(config_.max_upload_bytes) + " bytes");
  const int kk = k.value_or(config_.default_k);
  require(kk >= 1 && kk <= kMaxK, ErrorCode::kValidation, "k must be between 1 and 50");
  const auto pipe = pipeline();
  const auto result = pipe->run_bytes(photo_bytes, kk, config_.dedupe_products);

  QuerySession session;
  char id[17];
  std::snprintf(id, sizeof id, "%016llx",
                static_cast<unsigned long long>(mix(impl_->salt + impl_->counter.fetch_add(1))));
  session.query_id = id;
  session.photo_sha256 = io::to_hex(io::sha256(photo_bytes));
  session.matches = result.matches;
  session.created = std::chrono::system_clock::now();
  if (result.garment) {
    session.garment_png = config_.spool_dir / (session.query_id + ".png");
    io::write_file(session.garment_png, encode_png(tensor_to_image(*result.garment, 0)));
  }

  std::vector<fs::path> expired;
  {
    std::lock_guard lock(impl_->sessions_mu);
    impl_->sessions.push_front(session);
    impl_->by_id[session.query_id] = impl_->sessions.begin();
    while (static_cast<int>(impl_->sessions.size()) > config_.session_capacity) {
      expired.push_back(impl_->sessions.back().garment_png);
      impl_->by_id.erase(impl_->sessions.back().query_id);
      impl_->sessions.pop_back();
    }
    const auto now = std::chrono::steady_clock::now();
    if (now - impl_->last_sweep > std::chrono::seconds(60)) {
      impl_->last_sweep = now;
      const auto cutoff = fs::file_time_type::clock::now() - std::chrono::seconds(config_.spool_ttl_seconds);
      std::error_code ec;
      for (const auto& entry : fs::directory_iterator(config_.spool_dir, ec)) {
        const auto stem = entry.path().stem().string();
        if (entry.path().extension() == ".png" && valid_query_id(stem) &&
            entry.last_write_time(ec) < cutoff && !impl_->by_id.count(stem))
          expired.push_back(entry.path());
      }
    }
  }
  for (const auto& p : expired) {
    std::error_code ec;
    if (!p.empty()) fs::remove(p, ec);
  }
  return session;
}

std::optional<std::string> Service::garment_png(std::string_view query_id) const {
  if (!valid_query_id(query_id)) return std::nullopt;
  fs::path path;
  {
    std::lock_guard lock(impl_->sessions_mu);
    const auto it = impl_->by_id.find(std::string(query_id));
    if (it == impl_->by_id.end()) return std::nullopt;
    if (std::chrono::system_clock::now() - it->second->created >
        std::chrono::seconds(config_.spool_ttl_seconds))
      return std::nullopt;
    path = it->second->garment_png;
  }
  if (path.empty()) return std::nullopt;
  try {
    return io::read_file(path);
  } catch (const Error&) {
    return std::nullopt;
  }
}

ProductInfo Service::get_product(std::string_view product_id) const {
  const auto pipe = pipeline();
  const auto* p = pipe->product(product_id);
  require(p != nullptr, ErrorCode::kNotFound, "unknown product '" + std::string(product_id) + "'");
  return {std::string(product_id), p->category, p->image_paths.size()};
}

std::string Service::product_image_png(std::string_view product_id) const {
  const auto pipe = pipeline();
  const auto* p = pipe->product(product_id);
  require(p != nullptr, ErrorCode::kNotFound, "unknown product '" + std::string(product_id) + "'");
  require(!p->image_paths.empty(), ErrorCode::kNotFound,
          "no image for product '" + std::string(product_id) + "'");
  return encode_png(load_image(p->image_paths.front()));
}

json Service::health() const {
  const auto pipe = pipeline();
  std::size_t sessions;
  {
    std::lock_guard lock(impl_->sessions_mu);
    sessions = impl_->sessions.size();
  }
  const bool match = pipe->fingerprint_matches();
  const auto uptime = std::chrono::duration<double>(std::chrono::steady_clock::now() - impl_->started);
  return {{"status", match ? "ok" : "degraded"},
          {"uptime_seconds", uptime.count()},
          {"index_size", pipe->index().size()},
          {"product_count", pipe->product_count()},
          {"sessions", sessions},
          {"fingerprint_match", match},
          {"fingerprints",
           {{"gan", pipe->gan_fingerprint_hex()},
            {"embedder", io::to_hex(pipe->embedder_fingerprint())},
            {"index", io::to_hex(pipe->index().fingerprint())}}}};
}

json Service::session_json(const QuerySession& session) const {
  json matches = json::array();
  for (const auto& m : session.matches)
    matches.push_back({{"rank", m.rank},
                       {"product_id", m.product_id},
                       {"image_id", m.image_id},
                       {"category", m.category},
                       {"score", m.score},
                       {"product_url", "/api/products/" + m.product_id},
                       {"image_url", "/api/products/" + m.product_id + "/image.png"}});
  json body = {{"query_id", session.query_id}, {"k", session.matches.size()}, {"matches", matches}};
  if (!session.garment_png.empty())
    body["garment_url"] = "/api/query/" + session.query_id + "/garment.png";
  return body;
}

bool Service::listen() { return impl_->server.listen(config_.host, config_.port); }

int Service::bind_any_port() { return impl_->server.bind_to_any_port(config_.host); }

bool Service::listen_after_bind() { return impl_->server.listen_after_bind(); }

void Service::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

bool Service::running() const { return impl_->server.is_running(); }

}  // namespace streetshop::service
