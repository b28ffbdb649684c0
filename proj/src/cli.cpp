#include "streetshop/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "streetshop/binary_io.hpp"
#include "streetshop/data.hpp"
#include "streetshop/eval.hpp"
#include "streetshop/gan.hpp"
#include "streetshop/image.hpp"
#include "streetshop/index.hpp"
#include "streetshop/matcher.hpp"
#include "streetshop/pipeline.hpp"
#include "streetshop/service.hpp"

namespace streetshop::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::atomic<int> g_signal{0};

extern "C" void on_signal(int sig) { g_signal.store(sig); }

json read_json(const fs::path& path) {
  try {
    return json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kArgument, path.string() + ": " + e.what());
  }
}

std::string score_text(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

json matches_json(const std::vector<index::RankedMatch>& matches) {
  json rows = json::array();
  for (const auto& m : matches)
    rows.push_back({{"rank", m.rank},
                    {"product_id", m.product_id},
                    {"image_id", m.image_id},
                    {"category", m.category},
                    {"score", m.score}});
  return rows;
}

fs::path sibling(const fs::path& p, const std::string& suffix) {
  return p.parent_path() / (p.filename().string() + suffix);
}

struct Common {
  bool json = false;
};

}  // namespace

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kArgument:
    case ErrorCode::kManifestFormat:
    case ErrorCode::kValidation:
    case ErrorCode::kStratification:
    case ErrorCode::kSampling:
    case ErrorCode::kFormat:
    case ErrorCode::kCheckpointMismatch:
    case ErrorCode::kFingerprintMismatch:
    case ErrorCode::kDecode:
    case ErrorCode::kNotFound:
    case ErrorCode::kPayloadTooLarge: return kExitUsage;
    default: return kExitRuntime;
  }
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Street photo to shop product search", "streetshop"};
  app.require_subcommand(1);
  Common common;
  app.add_flag("--json", common.json, "Machine-readable JSON output");

  auto with_json = [&](CLI::App* sub) { sub->add_flag("--json", common.json, "Machine-readable JSON output"); };

  // synth
  auto* synth = app.add_subcommand("synth", "Render a synthetic paired dataset");
  fs::path synth_out;
  int synth_products = 25;
  std::uint64_t seed = 0;
  data::SyntheticOptions synth_options;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--products", synth_products, "Number of garments")->capture_default_str();
  synth->add_option("--street-per-product", synth_options.street_per_product, "Street renderings per garment")
      ->capture_default_str();
  synth->add_option("--seed", seed, "Random seed")->capture_default_str();
  with_json(synth);

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Validate a manifest and build the augmented catalog");
  fs::path manifest_path, out_path;
  int augment = 8;
  double train_fraction = 0.8;
  ingest->add_option("--manifest", manifest_path, "Input manifest")->required()->check(CLI::ExistingFile);
  ingest->add_option("--out", out_path, "Output directory")->required();
  ingest->add_option("--augment", augment, "Images per product, original included")->capture_default_str();
  ingest->add_option("--train-fraction", train_fraction, "Per-category train fraction")->capture_default_str();
  ingest->add_option("--seed", seed, "Random seed")->capture_default_str();
  with_json(ingest);

  // train-gan
  auto* train_gan = app.add_subcommand("train-gan", "Train the garment converter and discriminators");
  fs::path config_path, history_path;
  std::optional<int> steps, epochs;
  std::optional<std::uint64_t> seed_override;
  train_gan->add_option("--manifest", manifest_path, "Paired manifest")->required()->check(CLI::ExistingFile);
  train_gan->add_option("--config", config_path, "JSON training config")->check(CLI::ExistingFile);
  train_gan->add_option("--out", out_path, "Checkpoint file")->required();
  train_gan->add_option("--history", history_path, "Loss CSV (default: <out>.losses.csv)");
  train_gan->add_option("--steps", steps, "Override the configured step count");
  train_gan->add_option("--seed", seed_override, "Override the configured seed");
  with_json(train_gan);

  // train-matcher
  auto* train_matcher = app.add_subcommand("train-matcher", "Fine-tune the embedder");
  train_matcher->add_option("--manifest", manifest_path, "Shopping manifest (train split)")
      ->required()
      ->check(CLI::ExistingFile);
  train_matcher->add_option("--config", config_path, "JSON training config")->check(CLI::ExistingFile);
  train_matcher->add_option("--out", out_path, "Checkpoint file")->required();
  train_matcher->add_option("--history", history_path, "Loss CSV (default: <out>.losses.csv)");
  train_matcher->add_option("--epochs", epochs, "Override the configured epoch count");
  train_matcher->add_option("--seed", seed_override, "Override the configured seed");
  with_json(train_matcher);

  // generate
  auto* generate = app.add_subcommand("generate", "Extract the garment from a street photo");
  fs::path photo_path, checkpoint_path, gan_path, index_path;
  generate->add_option("--photo", photo_path, "Street photo")->required()->check(CLI::ExistingFile);
  generate->add_option("--checkpoint", checkpoint_path, "Converter checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  generate->add_option("--out", out_path, "Output PNG")->required();
  with_json(generate);

  // build-index
  auto* build_index = app.add_subcommand("build-index", "Embed a shopping catalog");
  build_index->add_option("--manifest", manifest_path, "Shopping manifest")->required()->check(CLI::ExistingFile);
  build_index->add_option("--checkpoint", checkpoint_path, "Embedder checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  build_index->add_option("--out", out_path, "Index file")->required();
  with_json(build_index);

  // query
  auto* query = app.add_subcommand("query", "Rank catalog products for a photo");
  int k = 10;
  bool no_dedupe = false;
  query->add_option("--photo", photo_path, "Street photo")->required()->check(CLI::ExistingFile);
  query->add_option("--checkpoint", checkpoint_path, "Embedder checkpoint")->required()->check(CLI::ExistingFile);
  query->add_option("--gan", gan_path, "Converter checkpoint; without it the photo is embedded as is")
      ->check(CLI::ExistingFile);
  query->add_option("--index", index_path, "Index file")->required()->check(CLI::ExistingFile);
  query->add_option("--k", k, "Number of results")->capture_default_str()->check(CLI::Range(1, 1000000));
  query->add_flag("--no-dedupe", no_dedupe, "Rank images instead of products");
  with_json(query);

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "precision@k over held-out queries");
  bool allow_mismatch = false;
  std::string format = "table";
  int k_max = 15;
  evaluate->add_option("--manifest", manifest_path, "Test manifest (shopping or paired)")
      ->required()
      ->check(CLI::ExistingFile);
  evaluate->add_option("--checkpoint", checkpoint_path, "Embedder checkpoint")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--gan", gan_path, "Converter checkpoint applied to each query first")
      ->check(CLI::ExistingFile);
  evaluate->add_option("--index", index_path, "Index file")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--k", k_max, "Report k = 1..K")->capture_default_str()->check(CLI::Range(1, 1000));
  evaluate->add_option("--out", out_path, "Per-query JSONL records");
  evaluate->add_option("--format", format, "table or rows")->check(CLI::IsMember({"table", "rows"}));
  evaluate->add_flag("--allow-fingerprint-mismatch", allow_mismatch, "Evaluate against a foreign index");
  evaluate->add_flag("--no-dedupe", no_dedupe, "Rank images instead of products");
  with_json(evaluate);

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP query service");
  std::optional<int> port;
  serve->add_option("--config", config_path, "Service JSON config")->required()->check(CLI::ExistingFile);
  serve->add_option("--port", port, "Override the configured port");
  with_json(serve);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  auto emit = [&](const json& j, const std::string& text) {
    if (common.json)
      out << j.dump() << "\n";
    else
      out << text;
  };
  auto warn = [&](const std::string& message) { err << "warning: " << message << "\n"; };

  try {
    if (*synth) {
      require(synth_products >= 1, ErrorCode::kArgument, "--products must be >= 1");
      const auto m = data::generate_synthetic_paired_dataset(synth_products, seed, synth_out, synth_options);
      const fs::path manifest = synth_out / "paired.tsv";
      emit({{"manifest", manifest.string()},
            {"products", m.products().size()},
            {"street_images", m.pairs().size()},
            {"images", m.image_count()}},
           "wrote " + manifest.string() + ": " + std::to_string(m.products().size()) + " products, " +
               std::to_string(m.pairs().size()) + " street images\n");
    } else if (*ingest) {
      const auto m = data::load_manifest(manifest_path);
      const auto r = data::ingest(m, out_path, augment, seed, train_fraction);
      emit({{"products", r.catalog.products().size()},
            {"images", r.catalog.image_count()},
            {"train_products", r.train.products().size()},
            {"test_products", r.test.products().size()},
            {"catalog", (out_path / "catalog.tsv").string()},
            {"train", (out_path / "train.tsv").string()},
            {"test", (out_path / "test.tsv").string()}},
           std::to_string(r.catalog.products().size()) + " products, " +
               std::to_string(r.catalog.image_count()) + " images (" +
               std::to_string(r.train.products().size()) + " train / " +
               std::to_string(r.test.products().size()) + " test products)\n");
    } else if (*train_gan) {
      auto config = config_path.empty() ? gan::GanTrainConfig{} : gan::GanTrainConfig::from_json(read_json(config_path));
      if (steps) config.steps = *steps;
      if (seed_override) config.seed = *seed_override;
      config.validate();
      if (config.steps == 0) warn("steps = 0: writing the initialized model");
      const auto manifest = data::load_manifest(manifest_path);
      const auto ckpt = gan::train_gan(manifest, config);
      gan::save(ckpt, out_path);
      const fs::path csv = history_path.empty() ? sibling(out_path, ".losses.csv") : history_path;
      io::write_file(csv, gan::history_csv(ckpt));
      json j = {{"checkpoint", out_path.string()}, {"history", csv.string()}, {"steps", ckpt.steps}};
      if (!ckpt.history.empty()) {
        const auto& last = ckpt.history.back();
        j["last"] = {{"loss_r", last.loss_r}, {"loss_a", last.loss_a}, {"loss_c", last.loss_c}};
      }
      emit(j, "wrote " + out_path.string() + " after " + std::to_string(ckpt.steps) + " steps\n");
    } else if (*train_matcher) {
      auto config = config_path.empty() ? matcher::MatcherTrainConfig{}
                                        : matcher::MatcherTrainConfig::from_json(read_json(config_path));
      if (epochs) config.epochs = *epochs;
      if (seed_override) config.seed = *seed_override;
      config.validate();
      if (config.epochs == 0) warn("epochs = 0: writing the initialized model");
      const auto manifest = data::load_manifest(manifest_path);
      const auto ckpt = matcher::fine_tune(manifest, config);
      matcher::save(ckpt, out_path);
      const fs::path csv = history_path.empty() ? sibling(out_path, ".losses.csv") : history_path;
      io::write_file(csv, matcher::history_csv(ckpt));
      json j = {{"checkpoint", out_path.string()},
                {"history", csv.string()},
                {"epochs", ckpt.epochs},
                {"steps", ckpt.history.size()},
                {"fingerprint", io::to_hex(matcher::fingerprint(ckpt))}};
      emit(j, "wrote " + out_path.string() + " after " + std::to_string(ckpt.epochs) + " epochs\n");
    } else if (*generate) {
      const auto ckpt = gan::load_gan(checkpoint_path);
      const auto garment = gan::generate_garment(load_image(photo_path), ckpt.model);
      save_png(tensor_to_image(garment, 0), out_path);
      emit({{"out", out_path.string()}, {"width", gan::kImageSize}, {"height", gan::kImageSize}},
           "wrote " + out_path.string() + "\n");
    } else if (*build_index) {
      const auto manifest = data::load_manifest(manifest_path);
      const auto ckpt = matcher::load_embedder(checkpoint_path);
      const auto idx = index::build_index(manifest, ckpt);
      if (idx.empty()) warn("catalog is empty; queries against this index will fail");
      index::save_index(idx, out_path);
      emit({{"index", out_path.string()},
            {"entries", idx.size()},
            {"products", idx.product_ids().size()},
            {"fingerprint", io::to_hex(idx.fingerprint())}},
           "wrote " + out_path.string() + ": " + std::to_string(idx.size()) + " entries\n");
    } else if (*query) {
      const auto pipe = Pipeline::load({gan_path, checkpoint_path, index_path, {}});
      if (!pipe->fingerprint_matches()) warn("index was built by a different embedder checkpoint");
      const auto result = pipe->run(load_image(photo_path), k, !no_dedupe);
      std::string text;
      for (const auto& m : result.matches)
        text += std::to_string(m.rank) + "\t" + m.product_id + "\t" + m.category + "\t" + score_text(m.score) + "\n";
      emit({{"k", result.matches.size()}, {"matches", matches_json(result.matches)}}, text);
    } else if (*evaluate) {
      const auto manifest = data::load_manifest(manifest_path);
      const auto ckpt = matcher::load_embedder(checkpoint_path);
      const auto idx = index::load_index(index_path);
      eval::EvalOptions options;
      options.ks.clear();
      for (int i = 1; i <= k_max; ++i) options.ks.push_back(i);
      options.allow_fingerprint_mismatch = allow_mismatch;
      options.dedupe_products = !no_dedupe;
      eval::QueryTransform transform;
      std::optional<gan::GanCheckpoint> converter;
      if (!gan_path.empty()) {
        converter = gan::load_gan(gan_path);
        transform = [&](const cv::Mat& photo) {
          return tensor_to_image(gan::generate_garment(photo, converter->model), 0);
        };
      }
      if (allow_mismatch && idx.fingerprint() != matcher::fingerprint(ckpt))
        warn("index was built by a different embedder checkpoint");
      const auto report = eval::evaluate(idx, manifest, ckpt, transform, options);
      if (!out_path.empty()) io::write_file(out_path, eval::format_jsonl(report));
      if (report.truncated_queries)
        warn(std::to_string(report.truncated_queries) + " queries had fewer than k results");
      emit(eval::to_json(report), format == "rows" ? eval::format_rows(report) : eval::format_table(report));
    } else if (*serve) {
      auto config = service::load_service_config(config_path);
      if (port) config.port = *port;
      service::Service svc(config);
      if (svc.health()["status"] == "degraded") warn("index was built by a different embedder checkpoint");
      g_signal.store(0);
      auto prev_int = std::signal(SIGINT, on_signal);
      auto prev_term = std::signal(SIGTERM, on_signal);
      auto prev_hup = std::signal(SIGHUP, on_signal);
      std::atomic<bool> done{false};
      std::thread watcher([&] {
        while (!done.load()) {
          const int sig = g_signal.exchange(0);
          if (sig == SIGHUP) {
            try {
              svc.reload();
              err << "reloaded checkpoints and index\n";
            } catch (const Error& e) {
              err << "warning: reload failed: " << e.what() << "\n";
            }
          } else if (sig != 0) {
            svc.stop();
          }
          std::this_thread::sleep_for(std::chrono::milliseconds(50));
        }
      });
      err << "listening on " << config.host << ":" << config.port << "\n";
      const bool ok = svc.listen();
      done.store(true);
      watcher.join();
      std::signal(SIGINT, prev_int);
      std::signal(SIGTERM, prev_term);
      std::signal(SIGHUP, prev_hup);
      if (!ok) {
        err << "error: cannot listen on " << config.host << ":" << config.port << "\n";
        return kExitRuntime;
      }
    }
  } catch (const Error& e) {
    err << "error: " << error_code_name(e.code()) << ": " << e.what() << "\n";
    for (const auto& id : e.ids()) err << "  " << id << "\n";
    if (common.json)
      err << json{{"code", error_code_name(e.code())}, {"message", e.what()}, {"ids", e.ids()}}.dump() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace streetshop::cli
