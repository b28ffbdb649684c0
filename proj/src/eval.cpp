#include "streetshop/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

#include "streetshop/error.hpp"
#include "streetshop/image.hpp"

namespace streetshop::eval {
namespace {

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

void check_label(std::string_view label, const std::vector<std::string>& categories) {
  require(std::find(categories.begin(), categories.end(), label) != categories.end(),
          ErrorCode::kArgument, "unknown category '" + std::string(label) + "'");
}

}  // namespace

int relevance(std::string_view query_category, std::string_view result_category,
              const std::vector<std::string>& categories) {
  check_label(query_category, categories);
  check_label(result_category, categories);
  return query_category == result_category ? 1 : 0;
}

double precision_at_k(std::span<const int> judgments, int k) {
  require(k >= 1, ErrorCode::kArgument, "k must be >= 1");
  require(judgments.size() >= static_cast<std::size_t>(k), ErrorCode::kArgument,
          "precision@" + std::to_string(k) + " needs at least k judgments, got " +
              std::to_string(judgments.size()));
  int hits = 0;
  for (int r = 0; r < k; ++r) {
    require(judgments[r] == 0 || judgments[r] == 1, ErrorCode::kArgument, "judgments must be 0 or 1");
    hits += judgments[r];
  }
  return static_cast<double>(hits) / k;
}

EvalReport evaluate_queries(const index::EmbeddingIndex& index, const std::vector<EvalQuery>& queries,
                            const std::vector<std::string>& categories, const EvalOptions& options) {
  require(!queries.empty(), ErrorCode::kArgument, "evaluation needs at least one query");
  require(!options.ks.empty(), ErrorCode::kArgument, "evaluation needs at least one k");
  for (int k : options.ks) require(k >= 1, ErrorCode::kArgument, "k must be >= 1");
  const int k_max = *std::max_element(options.ks.begin(), options.ks.end());

  EvalReport report;
  report.ks = options.ks;
  report.precision.assign(options.ks.size(), 0.0);
  for (const auto& q : queries) {
    QueryRecord rec;
    rec.query_id = q.query_id;
    rec.category = q.category;
    rec.matches = index::query(index, q.embedding, k_max, {options.dedupe_products});
    rec.available = static_cast<int>(rec.matches.size());
    for (const auto& m : rec.matches) rec.judgments.push_back(relevance(q.category, m.category, categories));
    for (std::size_t i = 0; i < options.ks.size(); ++i) {
      const int k = std::min(options.ks[i], rec.available);
      rec.truncated = rec.truncated || k < options.ks[i];
      rec.precision.push_back(precision_at_k(rec.judgments, k));
      report.precision[i] += rec.precision.back();
    }
    report.truncated_queries += rec.truncated;
    report.queries.push_back(std::move(rec));
  }
  for (auto& p : report.precision) p /= static_cast<double>(queries.size());
  return report;
}

EvalReport evaluate(const index::EmbeddingIndex& index, const data::DatasetManifest& test,
                    const matcher::EmbedderCheckpoint& checkpoint, const EvalOptions& options) {
  return evaluate(index, test, checkpoint, QueryTransform{}, options);
}

EvalReport evaluate(const index::EmbeddingIndex& index, const data::DatasetManifest& test,
                    const matcher::EmbedderCheckpoint& checkpoint, const QueryTransform& transform,
                    const EvalOptions& options) {
  if (!options.allow_fingerprint_mismatch)
    require(index.fingerprint() == matcher::fingerprint(checkpoint), ErrorCode::kFingerprintMismatch,
            "index was built by a different embedder checkpoint");
  std::vector<EvalQuery> queries;
  auto add = [&](std::string id, const std::string& category, const std::filesystem::path& path) {
    cv::Mat image = load_image(path);
    if (transform) image = transform(image);
    queries.push_back({std::move(id), category, checkpoint.embedder.embed_image(image)});
  };
  const auto products = test.products();
  if (test.kind() == data::ManifestKind::kPaired) {
    std::map<std::string, std::string, std::less<>> category;
    for (const auto& p : products) category.emplace(p.product_id, p.category);
    for (const auto& pair : test.pairs())
      add(pair.source_image.filename().string(), category.at(pair.product_id), pair.source_image);
  } else {
    for (const auto& product : products)
      for (std::size_t n = 0; n < product.image_paths.size(); ++n)
        add(product.product_id + "#" + std::to_string(n), product.category, product.image_paths[n]);
  }
  return evaluate_queries(index, queries, test.categories(), options);
}

std::string format_table(const EvalReport& report) {
  std::ostringstream out;
  out << "k";
  for (int k : report.ks) out << '\t' << k;
  out << "\nprecision";
  for (double p : report.precision) out << '\t' << fixed3(p);
  out << '\n';
  return out.str();
}

std::string format_rows(const EvalReport& report) {
  std::ostringstream out;
  out << "k\tprecision\n";
  for (std::size_t i = 0; i < report.ks.size(); ++i)
    out << report.ks[i] << '\t' << fixed3(report.precision[i]) << '\n';
  return out.str();
}

namespace {
nlohmann::json record_json(const QueryRecord& rec, const std::vector<int>& ks) {
  nlohmann::json matches = nlohmann::json::array();
  for (const auto& m : rec.matches)
    matches.push_back({{"rank", m.rank},
                       {"product_id", m.product_id},
                       {"image_id", m.image_id},
                       {"category", m.category},
                       {"score", m.score}});
  nlohmann::json precision = nlohmann::json::object();
  for (std::size_t i = 0; i < ks.size(); ++i) precision[std::to_string(ks[i])] = rec.precision[i];
  return {{"query_id", rec.query_id},   {"category", rec.category},
          {"available", rec.available}, {"truncated", rec.truncated},
          {"judgments", rec.judgments}, {"precision", precision},
          {"matches", matches}};
}
}  // namespace

std::string format_jsonl(const EvalReport& report) {
  std::string out;
  for (const auto& rec : report.queries) out += record_json(rec, report.ks).dump() + "\n";
  return out;
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < report.ks.size(); ++i)
    rows.push_back({{"k", report.ks[i]}, {"precision", report.precision[i]}});
  return {{"queries", report.queries.size()},
          {"truncated_queries", report.truncated_queries},
          {"precision", rows}};
}

}  // namespace streetshop::eval
