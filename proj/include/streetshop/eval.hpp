#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "streetshop/data.hpp"
#include "streetshop/index.hpp"
#include "streetshop/matcher.hpp"

namespace streetshop::eval {

/// 1 iff the categories match. Both labels must be in `categories`.
int relevance(std::string_view query_category, std::string_view result_category,
              const std::vector<std::string>& categories);

/// Fraction of relevant results among the first k.
double precision_at_k(std::span<const int> judgments, int k);

struct EvalQuery {
  std::string query_id;
  std::string category;
  std::vector<float> embedding;
};

struct QueryRecord {
  std::string query_id;
  std::string category;
  std::vector<index::RankedMatch> matches;
  std::vector<int> judgments;
  /// precision per requested k; evaluated at min(k, available) when the
  /// index holds fewer results.
  std::vector<double> precision;
  int available = 0;
  bool truncated = false;
};

struct EvalReport {
  std::vector<int> ks;
  std::vector<double> precision;  // unweighted mean over queries, per k
  std::vector<QueryRecord> queries;
  std::size_t truncated_queries = 0;
};

struct EvalOptions {
  std::vector<int> ks{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15};
  bool dedupe_products = true;
  /// Evaluate even when the index was built by a different checkpoint.
  bool allow_fingerprint_mismatch = false;
};

EvalReport evaluate_queries(const index::EmbeddingIndex& index, const std::vector<EvalQuery>& queries,
                            const std::vector<std::string>& categories, const EvalOptions& options);

/// Embeds every image of every product in a shopping `test` manifest (or
/// every street photo of a paired one) and evaluates it against `index`.
/// Refuses a fingerprint mismatch unless the options allow it.
EvalReport evaluate(const index::EmbeddingIndex& index, const data::DatasetManifest& test,
                    const matcher::EmbedderCheckpoint& checkpoint, const EvalOptions& options = {});

/// Same as `evaluate`, with each query image passed through `transform`
/// (for instance the garment converter) before embedding.
using QueryTransform = std::function<cv::Mat(const cv::Mat&)>;
EvalReport evaluate(const index::EmbeddingIndex& index, const data::DatasetManifest& test,
                    const matcher::EmbedderCheckpoint& checkpoint, const QueryTransform& transform,
                    const EvalOptions& options = {});

/// Horizontal layout: a "k" header row and a "precision" row, 3 decimals.
std::string format_table(const EvalReport& report);
/// One "k<TAB>precision" row per k.
std::string format_rows(const EvalReport& report);
/// One JSON object per query.
std::string format_jsonl(const EvalReport& report);
nlohmann::json to_json(const EvalReport& report);

}  // namespace streetshop::eval
