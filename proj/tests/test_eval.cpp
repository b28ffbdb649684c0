#include <cmath>

#include <doctest.h>

#include "oracles.hpp"
#include "support.hpp"
#include "streetshop/error.hpp"
#include "streetshop/eval.hpp"
#include "streetshop/gan.hpp"
#include "streetshop/image.hpp"

using namespace streetshop;
using testing::world;

namespace {

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return ErrorCode::kArgument;
}

const std::vector<std::string> kCategories{"Bridal Dress", "Others"};

}  // namespace

TEST_CASE("relevance is category equality over known labels") {
  CHECK(eval::relevance("Others", "Others", kCategories) == 1);
  CHECK(eval::relevance("Others", "Bridal Dress", kCategories) == 0);
  CHECK(code_of([] { eval::relevance("Hats", "Others", kCategories); }) == ErrorCode::kArgument);
  CHECK(code_of([] { eval::relevance("Others", "Hats", kCategories); }) == ErrorCode::kArgument);
}

TEST_CASE("precision at k") {
  const std::vector<int> mixed{1, 1, 0};
  CHECK(eval::precision_at_k(mixed, 3) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(eval::precision_at_k(mixed, 1) == 1.0);
  const std::vector<int> ones(15, 1), zeros(15, 0);
  for (int k = 1; k <= 15; ++k) {
    CHECK(eval::precision_at_k(ones, k) == 1.0);
    CHECK(eval::precision_at_k(zeros, k) == 0.0);
  }
  CHECK(code_of([&] { eval::precision_at_k(mixed, 4); }) == ErrorCode::kArgument);
  CHECK(code_of([&] { eval::precision_at_k(mixed, 0); }) == ErrorCode::kArgument);
  const std::vector<int> junk{2};
  CHECK(code_of([&] { eval::precision_at_k(junk, 1); }) == ErrorCode::kArgument);
}

TEST_CASE("precision properties on random lists") {
  Rng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(30));
    std::vector<int> j(n);
    for (auto& v : j) v = rng.coin(0.4) ? 1 : 0;
    const int k = 1 + static_cast<int>(rng.below(n));
    const double p = eval::precision_at_k(j, k);
    CHECK(p == testing::recount_precision(j, k));
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
    const double hits = p * k;
    CHECK(std::abs(hits - std::round(hits)) < 1e-9);
    std::vector<int> head(j.begin(), j.begin() + k);
    rng.shuffle(head);
    CHECK(eval::precision_at_k(head, k) == p);
  }
}

TEST_CASE("aggregate precision is the mean over queries, with truncation flagged") {
  index::EmbeddingIndex idx(2, io::Digest{});
  idx.add({"a#0", "a", "Others", {1, 0}});
  idx.add({"b#0", "b", "Bridal Dress", {0, 1}});
  idx.add({"c#0", "c", "Others", {-1, 0}});
  const std::vector<eval::EvalQuery> queries{
      {"q1", "Others", {1, 0}},
      {"q2", "Bridal Dress", {1, 0}},
  };
  eval::EvalOptions opts;
  opts.ks = {1, 2, 3, 5};
  const auto report = eval::evaluate_queries(idx, queries, kCategories, opts);
  REQUIRE(report.queries.size() == 2);
  // q1 ranks a, b, c -> [1, 0, 1]; q2 ranks the same -> [0, 1, 0]
  CHECK(report.queries[0].judgments == std::vector<int>{1, 0, 1});
  CHECK(report.queries[1].judgments == std::vector<int>{0, 1, 0});
  for (std::size_t i = 0; i < opts.ks.size(); ++i) {
    double mean = 0;
    for (const auto& q : report.queries) {
      const int k = std::min(opts.ks[i], q.available);
      CHECK(q.precision[i] == testing::recount_precision(q.judgments, k));
      mean += q.precision[i];
    }
    CHECK(report.precision[i] == doctest::Approx(mean / 2).epsilon(1e-12));
  }
  CHECK(report.precision[0] == 0.5);
  CHECK(report.truncated_queries == 2);
  CHECK(report.queries[0].truncated);
  CHECK(report.queries[0].available == 3);

  opts.ks = {1, 2, 3};
  CHECK(eval::evaluate_queries(idx, queries, kCategories, opts).truncated_queries == 0);
  opts.ks = {0};
  CHECK(code_of([&] { eval::evaluate_queries(idx, queries, kCategories, opts); }) == ErrorCode::kArgument);
  const std::vector<eval::EvalQuery> unknown{{"q", "Hats", {1, 0}}};
  CHECK(code_of([&] { eval::evaluate_queries(idx, unknown, kCategories, {}); }) == ErrorCode::kArgument);
}

TEST_CASE("report formats") {
  index::EmbeddingIndex idx(2, io::Digest{});
  idx.add({"a#0", "a", "Others", {1, 0}});
  const auto report = eval::evaluate_queries(idx, {{"q", "Others", {0, 1}}}, kCategories, {});
  const std::string table = eval::format_table(report);
  CHECK(table.rfind("k\t1\t2\t3\t4\t5\t6\t7\t8\t9\t10\t11\t12\t13\t14\t15\n", 0) == 0);
  CHECK(table.find("precision\t1.000\t1.000") != std::string::npos);
  CHECK(eval::format_rows(report).rfind("k\tprecision\n1\t1.000\n", 0) == 0);
  const auto line = nlohmann::json::parse(eval::format_jsonl(report));
  CHECK(line["query_id"] == "q");
  CHECK(line["truncated"] == true);
  CHECK(line["precision"]["15"] == 1.0);
  const auto j = eval::to_json(report);
  CHECK(j["queries"] == 1);
  CHECK(j["precision"].size() == 15);
}

TEST_CASE("evaluate embeds the held-out products and checks fingerprints") {
  const auto& w = world();
  const auto ckpt = matcher::load_embedder(w.embedder_checkpoint);
  const auto idx = index::load_index(w.index);
  const auto report = eval::evaluate(idx, w.shop.test, ckpt);
  CHECK(report.queries.size() == w.shop.test.image_count());
  for (double p : report.precision) {
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }
  // catalog queries against the catalog find themselves first
  const auto self = eval::evaluate(idx, w.shop.catalog, ckpt);
  for (const auto& q : self.queries) {
    CHECK(q.matches.front().score < 1e-5f);
    CHECK(q.query_id.rfind(q.matches.front().product_id + "#", 0) == 0);
  }

  const auto other = matcher::initialize(w.shop.catalog, [] {
    matcher::MatcherTrainConfig c;
    c.spec.width = 4;
    c.seed = 1234;
    return c;
  }());
  CHECK(code_of([&] { eval::evaluate(idx, w.shop.test, other); }) == ErrorCode::kFingerprintMismatch);
  eval::EvalOptions allow;
  allow.allow_fingerprint_mismatch = true;
  CHECK(eval::evaluate(idx, w.shop.test, other, allow).queries.size() == w.shop.test.image_count());

  const auto gan = gan::load_gan(w.gan_checkpoint);
  const auto street = eval::evaluate(idx, w.paired, ckpt,
                                     [&](const cv::Mat& m) { return tensor_to_image(gan::generate_garment(m, gan.model)); });
  CHECK(street.queries.size() == w.street_photos.size());
}
