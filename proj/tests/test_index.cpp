#include <cmath>

#include <doctest.h>

#include "oracles.hpp"
#include "support.hpp"
#include "streetshop/binary_io.hpp"
#include "streetshop/error.hpp"
#include "streetshop/index.hpp"

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

io::Digest digest(std::uint8_t fill) {
  io::Digest d;
  d.fill(fill);
  return d;
}

// Random catalog: `n` entries over roughly n/2 products, with some vectors
// duplicated verbatim to force ties.
index::EmbeddingIndex random_index(Rng& rng, int n, int dim = 128) {
  index::EmbeddingIndex idx(dim, digest(7));
  const int products = std::max(1, n / 2);
  std::vector<int> per_product(products, 0);
  std::vector<std::vector<float>> pool;
  for (int i = 0; i < n; ++i) {
    const int p = static_cast<int>(rng.below(products));
    std::vector<float> v = !pool.empty() && rng.coin(0.2) ? pool[rng.below(pool.size())]
                                                          : testing::random_unit(rng, dim);
    pool.push_back(v);
    const std::string pid = "p" + std::to_string(p);
    idx.add({pid + "#" + std::to_string(per_product[p]++), pid, "c" + std::to_string(p % 5), v});
  }
  return idx;
}

}  // namespace

TEST_CASE("query matches the full-sort oracle on random catalogs") {
  Rng rng(42);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(trial < 50 ? 60 : 1000));
    const int dim = trial % 3 == 0 ? 8 : 128;
    const auto idx = random_index(rng, n, dim);
    for (int q = 0; q < 3; ++q) {
      // sometimes query with an indexed vector to land exactly on ties
      const auto v = rng.coin(0.5) ? idx.entries()[rng.below(idx.size())].vector : testing::random_unit(rng, dim);
      const int k = 1 + static_cast<int>(rng.below(n + 5));
      for (bool dedupe : {true, false}) {
        const auto got = index::query(idx, v, k, {dedupe});
        CHECK(got == testing::brute_force_query(idx, v, k, dedupe));
        for (std::size_t r = 0; r < got.size(); ++r) {
          CHECK(got[r].rank == static_cast<int>(r + 1));
          CHECK(got[r].score >= 0.0f);
          CHECK(got[r].score <= 2.0f + 1e-6f);
          if (r) CHECK(got[r - 1].score <= got[r].score);
        }
      }
    }
  }
}

TEST_CASE("self match, saturation and ties") {
  index::EmbeddingIndex idx(2, digest(1));
  const std::vector<float> e0{1, 0}, e1{0, 1}, e2{-1, 0};
  idx.add({"b#0", "b", "Others", e0});
  idx.add({"a#0", "a", "Others", e0});
  idx.add({"c#0", "c", "Bridal Dress", e1});
  idx.add({"d#0", "d", "Others", e2});

  const auto top = index::query(idx, e1, 1);
  REQUIRE(top.size() == 1);
  CHECK(top[0].product_id == "c");
  CHECK(top[0].score == 0.0f);
  CHECK(top[0].category == "Bridal Dress");

  const auto all = index::query(idx, e0, 10);
  REQUIRE(all.size() == 4);
  // duplicated vectors order by product id
  CHECK(all[0].product_id == "a");
  CHECK(all[1].product_id == "b");
  CHECK(all[3].product_id == "d");
  CHECK(all[3].score == doctest::Approx(2.0f));

  CHECK(code_of([&] { index::query(idx, e0, 0); }) == ErrorCode::kArgument);
  CHECK(code_of([&] { index::query(index::EmbeddingIndex(2, digest(1)), e0, 3); }) == ErrorCode::kQuery);
  const std::vector<float> wrong_dim{1, 0, 0};
  CHECK(code_of([&] { index::query(idx, wrong_dim, 1); }) == ErrorCode::kShape);
}

TEST_CASE("dedupe keeps each product's best image") {
  index::EmbeddingIndex idx(2, digest(1));
  const float s = std::sqrt(0.5f);
  idx.add({"a#0", "a", "Others", {0, 1}});
  idx.add({"a#1", "a", "Others", {1, 0}});
  idx.add({"b#0", "b", "Others", {s, s}});
  const std::vector<float> q{1, 0};
  const auto products = index::query(idx, q, 5);
  REQUIRE(products.size() == 2);
  CHECK(products[0].image_id == "a#1");
  CHECK(products[1].product_id == "b");
  CHECK(index::query(idx, q, 5, {false}).size() == 3);
  CHECK(idx.product_ids() == std::vector<std::string>{"a", "b"});
  CHECK(*idx.category_of("b") == "Others");
  CHECK(idx.category_of("zzz") == nullptr);
}

TEST_CASE("entries must be unit vectors of the index dimension") {
  index::EmbeddingIndex idx(2, digest(1));
  CHECK(code_of([&] { idx.add({"a#0", "a", "Others", {3, 4}}); }) == ErrorCode::kArgument);
  CHECK(code_of([&] { idx.add({"a#0", "a", "Others", {1}}); }) == ErrorCode::kShape);
  CHECK(code_of([&] { idx.add({"a#0", "a", "Others", {NAN, 1}}); }) == ErrorCode::kNumeric);
}

TEST_CASE("build_index covers every catalog image and is deterministic") {
  const auto& w = world();
  const auto ckpt = matcher::load_embedder(w.embedder_checkpoint);
  const auto idx = index::build_index(w.shop.catalog, ckpt);
  CHECK(idx.size() == w.shop.catalog.image_count());
  CHECK(idx.fingerprint() == matcher::fingerprint(ckpt));
  CHECK(idx.entries().front().image_id == idx.entries().front().product_id + "#0");
  CHECK(index::serialize(idx) == index::serialize(index::build_index(w.shop.catalog, ckpt)));
  CHECK(index::serialize(idx) == io::read_file(w.index));

  const data::DatasetManifest empty(data::ManifestKind::kShopping, {"Others"}, {});
  const auto none = index::build_index(empty, ckpt);
  CHECK(none.empty());
  const std::vector<float> q(128, 1.0f / std::sqrt(128.0f));
  CHECK(code_of([&] { index::query(none, q, 1); }) == ErrorCode::kQuery);

  const data::DatasetManifest broken(data::ManifestKind::kShopping, {"Others"},
                                     {{"ghost", "Others", data::ImageRole::kProduct, "/nonexistent/ghost.png"}});
  try {
    index::build_index(broken, ckpt);
    FAIL("unreadable image accepted");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("ghost#0") != std::string::npos);
  }
}

TEST_CASE("index files round-trip and corruption is rejected") {
  Rng rng(5);
  testing::TempDir dir("index");
  for (int n : {0, 1, 17}) {
    const auto idx = random_index(rng, n);
    index::save_index(idx, dir / "i.idx");
    const auto back = index::load_index(dir / "i.idx");
    CHECK(back == idx);
    CHECK(index::serialize(back) == index::serialize(idx));
  }
  const auto bytes = index::serialize(random_index(rng, 5));
  CHECK(bytes.substr(0, 9) == std::string(index::kIndexMagic));
  auto bad = bytes;
  bad[8] = '\x02';
  CHECK(code_of([&] { index::deserialize_index(bad); }) == ErrorCode::kFormat);
  CHECK(code_of([&] { index::deserialize_index(bytes.substr(0, bytes.size() - 1)); }) == ErrorCode::kFormat);
  CHECK(code_of([&] { index::deserialize_index(bytes + "x"); }) == ErrorCode::kFormat);
  CHECK(code_of([&] { index::deserialize_index(""); }) == ErrorCode::kFormat);
}
