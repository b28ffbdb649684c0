#include <algorithm>
#include <functional>
#include <map>
#include <set>

#include <doctest.h>
#include <opencv2/imgproc.hpp>

#include "support.hpp"
#include "streetshop/binary_io.hpp"
#include "streetshop/data.hpp"
#include "streetshop/error.hpp"
#include "streetshop/image.hpp"

using namespace streetshop;
using testing::TempDir;
namespace fs = std::filesystem;

namespace {

const char* kHeader = "#streetshop-manifest\tkind=shopping\tcategories=Blue T-Shirts|Red Sweaters\n";

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return ErrorCode::kArgument;
}

cv::Mat solid(int w, int h, cv::Scalar bgr) { return cv::Mat(h, w, CV_8UC3, bgr); }

data::DatasetManifest shopping(int categories, int per_category) {
  std::vector<std::string> labels;
  std::vector<data::ManifestEntry> entries;
  for (int c = 0; c < categories; ++c) {
    labels.push_back("cat" + std::to_string(c));
    for (int i = 0; i < per_category; ++i) {
      const std::string id = "c" + std::to_string(c) + "p" + std::to_string(i);
      entries.push_back({id, labels.back(), data::ImageRole::kProduct, "/nonexistent/" + id + ".png"});
      entries.push_back({id, labels.back(), data::ImageRole::kAugmented, "/nonexistent/" + id + "_a.png"});
    }
  }
  return {data::ManifestKind::kShopping, labels, entries};
}

std::set<std::string> ids(const data::DatasetManifest& m) {
  std::set<std::string> out;
  for (const auto& p : m.products()) out.insert(p.product_id);
  return out;
}

}  // namespace

TEST_CASE("manifest of 3 products in 2 categories") {
  TempDir dir("manifest");
  for (const char* name : {"a.png", "b.png", "c.png"}) save_png(solid(8, 8, {0, 0, 255}), dir / name);
  io::write_file(dir / "m.tsv", std::string(kHeader) +
                                    "p1\tBlue T-Shirts\tproduct\ta.png\n"
                                    "p2\tRed Sweaters\tproduct\tb.png\n"
                                    "p3\tRed Sweaters\tproduct\tc.png\n");
  const auto m = data::load_manifest(dir / "m.tsv");
  CHECK(m.kind() == data::ManifestKind::kShopping);
  CHECK(m.products().size() == 3);
  CHECK(m.categories().size() == 2);
  CHECK(m.products()[1].image_paths.front() == (dir / "b.png").lexically_normal());

  SUBCASE("round trip through the text format") {
    data::save_manifest(m, dir / "again.tsv");
    const auto again = data::load_manifest(dir / "again.tsv");
    CHECK(again.entries().size() == m.entries().size());
    for (std::size_t i = 0; i < m.entries().size(); ++i) {
      CHECK(again.entries()[i].product_id == m.entries()[i].product_id);
      CHECK(again.entries()[i].image_path == m.entries()[i].image_path);
    }
  }
  SUBCASE("missing files are reported with their ids") {
    fs::remove(dir / "c.png");
    try {
      data::load_manifest(dir / "m.tsv");
      FAIL("missing file accepted");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kValidation);
      CHECK(e.ids() == std::vector<std::string>{"p3"});
    }
  }
}

TEST_CASE("manifest errors") {
  const fs::path base = "/tmp";
  CHECK(code_of([&] {
          data::parse_manifest(std::string(kHeader) + "p1\tBlue T-Shirts\tproduct\ta.png\n"
                                                      "p1\tBlue T-Shirts\tproduct\tb.png\n",
                               base);
        }) == ErrorCode::kValidation);
  CHECK(code_of([&] { data::parse_manifest(std::string(kHeader) + "p1\tGreen Hats\tproduct\ta.png\n", base); }) ==
        ErrorCode::kValidation);
  CHECK(code_of([&] { data::parse_manifest(std::string(kHeader) + "p1\tBlue T-Shirts\tproduct\n", base); }) ==
        ErrorCode::kManifestFormat);
  CHECK(code_of([&] { data::parse_manifest(std::string(kHeader) + "p1\tBlue T-Shirts\tphoto\ta.png\n", base); }) ==
        ErrorCode::kManifestFormat);
  CHECK(code_of([&] { data::parse_manifest("p1\tBlue T-Shirts\tproduct\ta.png\n", base); }) ==
        ErrorCode::kManifestFormat);
  CHECK(code_of([&] { data::parse_manifest("", base); }) == ErrorCode::kManifestFormat);
  CHECK(code_of([&] {
          data::parse_manifest(std::string(kHeader) + "p1\tBlue T-Shirts\taugmented\ta.png\n", base);
        }) == ErrorCode::kValidation);
}

TEST_CASE("326 products with 8 images each give 2,608 image references") {
  std::vector<data::ManifestEntry> entries;
  for (int i = 0; i < 326; ++i) {
    const std::string id = "p" + std::to_string(i);
    entries.push_back({id, "Others", data::ImageRole::kProduct, id + ".png"});
    for (int a = 0; a < 7; ++a)
      entries.push_back({id, "Others", data::ImageRole::kAugmented, id + "_" + std::to_string(a) + ".png"});
  }
  const data::DatasetManifest m(data::ManifestKind::kShopping, data::default_categories(), entries);
  m.validate(false);
  const auto parsed = data::parse_manifest(data::format_manifest(m, {}), "/");
  CHECK(parsed.image_count() == 2608);
  CHECK(parsed.products().size() == 326);
}

TEST_CASE("augmentation") {
  const cv::Mat image = data::augment_product(solid(40, 30, {10, 200, 30}), 1, 0)[0];
  CHECK(image.size() == cv::Size(40, 30));
  cv::Mat pattern(48, 32, CV_8UC3);
  cv::randu(pattern, 0, 255);
  for (int count : {1, 3, 8}) {
    const auto out = data::augment_product(pattern, count, 5);
    CHECK(out.size() == static_cast<std::size_t>(count));
    for (const auto& m : out) {
      CHECK(m.size() == pattern.size());
      CHECK(m.type() == CV_8UC3);
    }
  }
  const auto a = data::augment_product(pattern, 8, 42), b = data::augment_product(pattern, 8, 42);
  for (int i = 0; i < 8; ++i) CHECK(encode_png(a[i]) == encode_png(b[i]));
  const auto c = data::augment_product(pattern, 8, 43);
  CHECK(encode_png(a[0]) != encode_png(c[0]));

  CHECK(code_of([&] { data::augment_product(pattern, 0, 1); }) == ErrorCode::kArgument);
  CHECK(code_of([&] { data::augment_product(cv::Mat(), 2, 1); }) == ErrorCode::kDecode);
}

TEST_CASE("stratified split") {
  SUBCASE("10 products in 1 category at 0.8") {
    const auto [train, test] = data::split_train_test(shopping(1, 10), {0.8, 1});
    CHECK(train.products().size() == 8);
    CHECK(test.products().size() == 2);
  }
  SUBCASE("5 categories of 10 products") {
    const auto m = shopping(5, 10);
    const auto [train, test] = data::split_train_test(m, {0.8, 3});
    CHECK(train.products().size() == 40);
    CHECK(test.products().size() == 10);
    std::map<std::string, int> per;
    for (const auto& p : train.products()) ++per[p.category];
    for (const auto& [cat, n] : per) CHECK(n == 8);

    // partition and image integrity
    const auto a = ids(train), b = ids(test), all = ids(m);
    std::set<std::string> both;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::inserter(both, both.end()));
    CHECK(both.empty());
    CHECK(a.size() + b.size() == all.size());
    CHECK(train.image_count() + test.image_count() == m.image_count());

    const auto [train2, test2] = data::split_train_test(m, {0.8, 3});
    CHECK(ids(train2) == a);
    const auto [train3, test3] = data::split_train_test(m, {0.8, 4});
    CHECK(ids(train3).size() == 40);
  }
  SUBCASE("ratios stay within rounding for random sizes") {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
      const int per = 2 + static_cast<int>(rng.below(12));
      const double fraction = rng.uniform(0.1, 0.9);
      const auto [train, test] = data::split_train_test(shopping(3, per), {fraction, trial + 0ull});
      std::map<std::string, int> counts;
      for (const auto& p : train.products()) ++counts[p.category];
      for (const auto& [cat, n] : counts) CHECK(n == static_cast<int>(std::floor(per * fraction)));
    }
  }
  SUBCASE("a category with one product cannot be stratified") {
    CHECK(code_of([] { data::split_train_test(shopping(2, 1), {0.8, 0}); }) == ErrorCode::kStratification);
  }
}

TEST_CASE("preprocess") {
  const Tensor t = preprocess(solid(128, 96, {30, 60, 90}), 64);
  CHECK(t.shape() == Tensor::Shape{1, 3, 64, 64});
  for (float v : t.values()) {
    CHECK(v >= -1.0f);
    CHECK(v <= 1.0f);
  }
  // BGR input, RGB tensor
  CHECK(t.at(0, 0, 0, 0) == doctest::Approx(90 / 127.5 - 1));
  CHECK(t.at(0, 2, 0, 0) == doctest::Approx(30 / 127.5 - 1));

  const Tensor white = preprocess(solid(50, 70, {255, 255, 255}), 64);
  CHECK(std::all_of(white.values().begin(), white.values().end(), [](float v) { return v == 1.0f; }));
  const Tensor black = preprocess(solid(50, 70, {0, 0, 0}), 64);
  CHECK(std::all_of(black.values().begin(), black.values().end(), [](float v) { return v == -1.0f; }));

  CHECK(code_of([] { preprocess(cv::Mat(), 64); }) == ErrorCode::kDecode);
  CHECK(code_of([] { preprocess(cv::Mat(8, 8, CV_8UC1, cv::Scalar(3)), 64); }) == ErrorCode::kDecode);
  CHECK(code_of([] { decode_image("not an image"); }) == ErrorCode::kDecode);

  // tensor_to_image inverts the normalization
  cv::Mat pattern(64, 64, CV_8UC3);
  cv::randu(pattern, 0, 255);
  CHECK(encode_png(tensor_to_image(preprocess(pattern, 64))) == encode_png(pattern));
}

TEST_CASE("synthetic paired dataset") {
  TempDir a("synth-a"), b("synth-b");
  const auto m = data::generate_synthetic_paired_dataset(5, 11, a.path());
  CHECK(m.kind() == data::ManifestKind::kPaired);
  CHECK(m.products().size() == 5);
  CHECK(m.pairs().size() >= 10);
  CHECK(fs::exists(a / "paired.tsv"));
  const auto loaded = data::load_manifest(a / "paired.tsv");
  CHECK(loaded.image_count() == m.image_count());

  data::generate_synthetic_paired_dataset(5, 11, b.path());
  for (const auto& e : m.entries()) {
    const auto rel = fs::relative(e.image_path, a.path());
    CHECK(io::sha256(io::read_file(e.image_path)) == io::sha256(io::read_file(b.path() / rel)));
  }
  for (const auto& pair : m.pairs()) {
    CHECK_NOTHROW(load_image(pair.source_image));
    CHECK_NOTHROW(load_image(pair.target_image));
  }
  CHECK(code_of([&] { data::generate_synthetic_paired_dataset(0, 1, a.path()); }) == ErrorCode::kArgument);
  CHECK(code_of([] { data::generate_synthetic_paired_dataset(1, 1, "/proc/streetshop-nope"); }) ==
        ErrorCode::kIo);
}

TEST_CASE("ingest builds the augmented catalog and its split") {
  TempDir src("ingest-src"), out("ingest-out");
  const auto paired = data::generate_synthetic_paired_dataset(10, 2, src.path());
  const auto r = data::ingest(paired, out.path(), 4, 2, 0.5);
  CHECK(r.catalog.kind() == data::ManifestKind::kShopping);
  CHECK(r.catalog.image_count() == 40);
  CHECK(r.train.products().size() == 5);
  CHECK(r.test.products().size() == 5);
  for (const char* name : {"catalog.tsv", "train.tsv", "test.tsv"}) CHECK(fs::exists(out / name));
  CHECK(data::load_manifest(out / "catalog.tsv").image_count() == 40);
  for (const auto& p : r.catalog.products()) CHECK(p.image_paths.size() == 4);
}
