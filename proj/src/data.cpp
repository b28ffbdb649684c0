#include "streetshop/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <opencv2/imgproc.hpp>

#include "streetshop/binary_io.hpp"
#include "streetshop/error.hpp"
#include "streetshop/image.hpp"
#include "streetshop/random.hpp"

namespace streetshop::data {
namespace fs = std::filesystem;

namespace {

constexpr std::string_view kHeaderTag = "#streetshop-manifest";
constexpr std::string_view kColumns = "product_id\tcategory\trole\timage_path";

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string_view trim_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

ImageRole parse_role(const std::string& s, int line_no) {
  if (s == "product") return ImageRole::kProduct;
  if (s == "street") return ImageRole::kStreet;
  if (s == "augmented") return ImageRole::kAugmented;
  fail(ErrorCode::kManifestFormat,
       "line " + std::to_string(line_no) + ": unknown role '" + s + "'");
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

std::string_view to_string(ManifestKind kind) {
  return kind == ManifestKind::kShopping ? "shopping" : "paired";
}

std::string_view to_string(ImageRole role) {
  switch (role) {
    case ImageRole::kProduct: return "product";
    case ImageRole::kStreet: return "street";
    case ImageRole::kAugmented: return "augmented";
  }
  return "product";
}

// ---------------------------------------------------------------- manifest

DatasetManifest::DatasetManifest(ManifestKind kind, std::vector<std::string> categories,
                                 std::vector<ManifestEntry> entries)
    : kind_(kind), categories_(std::move(categories)), entries_(std::move(entries)) {}

std::vector<ProductRecord> DatasetManifest::products() const {
  std::vector<ProductRecord> out;
  std::map<std::string, std::size_t, std::less<>> where;
  for (const auto& e : entries_) {
    if (e.role == ImageRole::kStreet) continue;
    auto [it, inserted] = where.try_emplace(e.product_id, out.size());
    if (inserted) out.push_back({e.product_id, e.category, {}});
    auto& rec = out[it->second];
    if (e.role == ImageRole::kProduct)
      rec.image_paths.insert(rec.image_paths.begin(), e.image_path);
    else
      rec.image_paths.push_back(e.image_path);
  }
  return out;
}

std::vector<PairedSample> DatasetManifest::pairs() const {
  std::map<std::string, fs::path, std::less<>> product_photo;
  for (const auto& e : entries_)
    if (e.role == ImageRole::kProduct) product_photo.emplace(e.product_id, e.image_path);
  std::vector<PairedSample> out;
  for (const auto& e : entries_) {
    if (e.role != ImageRole::kStreet) continue;
    auto it = product_photo.find(e.product_id);
    require(it != product_photo.end(), ErrorCode::kValidation,
            "street image without product photo: " + e.product_id);
    out.push_back({e.product_id, e.image_path, it->second});
  }
  return out;
}

int DatasetManifest::category_index(std::string_view label) const {
  for (std::size_t i = 0; i < categories_.size(); ++i)
    if (categories_[i] == label) return static_cast<int>(i);
  return -1;
}

void DatasetManifest::validate(bool check_files) const {
  require(!categories_.empty(), ErrorCode::kValidation, "manifest declares no categories");
  std::set<std::string, std::less<>> declared(categories_.begin(), categories_.end());
  require(declared.size() == categories_.size(), ErrorCode::kValidation,
          "duplicate category in declared set");

  std::map<std::string, std::string, std::less<>> category_of;
  std::set<std::string, std::less<>> with_photo;
  std::vector<std::string> duplicates, bad_category, inconsistent, orphans, missing;
  for (const auto& e : entries_) {
    if (e.product_id.empty()) fail(ErrorCode::kValidation, "empty product_id");
    if (!declared.contains(e.category)) bad_category.push_back(e.product_id);
    auto [it, inserted] = category_of.try_emplace(e.product_id, e.category);
    if (!inserted && it->second != e.category) inconsistent.push_back(e.product_id);
    if (e.role == ImageRole::kProduct && !with_photo.insert(e.product_id).second)
      duplicates.push_back(e.product_id);
    if (kind_ == ManifestKind::kShopping && e.role == ImageRole::kStreet)
      fail(ErrorCode::kValidation, "street image in a shopping manifest: " + e.product_id);
    if (check_files && !fs::exists(e.image_path)) missing.push_back(e.product_id);
  }
  for (const auto& [id, cat] : category_of)
    if (!with_photo.contains(id)) orphans.push_back(id);

  auto report = [](const char* what, std::vector<std::string> ids) {
    if (ids.empty()) return;
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    std::string msg = what;
    for (std::size_t i = 0; i < ids.size(); ++i) msg += (i ? ", " : ": ") + ids[i];
    throw Error(ErrorCode::kValidation, msg, std::move(ids));
  };
  report("duplicate product_id", duplicates);
  report("category not in declared set", bad_category);
  report("conflicting categories for product", inconsistent);
  report("no product image for", orphans);
  report("missing image files for", missing);
}

DatasetManifest parse_manifest(std::string_view text, const fs::path& base_dir) {
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  bool have_header = false;
  ManifestKind kind = ManifestKind::kShopping;
  std::vector<std::string> categories;
  std::vector<ManifestEntry> entries;
  while (std::getline(in, line)) {
    ++line_no;
    const auto view = trim_cr(line);
    if (view.empty()) continue;
    if (!have_header) {
      const auto fields = split(view, '\t');
      require(fields[0] == kHeaderTag, ErrorCode::kManifestFormat,
              "line " + std::to_string(line_no) + ": missing '" + std::string(kHeaderTag) + "' header");
      bool have_kind = false, have_categories = false;
      for (std::size_t i = 1; i < fields.size(); ++i) {
        const auto eq = fields[i].find('=');
        require(eq != std::string::npos, ErrorCode::kManifestFormat,
                "header field without '=': " + fields[i]);
        const auto key = fields[i].substr(0, eq);
        const auto value = fields[i].substr(eq + 1);
        if (key == "kind") {
          if (value == "shopping") kind = ManifestKind::kShopping;
          else if (value == "paired") kind = ManifestKind::kPaired;
          else fail(ErrorCode::kManifestFormat, "unknown manifest kind '" + value + "'");
          have_kind = true;
        } else if (key == "categories") {
          categories = split(value, '|');
          have_categories = true;
        }
      }
      require(have_kind && have_categories, ErrorCode::kManifestFormat,
              "header must declare kind= and categories=");
      have_header = true;
      continue;
    }
    if (view == kColumns || view.front() == '#') continue;
    const auto fields = split(view, '\t');
    require(fields.size() == 4, ErrorCode::kManifestFormat,
            "line " + std::to_string(line_no) + ": expected 4 tab-separated fields, got " +
                std::to_string(fields.size()));
    require(!fields[3].empty(), ErrorCode::kManifestFormat,
            "line " + std::to_string(line_no) + ": empty image path");
    fs::path p = fields[3];
    if (p.is_relative()) p = base_dir / p;
    entries.push_back({fields[0], fields[1], parse_role(fields[2], line_no), p.lexically_normal()});
  }
  require(have_header, ErrorCode::kManifestFormat, "empty manifest");
  DatasetManifest m(kind, std::move(categories), std::move(entries));
  m.validate(false);
  return m;
}

std::string format_manifest(const DatasetManifest& manifest, const fs::path& base_dir) {
  std::string out(kHeaderTag);
  out += "\tkind=";
  out += to_string(manifest.kind());
  out += "\tcategories=";
  for (std::size_t i = 0; i < manifest.categories().size(); ++i) {
    if (i) out += '|';
    out += manifest.categories()[i];
  }
  out += '\n';
  out += kColumns;
  out += '\n';
  for (const auto& e : manifest.entries()) {
    fs::path p = e.image_path;
    if (!base_dir.empty() && p.is_absolute()) {
      auto rel = p.lexically_relative(fs::absolute(base_dir).lexically_normal());
      if (!rel.empty() && *rel.begin() != "..") p = rel;
    }
    out += e.product_id + '\t' + e.category + '\t' + std::string(to_string(e.role)) + '\t' +
           p.generic_string() + '\n';
  }
  return out;
}

DatasetManifest load_manifest(const fs::path& path) {
  const auto text = io::read_file(path);
  auto manifest = parse_manifest(text, fs::absolute(path).parent_path());
  manifest.validate(true);
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  io::write_file(path, format_manifest(manifest, fs::absolute(path).parent_path()));
}

// ------------------------------------------------------------ augmentation

std::vector<cv::Mat> augment_product(const cv::Mat& image, int count, std::uint64_t seed) {
  require(count >= 1, ErrorCode::kArgument, "augmentation count must be >= 1");
  require(!image.empty() && image.type() == CV_8UC3, ErrorCode::kDecode,
          "augmentation expects an 8-bit RGB image");
  Rng rng(seed);
  std::vector<cv::Mat> out;
  out.reserve(count);
  const cv::Point2f center(image.cols / 2.0f, image.rows / 2.0f);
  for (int i = 0; i < count; ++i) {
    const double angle = rng.uniform(-10.0, 10.0);
    const double scale = rng.uniform(0.9, 1.1);
    const double tx = rng.uniform(-0.05, 0.05) * image.cols;
    const double ty = rng.uniform(-0.05, 0.05) * image.rows;
    const bool flip = rng.coin();
    const double contrast = rng.uniform(0.85, 1.15);
    const double brightness = rng.uniform(-20.0, 20.0);

    cv::Mat src = image;
    if (flip) cv::flip(image, src, 1);
    cv::Mat affine = cv::getRotationMatrix2D(center, angle, scale);
    affine.at<double>(0, 2) += tx;
    affine.at<double>(1, 2) += ty;
    cv::Mat warped;
    cv::warpAffine(src, warped, affine, image.size(), cv::INTER_LINEAR, cv::BORDER_REPLICATE);
    cv::Mat adjusted;
    warped.convertTo(adjusted, CV_8UC3, contrast, brightness + 127.5 * (1.0 - contrast));
    out.push_back(std::move(adjusted));
  }
  return out;
}

// --------------------------------------------------------------- splitting

std::pair<DatasetManifest, DatasetManifest> split_train_test(const DatasetManifest& manifest,
                                                            const SplitSpec& spec) {
  require(spec.train_fraction > 0.0 && spec.train_fraction < 1.0, ErrorCode::kArgument,
          "train_fraction must be in (0, 1)");
  std::map<std::string, std::vector<std::string>> by_category;
  for (const auto& rec : manifest.products()) by_category[rec.category].push_back(rec.product_id);

  std::set<std::string> train_ids;
  Rng rng(spec.seed);
  for (const auto& category : manifest.categories()) {
    auto it = by_category.find(category);
    if (it == by_category.end()) continue;
    auto ids = it->second;
    require(ids.size() >= 2, ErrorCode::kStratification,
            "category '" + category + "' has fewer than 2 products");
    std::sort(ids.begin(), ids.end());
    Rng local = rng.fork(fnv1a(category));
    local.shuffle(ids);
    const auto n_train = static_cast<std::size_t>(
        std::floor(static_cast<double>(ids.size()) * spec.train_fraction + 1e-9));
    for (std::size_t i = 0; i < n_train; ++i) train_ids.insert(ids[i]);
  }
  std::vector<ManifestEntry> train, test;
  for (const auto& e : manifest.entries())
    (train_ids.contains(e.product_id) ? train : test).push_back(e);
  return {DatasetManifest(manifest.kind(), manifest.categories(), std::move(train)),
          DatasetManifest(manifest.kind(), manifest.categories(), std::move(test))};
}

// ---------------------------------------------------------- synthetic data

namespace {

enum class Shape { kTShirt, kSweater, kDress, kTank, kSkirt };
enum class Pattern { kSolid, kHStripes, kVStripes, kDots, kChecker };

struct Garment {
  Shape shape;
  cv::Scalar base;       // BGR
  cv::Scalar secondary;  // BGR
  Pattern pattern;
  int period;
  int widen;  // silhouette jitter in canvas pixels
};

constexpr int kCanvas = 128;

cv::Scalar jitter_color(Rng& rng, cv::Scalar c, double spread) {
  for (int i = 0; i < 3; ++i) c[i] = std::clamp(c[i] + rng.uniform(-spread, spread), 0.0, 255.0);
  return c;
}

Garment sample_garment(Rng& rng, int category) {
  Garment g{};
  switch (category) {
    case 0:
      g.shape = Shape::kTShirt;
      g.base = jitter_color(rng, {200, 90, 25}, 35);
      break;
    case 1:
      g.shape = Shape::kSweater;
      g.base = jitter_color(rng, {35, 35, 190}, 30);
      break;
    case 2:
      g.shape = Shape::kDress;
      g.base = jitter_color(rng, {215, 232, 242}, 12);
      break;
    case 3:
      g.shape = Shape::kTShirt;
      g.base = jitter_color(rng, {30, 205, 230}, 25);
      break;
    default: {
      static const Shape kShapes[] = {Shape::kTank, Shape::kSkirt, Shape::kSweater};
      static const cv::Scalar kColors[] = {{60, 150, 40}, {140, 40, 120}, {45, 45, 45}};
      g.shape = kShapes[rng.below(3)];
      g.base = jitter_color(rng, kColors[rng.below(3)], 25);
      break;
    }
  }
  g.pattern = static_cast<Pattern>(rng.below(5));
  const double mix = rng.uniform(0.25, 0.45);
  const cv::Scalar toward = rng.coin() ? cv::Scalar(255, 255, 255) : cv::Scalar(0, 0, 0);
  g.secondary = g.base * (1.0 - mix) + toward * mix;
  g.period = 8 + static_cast<int>(rng.below(14));
  g.widen = static_cast<int>(rng.below(9)) - 4;
  return g;
}

std::vector<std::vector<cv::Point>> silhouette(const Garment& g) {
  const int w = g.widen;
  std::vector<std::vector<cv::Point>> polys;
  switch (g.shape) {
    case Shape::kTShirt:
      polys.push_back({{36 - w, 28}, {92 + w, 28}, {92 + w, 120}, {36 - w, 120}});
      polys.push_back({{36 - w, 28}, {12 - w, 56}, {26 - w, 68}, {38 - w, 52}});
      polys.push_back({{92 + w, 28}, {116 + w, 56}, {102 + w, 68}, {90 + w, 52}});
      break;
    case Shape::kSweater:
      polys.push_back({{36 - w, 26}, {92 + w, 26}, {92 + w, 120}, {36 - w, 120}});
      polys.push_back({{36 - w, 26}, {10 - w, 104}, {24 - w, 108}, {40 - w, 52}});
      polys.push_back({{92 + w, 26}, {118 + w, 104}, {104 + w, 108}, {88 + w, 52}});
      break;
    case Shape::kDress:
      polys.push_back({{46 - w, 14}, {82 + w, 14}, {82 + w, 58}, {46 - w, 58}});
      polys.push_back({{46 - w, 56}, {82 + w, 56}, {112 + w, 124}, {16 - w, 124}});
      break;
    case Shape::kTank:
      polys.push_back({{46 - w, 20}, {54 - w, 20}, {58, 34}, {70, 34}, {74 + w, 20}, {82 + w, 20},
                       {88 + w, 52}, {88 + w, 120}, {40 - w, 120}, {40 - w, 52}});
      break;
    case Shape::kSkirt:
      polys.push_back({{40 - w, 24}, {88 + w, 24}, {108 + w, 116}, {20 - w, 116}});
      break;
  }
  return polys;
}

// Renders the garment on a kCanvas x kCanvas canvas; returns color and mask.
std::pair<cv::Mat, cv::Mat> render_garment(const Garment& g) {
  cv::Mat mask(kCanvas, kCanvas, CV_8UC1, cv::Scalar(0));
  const auto polys = silhouette(g);
  cv::fillPoly(mask, polys, cv::Scalar(255), cv::LINE_AA);
  if (g.shape == Shape::kTShirt || g.shape == Shape::kSweater)
    cv::ellipse(mask, {64, 26}, {12, 8}, 0, 0, 180, cv::Scalar(0), cv::FILLED, cv::LINE_AA);

  cv::Mat color(kCanvas, kCanvas, CV_8UC3, g.base);
  for (int y = 0; y < kCanvas; ++y) {
    auto* row = color.ptr<cv::Vec3b>(y);
    for (int x = 0; x < kCanvas; ++x) {
      bool alt = false;
      switch (g.pattern) {
        case Pattern::kSolid: break;
        case Pattern::kHStripes: alt = (y / (g.period / 2)) % 2 == 1; break;
        case Pattern::kVStripes: alt = (x / (g.period / 2)) % 2 == 1; break;
        case Pattern::kDots: {
          const int cx = x % g.period - g.period / 2, cy = y % g.period - g.period / 2;
          alt = cx * cx + cy * cy <= (g.period * g.period) / 16;
          break;
        }
        case Pattern::kChecker: alt = ((x / g.period) + (y / g.period)) % 2 == 1; break;
      }
      if (alt)
        for (int c = 0; c < 3; ++c) row[x][c] = cv::saturate_cast<uchar>(g.secondary[c]);
    }
  }
  cv::polylines(color, polys, true, g.base * 0.55, 2, cv::LINE_AA);
  return {color, mask};
}

// Alpha-blends `fg` (with mask) into `dst` after warping with `affine`.
void composite(cv::Mat& dst, const cv::Mat& fg, const cv::Mat& mask, const cv::Mat& affine) {
  cv::Mat wfg, wmask;
  cv::warpAffine(fg, wfg, affine, dst.size(), cv::INTER_LINEAR, cv::BORDER_CONSTANT);
  cv::warpAffine(mask, wmask, affine, dst.size(), cv::INTER_LINEAR, cv::BORDER_CONSTANT);
  for (int y = 0; y < dst.rows; ++y) {
    auto* d = dst.ptr<cv::Vec3b>(y);
    const auto* f = wfg.ptr<cv::Vec3b>(y);
    const auto* m = wmask.ptr<uchar>(y);
    for (int x = 0; x < dst.cols; ++x) {
      const float a = m[x] / 255.0f;
      for (int c = 0; c < 3; ++c) d[x][c] = cv::saturate_cast<uchar>(a * f[x][c] + (1 - a) * d[x][c]);
    }
  }
}

cv::Mat render_product(const Garment& g, int size) {
  auto [color, mask] = render_garment(g);
  cv::Mat img(size, size, CV_8UC3, cv::Scalar(255, 255, 255));
  const double s = 0.88 * size / kCanvas;
  cv::Mat affine = (cv::Mat_<double>(2, 3) << s, 0, (size - s * kCanvas) / 2, 0, s,
                    (size - s * kCanvas) / 2);
  composite(img, color, mask, affine);
  return img;
}

cv::Mat render_street(const Garment& g, Rng& rng, const SyntheticOptions& opt) {
  const int w = opt.street_width, h = opt.street_height;
  cv::Mat img(h, w, CV_8UC3);
  // background: vertical gradient plus clutter blocks
  const cv::Scalar top = jitter_color(rng, {128, 128, 128}, 110);
  const cv::Scalar bottom = jitter_color(rng, {128, 128, 128}, 110);
  for (int y = 0; y < h; ++y) {
    const double t = static_cast<double>(y) / (h - 1);
    img.row(y).setTo(top * (1 - t) + bottom * t);
  }
  const int blocks = 4 + static_cast<int>(rng.below(6));
  for (int i = 0; i < blocks; ++i) {
    const int x0 = static_cast<int>(rng.below(w)), y0 = static_cast<int>(rng.below(h));
    const int bw = 6 + static_cast<int>(rng.below(w / 2)), bh = 6 + static_cast<int>(rng.below(h / 3));
    cv::rectangle(img, {x0, y0, bw, bh}, jitter_color(rng, {128, 128, 128}, 127), cv::FILLED);
  }

  const cv::Scalar skin = jitter_color(rng, {120, 150, 200}, 30);
  const double garment_w = rng.uniform(0.58, 0.74) * w;
  const double s = garment_w / kCanvas;
  const double cx = w / 2.0 + rng.uniform(-0.08, 0.08) * w;
  const double cy = h / 2.0 + rng.uniform(-0.06, 0.06) * h;
  const double angle = rng.uniform(-8.0, 8.0);

  // person: legs and head around the garment
  const cv::Scalar trousers = jitter_color(rng, {70, 60, 50}, 50);
  const int leg_top = static_cast<int>(cy + 0.3 * garment_w);
  cv::rectangle(img, cv::Point(static_cast<int>(cx - 0.28 * garment_w), leg_top),
                cv::Point(static_cast<int>(cx - 0.04 * garment_w), h), trousers, cv::FILLED);
  cv::rectangle(img, cv::Point(static_cast<int>(cx + 0.04 * garment_w), leg_top),
                cv::Point(static_cast<int>(cx + 0.28 * garment_w), h), trousers, cv::FILLED);
  cv::circle(img, cv::Point(static_cast<int>(cx), static_cast<int>(cy - 0.62 * garment_w)),
             static_cast<int>(0.17 * garment_w), skin, cv::FILLED, cv::LINE_AA);

  auto [color, mask] = render_garment(g);
  cv::Mat affine = cv::getRotationMatrix2D({kCanvas / 2.0f, kCanvas / 2.0f}, angle, s);
  affine.at<double>(0, 2) += cx - kCanvas / 2.0;
  affine.at<double>(1, 2) += cy - kCanvas / 2.0;
  composite(img, color, mask, affine);

  // arms crossing the garment edges
  const int arm = std::max(3, static_cast<int>(0.09 * garment_w));
  for (int side : {-1, 1}) {
    if (!rng.coin(0.7)) continue;
    const cv::Point shoulder(static_cast<int>(cx + side * 0.36 * garment_w),
                             static_cast<int>(cy - 0.3 * garment_w));
    const cv::Point hand(static_cast<int>(cx + side * rng.uniform(0.1, 0.45) * garment_w),
                         static_cast<int>(cy + rng.uniform(0.1, 0.45) * garment_w));
    cv::line(img, shoulder, hand, skin, arm, cv::LINE_AA);
  }
  // occluding object, e.g. a bag
  if (rng.coin(0.5)) {
    const int ow = static_cast<int>(rng.uniform(0.15, 0.3) * garment_w);
    const int oh = static_cast<int>(rng.uniform(0.15, 0.3) * garment_w);
    const int ox = static_cast<int>(cx + rng.uniform(-0.5, 0.5) * garment_w) - ow / 2;
    const int oy = static_cast<int>(cy + rng.uniform(-0.3, 0.5) * garment_w) - oh / 2;
    cv::rectangle(img, {ox, oy, ow, oh}, jitter_color(rng, {90, 90, 90}, 90), cv::FILLED);
  }

  // illumination shift and sensor noise
  const double gain = rng.uniform(0.75, 1.25);
  const double bias = rng.uniform(-20.0, 20.0);
  for (int y = 0; y < h; ++y) {
    auto* row = img.ptr<cv::Vec3b>(y);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        row[x][c] = cv::saturate_cast<uchar>(gain * row[x][c] + bias + rng.normal(0.0, 4.0));
  }
  return img;
}

std::string product_id_for(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "p%04d", i);
  return buf;
}

}  // namespace

DatasetManifest generate_synthetic_paired_dataset(int n_products, std::uint64_t seed,
                                                  const fs::path& out_dir,
                                                  const SyntheticOptions& options) {
  require(n_products >= 1, ErrorCode::kArgument, "n_products must be >= 1");
  require(options.street_per_product >= 2, ErrorCode::kArgument,
          "street_per_product must be >= 2");
  std::error_code ec;
  fs::create_directories(out_dir / "products", ec);
  fs::create_directories(out_dir / "street", ec);
  require(!ec && fs::is_directory(out_dir), ErrorCode::kIo,
          "cannot create output directory " + out_dir.string());

  const auto& categories = default_categories();
  const auto root = fs::absolute(out_dir).lexically_normal();
  Rng master(seed);
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < n_products; ++i) {
    Rng rng = master.fork(static_cast<std::uint64_t>(i));
    const int category = i % static_cast<int>(categories.size());
    const auto id = product_id_for(i);
    const Garment garment = sample_garment(rng, category);
    const auto product_path = root / "products" / (id + ".png");
    save_png(render_product(garment, options.product_size), product_path);
    entries.push_back({id, categories[category], ImageRole::kProduct, product_path});
    for (int s = 0; s < options.street_per_product; ++s) {
      char name[32];
      std::snprintf(name, sizeof name, "%s_s%02d.png", id.c_str(), s);
      const auto street_path = root / "street" / name;
      save_png(render_street(garment, rng, options), street_path);
      entries.push_back({id, categories[category], ImageRole::kStreet, street_path});
    }
  }
  DatasetManifest manifest(ManifestKind::kPaired, categories, std::move(entries));
  save_manifest(manifest, root / "paired.tsv");
  return manifest;
}

// ------------------------------------------------------------------ ingest

IngestResult ingest(const DatasetManifest& manifest, const fs::path& out_dir,
                    int images_per_product, std::uint64_t seed, double train_fraction) {
  require(images_per_product >= 1, ErrorCode::kArgument, "images per product must be >= 1");
  const int augment_count = images_per_product - 1;
  manifest.validate(true);
  const auto root = fs::absolute(out_dir).lexically_normal();
  std::error_code ec;
  fs::create_directories(root / "augmented", ec);
  require(!ec, ErrorCode::kIo, "cannot create " + (root / "augmented").string());

  std::vector<ManifestEntry> entries;
  for (const auto& e : manifest.entries()) {
    if (e.role != ImageRole::kProduct) continue;
    entries.push_back(e);
    if (augment_count == 0) continue;
    const auto variants = augment_product(load_image(e.image_path), augment_count,
                                          seed ^ fnv1a(e.product_id));
    for (int k = 0; k < augment_count; ++k) {
      char name[64];
      std::snprintf(name, sizeof name, "_a%02d.png", k);
      const auto path = root / "augmented" / (e.product_id + name);
      save_png(variants[k], path);
      entries.push_back({e.product_id, e.category, ImageRole::kAugmented, path});
    }
  }
  IngestResult result;
  result.catalog = DatasetManifest(ManifestKind::kShopping, manifest.categories(), std::move(entries));
  std::tie(result.train, result.test) =
      split_train_test(result.catalog, SplitSpec{train_fraction, seed});
  save_manifest(result.catalog, root / "catalog.tsv");
  save_manifest(result.train, root / "train.tsv");
  save_manifest(result.test, root / "test.tsv");
  return result;
}

}  // namespace streetshop::data
