#include "streetshop/image.hpp"

#include <algorithm>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "streetshop/binary_io.hpp"
#include "streetshop/error.hpp"

namespace streetshop {

cv::Mat decode_image(std::string_view bytes) {
  require(!bytes.empty(), ErrorCode::kDecode, "empty image data");
  cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<char*>(bytes.data()));
  cv::Mat img;
  try {
    img = cv::imdecode(raw, cv::IMREAD_UNCHANGED);
  } catch (const cv::Exception& e) {
    fail(ErrorCode::kDecode, std::string("cannot decode image: ") + e.what());
  }
  require(!img.empty(), ErrorCode::kDecode, "cannot decode image data");
  require(img.depth() == CV_8U, ErrorCode::kDecode, "only 8-bit images are supported");
  if (img.channels() == 4) {
    cv::Mat bgr;
    cv::cvtColor(img, bgr, cv::COLOR_BGRA2BGR);
    return bgr;
  }
  require(img.channels() == 3, ErrorCode::kDecode,
          "expected an RGB image, got " + std::to_string(img.channels()) + " channel(s)");
  return img;
}

cv::Mat load_image(const std::filesystem::path& path) {
  try {
    return decode_image(io::read_file(path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kIo) throw;
    fail(e.code(), path.string() + ": " + e.what());
  }
}

std::string encode_png(const cv::Mat& image) {
  require(!image.empty(), ErrorCode::kArgument, "cannot encode an empty image");
  std::vector<uchar> buf;
  require(cv::imencode(".png", image, buf), ErrorCode::kIo, "png encoding failed");
  return std::string(buf.begin(), buf.end());
}

void save_png(const cv::Mat& image, const std::filesystem::path& path) {
  io::write_file(path, encode_png(image));
}

Tensor preprocess(const cv::Mat& image, int size) {
  require(size > 0, ErrorCode::kArgument, "preprocess size must be positive");
  require(!image.empty() && image.rows > 0 && image.cols > 0, ErrorCode::kDecode,
          "zero-dimension image");
  require(image.type() == CV_8UC3, ErrorCode::kDecode, "expected an 8-bit RGB image");
  const int side = std::min(image.rows, image.cols);
  const cv::Rect crop((image.cols - side) / 2, (image.rows - side) / 2, side, side);
  cv::Mat square = image(crop);
  cv::Mat resized;
  if (side == size) {
    resized = square;
  } else {
    cv::resize(square, resized, cv::Size(size, size), 0, 0,
               side > size ? cv::INTER_AREA : cv::INTER_LINEAR);
  }
  Tensor t(1, 3, size, size);
  for (int y = 0; y < size; ++y) {
    const auto* row = resized.ptr<cv::Vec3b>(y);
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c)
        t.at(0, c, y, x) = static_cast<float>(row[x][2 - c]) / 127.5f - 1.0f;
  }
  return t;
}

cv::Mat tensor_to_image(const Tensor& t, int index) {
  require(t.c() == 3 && index >= 0 && index < t.n(), ErrorCode::kShape,
          "tensor_to_image expects an N x 3 x H x W tensor");
  cv::Mat img(t.h(), t.w(), CV_8UC3);
  for (int y = 0; y < t.h(); ++y) {
    auto* row = img.ptr<cv::Vec3b>(y);
    for (int x = 0; x < t.w(); ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(t.at(index, c, y, x), -1.0f, 1.0f);
        row[x][2 - c] = cv::saturate_cast<uchar>((v + 1.0f) * 127.5f);
      }
  }
  return img;
}

}  // namespace streetshop
