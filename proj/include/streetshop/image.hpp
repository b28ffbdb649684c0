#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <opencv2/core.hpp>

#include "streetshop/tensor.hpp"

namespace streetshop {

// Decoded images are 8-bit, 3-channel cv::Mat in OpenCV's BGR order.
// Tensors produced from them are RGB, NCHW, with values in [-1, 1].

cv::Mat decode_image(std::string_view bytes);
cv::Mat load_image(const std::filesystem::path& path);
std::string encode_png(const cv::Mat& image);
void save_png(const cv::Mat& image, const std::filesystem::path& path);

/// Center-crops to a square, resizes to `size` x `size` and maps channel
/// values to [-1, 1]. Returns a 1 x 3 x size x size tensor.
Tensor preprocess(const cv::Mat& image, int size);

/// Inverse of the normalization for item `index`; values are clamped to [-1, 1].
cv::Mat tensor_to_image(const Tensor& t, int index = 0);

}  // namespace streetshop
