#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "streetshop/tensor.hpp"

namespace streetshop::io {

using Digest = std::array<std::uint8_t, 32>;

Digest sha256(std::string_view bytes);
std::string to_hex(const Digest& digest);

std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames, so readers never observe
/// a partially written file.
void write_file(const std::filesystem::path& path, std::string_view bytes);

/// Little-endian encoder.
class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f32s(std::span<const float> values);
  void str(std::string_view s);  // u32 length prefix + UTF-8 bytes
  void raw(std::string_view bytes) { buf_.append(bytes); }

  const std::string& bytes() const noexcept { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

/// Little-endian decoder; any read past the end is a format error.
class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  void f32s(std::span<float> out);
  std::string str();
  std::string_view raw(std::size_t n);
  void expect_magic(std::string_view magic, std::string_view what);

  bool done() const noexcept { return pos_ == bytes_.size(); }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  std::string_view take(std::size_t n);

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

struct NamedBlob {
  std::string name;
  Tensor tensor;
};

/// Self-describing parameter container shared by both checkpoint kinds:
/// magic | u32 meta length | JSON metadata | u32 tensor count |
/// per tensor (name, 4 x u32 dims, little-endian f32 data).
struct Container {
  nlohmann::json meta;
  std::vector<NamedBlob> tensors;

  const Tensor& tensor(std::string_view name) const;
  bool has(std::string_view name) const;
};

std::string encode_container(std::string_view magic, const Container& container);
Container decode_container(std::string_view magic, std::string_view bytes, std::string_view what);

}  // namespace streetshop::io
