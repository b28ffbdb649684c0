#include "streetshop/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "streetshop/error.hpp"

namespace streetshop::io {

Digest sha256(std::string_view bytes) {
  Digest out{};
  unsigned int len = 0;
  require(EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) == 1 &&
              len == out.size(),
          ErrorCode::kIo, "sha256 failed");
  return out;
}

std::string to_hex(const Digest& digest) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s;
  s.reserve(64);
  for (auto b : digest) {
    s.push_back(kHex[b >> 4]);
    s.push_back(kHex[b & 15]);
  }
  return s;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorCode::kIo, "short write to " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  require(!ec, ErrorCode::kIo, "cannot rename into " + path.string() + ": " + ec.message());
}

void Writer::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}

void Writer::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}

void Writer::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void Writer::f32s(std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    buf_.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(float));
  } else {
    for (float v : values) f32(v);
  }
}

void Writer::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buf_.append(s);
}

std::string_view Reader::take(std::size_t n) {
  require(n <= remaining(), ErrorCode::kFormat, "unexpected end of data");
  auto out = bytes_.substr(pos_, n);
  pos_ += n;
  return out;
}

std::uint8_t Reader::u8() { return static_cast<std::uint8_t>(take(1)[0]); }

std::uint32_t Reader::u32() {
  auto b = take(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(b[i])) << (8 * i);
  return v;
}

std::uint64_t Reader::u64() {
  auto b = take(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(b[i])) << (8 * i);
  return v;
}

float Reader::f32() { return std::bit_cast<float>(u32()); }

void Reader::f32s(std::span<float> out) {
  require(out.size() <= remaining() / sizeof(float), ErrorCode::kFormat, "unexpected end of data");
  if constexpr (std::endian::native == std::endian::little) {
    auto b = take(out.size() * sizeof(float));
    std::memcpy(out.data(), b.data(), b.size());
  } else {
    for (auto& v : out) v = f32();
  }
}

std::string Reader::str() {
  const auto n = u32();
  return std::string(take(n));
}

std::string_view Reader::raw(std::size_t n) { return take(n); }

void Reader::expect_magic(std::string_view magic, std::string_view what) {
  require(remaining() >= magic.size() && bytes_.substr(pos_, magic.size()) == magic,
          ErrorCode::kFormat, std::string(what) + ": bad magic header");
  pos_ += magic.size();
}

const Tensor& Container::tensor(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.tensor;
  fail(ErrorCode::kCheckpointMismatch, "missing tensor '" + std::string(name) + "'");
}

bool Container::has(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return true;
  return false;
}

std::string encode_container(std::string_view magic, const Container& container) {
  Writer w;
  w.raw(magic);
  w.str(container.meta.dump());
  w.u32(static_cast<std::uint32_t>(container.tensors.size()));
  for (const auto& blob : container.tensors) {
    w.str(blob.name);
    for (int d : blob.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.f32s(blob.tensor.values());
  }
  return w.take();
}

Container decode_container(std::string_view magic, std::string_view bytes, std::string_view what) {
  Reader r(bytes);
  r.expect_magic(magic, what);
  Container c;
  try {
    c.meta = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string(what) + ": corrupt metadata: " + e.what());
  }
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedBlob blob;
    blob.name = r.str();
    Tensor::Shape shape{};
    std::uint64_t elems = 1;
    for (auto& d : shape) {
      d = static_cast<int>(r.u32());
      elems *= static_cast<std::uint64_t>(d);
    }
    require(elems * sizeof(float) <= r.remaining(), ErrorCode::kFormat,
            std::string(what) + ": truncated tensor '" + blob.name + "'");
    blob.tensor = Tensor(shape);
    r.f32s(blob.tensor.values());
    c.tensors.push_back(std::move(blob));
  }
  require(r.done(), ErrorCode::kFormat, std::string(what) + ": trailing bytes");
  return c;
}

}  // namespace streetshop::io
