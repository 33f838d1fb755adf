#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "mcl/tasks/pool.hpp"

namespace mcl::tasks {

// MCSH image pool, little-endian:
//   "MCSH" | u32 version=1 | u32 count | u32 height=32 | u32 width=32 | u32 channels=3
//   | count * 3072 u8 pixels (row-major RGB) | count * u16 class labels
//   | u8 attribute flag | [count * u8 shape ids | count * u8 color ids]

inline constexpr std::uint32_t kMcshVersion = 1;

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& buf) : buf_(buf) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(buf_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    const std::uint16_t v = static_cast<std::uint16_t>(buf_[pos_] | (buf_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return buf_[pos_++];
  }
  std::vector<std::uint8_t> bytes(std::size_t n, const char* what) {
    need(n, what);
    std::vector<std::uint8_t> v(buf_.begin() + pos_, buf_.begin() + pos_ + n);
    pos_ += n;
    return v;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (buf_.size() - pos_ < n) throw FormatError(std::string("truncated MCSH file while reading ") + what, pos_);
  }
  const std::vector<std::uint8_t>& buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_pool(const LabeledPool& pool) {
  if (pool.kind() != LabeledPool::Kind::Image) throw ContractError("MCSH stores image pools only");
  std::vector<std::uint8_t> out{'M', 'C', 'S', 'H'};
  const auto count = static_cast<std::uint32_t>(pool.size());
  detail::put_u32(out, kMcshVersion);
  detail::put_u32(out, count);
  detail::put_u32(out, kImageSide);
  detail::put_u32(out, kImageSide);
  detail::put_u32(out, kChannels);
  out.insert(out.end(), pool.pixels().begin(), pool.pixels().end());
  for (std::uint16_t l : pool.labels()) {
    out.push_back(static_cast<std::uint8_t>(l & 0xff));
    out.push_back(static_cast<std::uint8_t>(l >> 8));
  }
  out.push_back(pool.has_attributes() ? 1 : 0);
  if (pool.has_attributes()) {
    out.insert(out.end(), pool.shape_ids().begin(), pool.shape_ids().end());
    out.insert(out.end(), pool.color_ids().begin(), pool.color_ids().end());
  }
  return out;
}

inline LabeledPool decode_pool(const std::vector<std::uint8_t>& buf) {
  detail::Reader r(buf);
  auto magic = r.bytes(4, "magic");
  if (std::memcmp(magic.data(), "MCSH", 4) != 0) throw FormatError("bad MCSH magic", 0);
  const std::size_t version_at = r.pos();
  if (r.u32("version") != kMcshVersion) throw FormatError("unsupported MCSH version", version_at);
  const std::uint32_t count = r.u32("count");
  const std::size_t dims_at = r.pos();
  const std::uint32_t h = r.u32("height"), w = r.u32("width"), c = r.u32("channels");
  if (h != kImageSide || w != kImageSide || c != kChannels) throw FormatError("MCSH images must be 32x32x3", dims_at);
  auto pixels = r.bytes(std::size_t(count) * kImageBytes, "pixels");
  std::vector<std::uint16_t> labels(count);
  for (auto& l : labels) l = r.u16("labels");
  const std::size_t flag_at = r.pos();
  const std::uint8_t flag = r.u8("attribute flag");
  if (flag > 1) throw FormatError("attribute flag must be 0 or 1", flag_at);
  auto pool = LabeledPool::images(std::move(pixels), std::move(labels));
  if (flag == 1) {
    auto shapes = r.bytes(count, "shape ids");
    auto colors = r.bytes(count, "color ids");
    pool.set_attributes(std::move(shapes), std::move(colors));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after MCSH payload", r.pos());
  return pool;
}

inline void save_image_pool(const LabeledPool& pool, const std::string& path) {
  const auto bytes = encode_pool(pool);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!f) throw Error("failed writing '" + path + "'");
}

inline LabeledPool load_image_pool(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open '" + path + "'", 0);
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_pool(buf);
}

}  // namespace mcl::tasks
