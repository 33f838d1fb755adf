#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>
#include <zlib.h>

#include "mcl/diff/sgd.hpp"
#include "mcl/error.hpp"
#include "mcl/log.hpp"

#ifndef MCL_VERSION
#define MCL_VERSION "unknown"
#endif

namespace mcl::io {

inline constexpr int kCheckpointSchema = 1;

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    c = crc32(c, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

namespace detail {

inline void put_le32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

inline std::uint32_t get_le32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot read " + path, 0);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// Writes to a sibling temp file, then renames over `path`.
inline void write_file_atomic(const std::string& path, const void* data, std::size_t n) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + tmp);
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!f) throw Error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

inline std::string blob_path(const std::string& manifest_path) { return manifest_path + ".bin"; }

struct StoredTensor {
  std::string name;
  std::string group;
  diff::Tensor<float> value;
};

struct Checkpoint {
  std::size_t step = 0;
  std::string config_hash;
  std::string version;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<StoredTensor> tensors;

  const StoredTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

/// Writes `path` (JSON manifest) and `path`.bin: the parameters as
/// little-endian float32 in manifest order, followed by the CRC32 of those
/// bytes. Parameter names must be unique.
inline void save_checkpoint(const std::string& path, const diff::ParamList<float>& params, std::size_t step,
                            const std::string& config_hash, const nlohmann::json& meta = nlohmann::json::object()) {
  std::set<std::string> seen;
  for (const auto& p : params)
    if (!seen.insert(p.name).second) throw ContractError("save_checkpoint: duplicate tensor name '" + p.name + "'");

  std::vector<std::uint8_t> blob;
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& p : params) {
    const auto d = p.tensor->data();
    for (float v : d) detail::put_le32(blob, std::bit_cast<std::uint32_t>(v));
    tensors.push_back({{"name", p.name}, {"group", p.group}, {"shape", p.tensor->shape()}, {"offset", offset}});
    offset += d.size();
  }
  const std::uint32_t crc = crc32_of(blob.data(), blob.size());
  detail::put_le32(blob, crc);

  const std::string bin = blob_path(path);
  nlohmann::json m = {{"format", "mcl-checkpoint"},
                      {"schema", kCheckpointSchema},
                      {"version", MCL_VERSION},
                      {"step", step},
                      {"config_hash", config_hash},
                      {"blob", std::filesystem::path(bin).filename().string()},
                      {"float_count", offset},
                      {"crc32", crc},
                      {"tensors", tensors},
                      {"meta", meta}};
  detail::write_file_atomic(bin, blob.data(), blob.size());
  const std::string text = m.dump(2) + "\n";
  detail::write_file_atomic(path, text.data(), text.size());
}

inline Checkpoint load_checkpoint(const std::string& path) {
  const auto text = detail::read_file(path);
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("checkpoint manifest " + path + " is not valid JSON", e.byte);
  }
  Checkpoint ck;
  std::size_t float_count = 0;
  std::uint32_t manifest_crc = 0;
  std::string blob_name;
  try {
    if (m.at("format") != "mcl-checkpoint") throw FormatError("not a checkpoint manifest: " + path, 0);
    if (m.at("schema").get<int>() != kCheckpointSchema)
      throw FormatError("unsupported checkpoint schema " + m.at("schema").dump(), 0);
    ck.step = m.at("step").get<std::size_t>();
    ck.config_hash = m.at("config_hash").get<std::string>();
    ck.version = m.value("version", std::string("unknown"));
    ck.meta = m.value("meta", nlohmann::json::object());
    float_count = m.at("float_count").get<std::size_t>();
    manifest_crc = m.at("crc32").get<std::uint32_t>();
    blob_name = m.at("blob").get<std::string>();
    for (const auto& t : m.at("tensors")) {
      StoredTensor st;
      st.name = t.at("name").get<std::string>();
      st.group = t.value("group", std::string());
      st.value = diff::Tensor<float>(t.at("shape").get<diff::Shape>());
      if (ck.find(st.name)) throw FormatError("checkpoint lists tensor '" + st.name + "' twice", 0);
      ck.tensors.push_back(std::move(st));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed checkpoint manifest " + path + ": " + e.what(), 0);
  }

  const auto bin = (std::filesystem::path(path).parent_path() / blob_name).string();
  const auto blob = detail::read_file(bin);
  if (blob.size() != 4 * float_count + 4)
    throw CorruptionError("checkpoint blob " + bin + " has " + std::to_string(blob.size()) + " bytes, expected " +
                          std::to_string(4 * float_count + 4));
  const std::uint32_t stored = detail::get_le32(blob.data() + 4 * float_count);
  const std::uint32_t actual = crc32_of(blob.data(), 4 * float_count);
  if (stored != actual || stored != manifest_crc) throw CorruptionError("checkpoint blob " + bin + " fails its CRC32 check");

  std::size_t offset = 0;
  for (auto& t : ck.tensors) {
    auto d = t.value.data();
    if (offset + d.size() > float_count) throw CorruptionError("checkpoint tensors overrun the blob");
    for (std::size_t i = 0; i < d.size(); ++i)
      d[i] = std::bit_cast<float>(detail::get_le32(blob.data() + 4 * (offset + i)));
    offset += d.size();
  }
  if (offset != float_count) throw CorruptionError("checkpoint blob holds values not listed in the manifest");
  return ck;
}

/// Copies stored values into `params`. The two name sets must match
/// exactly, with equal shapes; gradient flags on `params` are kept.
inline void restore(const Checkpoint& ck, const diff::ParamList<float>& params) {
  if (params.size() != ck.tensors.size())
    throw FormatError("checkpoint has " + std::to_string(ck.tensors.size()) + " tensors, model has " +
                          std::to_string(params.size()),
                      0);
  for (const auto& p : params) {
    const auto* st = ck.find(p.name);
    if (!st) throw FormatError("checkpoint has no tensor '" + p.name + "'", 0);
    if (st->value.shape() != p.tensor->shape())
      throw FormatError("checkpoint tensor '" + p.name + "' has shape " + diff::to_string(st->value.shape()) +
                            ", model expects " + diff::to_string(p.tensor->shape()),
                        0);
    auto d = p.tensor->data();
    const auto s = st->value.data();
    std::copy(s.begin(), s.end(), d.begin());
  }
}

/// Warns (and returns false) when the checkpoint was written under a
/// different resolved config.
inline bool check_config_hash(const Checkpoint& ck, const std::string& expected) {
  if (ck.config_hash == expected) return true;
  log::info("warning: checkpoint config hash %s differs from current config %s", ck.config_hash.c_str(),
            expected.c_str());
  return false;
}

}  // namespace mcl::io
