#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "histokt/crc32.hpp"
#include "histokt/io_util.hpp"
#include "histokt/tensor.hpp"

namespace histokt {

/// Named parameter tensors plus architecture metadata. Layer order is
/// preserved; it defines serialization order and merge ordering.
struct Checkpoint {
  std::string arch_id;
  std::uint32_t class_count = 0;
  std::vector<std::pair<std::string, Tensor>> params;
  std::map<std::string, std::string> meta;

  void add(std::string name, Tensor t) {
    if (find(name) != nullptr) throw DataError("duplicate layer name: " + name);
    params.emplace_back(std::move(name), std::move(t));
  }

  Tensor* find(const std::string& name) {
    for (auto& [n, t] : params)
      if (n == name) return &t;
    return nullptr;
  }
  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : params)
      if (n == name) return &t;
    return nullptr;
  }

  const Tensor& at(const std::string& name) const {
    const Tensor* t = find(name);
    if (!t) throw DataError("missing layer: " + name);
    return *t;
  }
  Tensor& at(const std::string& name) {
    Tensor* t = find(name);
    if (!t) throw DataError("missing layer: " + name);
    return *t;
  }

  bool all_finite() const {
    for (const auto& [n, t] : params)
      if (!t.all_finite()) return false;
    return true;
  }
};

inline bool operator==(const Checkpoint& a, const Checkpoint& b) {
  if (a.arch_id != b.arch_id || a.class_count != b.class_count || a.meta != b.meta) return false;
  if (a.params.size() != b.params.size()) return false;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    if (a.params[i].first != b.params[i].first) return false;
    if (a.params[i].second.dims != b.params[i].second.dims) return false;
    if (a.params[i].second.data != b.params[i].second.data) return false;
  }
  return true;
}

namespace hktw {
inline constexpr char kMagic[4] = {'H', 'K', 'T', 'W'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 1;
}  // namespace hktw

/// Serializes to the HKTW v1 layout. Byte-reproducible: meta JSON keys are
/// emitted sorted and all integers are little-endian.
inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  for (const auto& [name, t] : ckpt.params) {
    if (!t.all_finite()) throw DataError("non-finite parameter in layer: " + name);
    if (name.size() > 0xFFFF) throw DataError("layer name too long: " + name);
    if (t.rank() > 0xFF) throw DataError("tensor rank too large in layer: " + name);
  }

  nlohmann::json meta;
  meta["arch_id"] = ckpt.arch_id;
  meta["class_count"] = ckpt.class_count;
  for (const auto& [k, v] : ckpt.meta) {
    if (k == "arch_id" || k == "class_count") continue;
    meta[k] = v;
  }
  const std::string meta_str = meta.dump();

  ByteWriter w;
  w.raw(hktw::kMagic, 4);
  w.u32(hktw::kVersion);
  w.u32(static_cast<std::uint32_t>(meta_str.size()));
  w.raw(meta_str.data(), meta_str.size());
  w.u32(static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& [name, t] : ckpt.params) {
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.raw(name.data(), name.size());
    w.u8(hktw::kDtypeF32);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (std::uint32_t d : t.dims) w.u32(d);
    for (float v : t.data) w.f32(v);
  }
  w.u32(crc32(w.bytes.data(), w.bytes.size()));
  return w.bytes;
}

inline Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), hktw::kMagic, 4) != 0) {
    throw DataError("bad magic: not an HKTW checkpoint");
  }
  if (bytes.size() < 12 + 4) throw DataError("truncated file");

  const std::uint32_t stored_crc =
      static_cast<std::uint32_t>(bytes[bytes.size() - 4]) |
      static_cast<std::uint32_t>(bytes[bytes.size() - 3]) << 8 |
      static_cast<std::uint32_t>(bytes[bytes.size() - 2]) << 16 |
      static_cast<std::uint32_t>(bytes[bytes.size() - 1]) << 24;
  const std::uint32_t actual_crc = crc32(bytes.data(), bytes.size() - 4);
  if (stored_crc != actual_crc) throw DataError("CRC mismatch: checkpoint is corrupt");

  ByteReader r(bytes.data(), bytes.size() - 4);
  r.pos = 4;
  const std::uint32_t version = r.u32();
  if (version != hktw::kVersion) {
    throw DataError("unsupported HKTW version: " + std::to_string(version));
  }

  Checkpoint ckpt;
  const std::uint32_t meta_len = r.u32();
  const std::string meta_str = r.str(meta_len);
  nlohmann::json meta = nlohmann::json::parse(meta_str, nullptr, false);
  if (meta.is_discarded() || !meta.is_object()) throw DataError("malformed meta JSON");
  if (!meta.contains("arch_id") || !meta["arch_id"].is_string())
    throw DataError("meta missing arch_id");
  if (!meta.contains("class_count") || !meta["class_count"].is_number_unsigned())
    throw DataError("meta missing class_count");
  ckpt.arch_id = meta["arch_id"].get<std::string>();
  ckpt.class_count = meta["class_count"].get<std::uint32_t>();
  for (auto it = meta.begin(); it != meta.end(); ++it) {
    if (it.key() == "arch_id" || it.key() == "class_count") continue;
    if (!it.value().is_string()) throw DataError("meta values must be strings: " + it.key());
    ckpt.meta[it.key()] = it.value().get<std::string>();
  }

  const std::uint32_t tensor_count = r.u32();
  for (std::uint32_t i = 0; i < tensor_count; ++i) {
    const std::uint16_t name_len = r.u16();
    std::string name = r.str(name_len);
    const std::uint8_t dtype = r.u8();
    if (dtype != hktw::kDtypeF32)
      throw DataError("unsupported dtype " + std::to_string(dtype) + " in layer: " + name);
    const std::uint8_t ndim = r.u8();
    if (ndim == 0) throw DataError("zero-rank tensor in layer: " + name);
    std::vector<std::uint32_t> dims(ndim);
    std::size_t numel = 1;
    for (auto& d : dims) {
      d = r.u32();
      if (d == 0) throw DataError("zero extent in layer: " + name);
      numel *= d;
    }
    std::vector<float> data(numel);
    r.need(numel * 4);
    for (auto& v : data) v = r.f32();
    ckpt.add(std::move(name), Tensor(std::move(dims), std::move(data)));
  }
  if (r.pos != r.len) throw DataError("trailing bytes after tensor table");
  return ckpt;
}

inline void write_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

inline Checkpoint read_checkpoint(const std::string& path) {
  return deserialize_checkpoint(read_file_bytes(path));
}

/// Default predicate for layers allowed to differ when heads are excluded.
inline bool is_head_layer(const std::string& name) { return name.rfind("head.", 0) == 0; }

/// Checks architectural compatibility. With allow_head_mismatch, the head
/// layers (and class_count) may differ; everything else must match by name
/// and dims. Throws DataError naming the first mismatching layer.
inline void assert_compatible(const Checkpoint& a, const Checkpoint& b,
                              bool allow_head_mismatch = false,
                              const std::function<bool(const std::string&)>& head_pred =
                                  is_head_layer) {
  if (a.arch_id != b.arch_id) {
    throw DataError("incompatible checkpoints: arch_id '" + a.arch_id + "' vs '" + b.arch_id +
                    "'");
  }
  if (a.class_count != b.class_count && !allow_head_mismatch) {
    throw DataError("incompatible checkpoints: class_count " + std::to_string(a.class_count) +
                    " vs " + std::to_string(b.class_count));
  }
  if (a.params.size() != b.params.size()) {
    throw DataError("incompatible checkpoints: layer counts " +
                    std::to_string(a.params.size()) + " vs " + std::to_string(b.params.size()));
  }
  for (const auto& [name, ta] : a.params) {
    const Tensor* tb = b.find(name);
    if (!tb) throw DataError("incompatible checkpoints: missing layer '" + name + "'");
    if (ta.dims != tb->dims) {
      if (allow_head_mismatch && head_pred(name)) continue;
      throw DataError("incompatible checkpoints: layer '" + name + "' dims " +
                      dims_to_string(ta.dims) + " vs " + dims_to_string(tb->dims));
    }
  }
}

}  // namespace histokt
