#pragma once

// Checkpoint container, little-endian throughout:
//
//   magic        8 bytes  "GLAHRRCK"
//   version      u32      1
//   dtype        u32      1 = float32, 2 = float64
//   variant      6 x u8   use_sca, use_add, use_mul, use_sa, use_ca, extra_conv
//   count        u32      number of arrays
//   manifest     count x { u32 name_len, name, u32 rank (=4), 4 x u32 dims, u32 dtype }
//   payload      arrays in manifest order, raw values

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "glahrr/model.hpp"

namespace glahrr {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'G', 'L', 'A', 'H', 'R', 'R', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint32_t { f32 = 1, f64 = 2 };

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

struct ArrayEntry {
  std::string name;
  std::array<std::uint32_t, 4> dims{};
  DType dtype = DType::f32;

  std::size_t count() const { return std::size_t(dims[0]) * dims[1] * dims[2] * dims[3]; }
  std::size_t bytes() const { return count() * (dtype == DType::f32 ? 4 : 8); }
};

struct CheckpointHeader {
  std::uint32_t version = kCheckpointVersion;
  DType dtype = DType::f32;
  VariantConfig variant;
  std::vector<ArrayEntry> arrays;
};

namespace detail {

template <typename V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& in, const std::string& path) {
  V v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(V))) throw LoadError("truncated checkpoint " + path);
  return v;
}

}  // namespace detail

template <typename T>
void save_checkpoint(GlaHrrModel<T>& model, const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put(out, kCheckpointVersion);
  detail::put(out, static_cast<std::uint32_t>(dtype_of<T>()));
  const VariantConfig& v = model.config();
  for (bool f : {v.use_sca, v.use_add, v.use_mul, v.use_sa, v.use_ca, v.extra_conv_when_no_attn})
    detail::put(out, static_cast<std::uint8_t>(f));
  const ParamList<T> params = model.params();
  detail::put(out, static_cast<std::uint32_t>(params.size()));
  for (const Param<T>* p : params) {
    detail::put(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    detail::put(out, std::uint32_t{4});
    const Shape& s = p->value.shape();
    for (int d : {s.n, s.c, s.h, s.w}) detail::put(out, static_cast<std::uint32_t>(d));
    detail::put(out, static_cast<std::uint32_t>(dtype_of<T>()));
  }
  for (const Param<T>* p : params)
    out.write(reinterpret_cast<const char*>(p->value.data()), static_cast<std::streamsize>(p->value.size() * sizeof(T)));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

inline CheckpointHeader read_checkpoint_header(std::istream& in, const std::string& path) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw LoadError(path + " is not a checkpoint");
  CheckpointHeader h;
  h.version = detail::get<std::uint32_t>(in, path);
  if (h.version != kCheckpointVersion) throw LoadError(path + ": unsupported checkpoint version " + std::to_string(h.version));
  const auto dtype = detail::get<std::uint32_t>(in, path);
  if (dtype != 1 && dtype != 2) throw LoadError(path + ": unknown dtype");
  h.dtype = static_cast<DType>(dtype);
  bool* flags[] = {&h.variant.use_sca, &h.variant.use_add, &h.variant.use_mul,
                   &h.variant.use_sa,  &h.variant.use_ca,  &h.variant.extra_conv_when_no_attn};
  for (bool* f : flags) *f = detail::get<std::uint8_t>(in, path) != 0;
  const auto count = detail::get<std::uint32_t>(in, path);
  if (count > 100000) throw LoadError(path + ": implausible array count");
  for (std::uint32_t i = 0; i < count; ++i) {
    ArrayEntry e;
    const auto len = detail::get<std::uint32_t>(in, path);
    if (len > 4096) throw LoadError(path + ": implausible name length");
    e.name.resize(len);
    if (!in.read(e.name.data(), len)) throw LoadError("truncated checkpoint " + path);
    if (detail::get<std::uint32_t>(in, path) != 4) throw LoadError(path + ": arrays must be rank 4");
    for (auto& d : e.dims) d = detail::get<std::uint32_t>(in, path);
    const auto et = detail::get<std::uint32_t>(in, path);
    if (et != 1 && et != 2) throw LoadError(path + ": unknown array dtype");
    e.dtype = static_cast<DType>(et);
    h.arrays.push_back(std::move(e));
  }
  return h;
}

inline CheckpointHeader read_checkpoint_header(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("checkpoint not found: " + path.string());
  return read_checkpoint_header(in, path.string());
}

// Loads into a model of scalar type T, converting stored values if needed.
template <typename T>
std::unique_ptr<GlaHrrModel<T>> load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("checkpoint not found: " + path.string());
  const CheckpointHeader h = read_checkpoint_header(in, path.string());
  std::unique_ptr<GlaHrrModel<T>> model;
  try {
    model = std::make_unique<GlaHrrModel<T>>(h.variant);
  } catch (const ConfigError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
  const ParamList<T> params = model->params();
  if (params.size() != h.arrays.size())
    throw LoadError(path.string() + ": array count does not match the stored variant");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Shape& s = params[i]->value.shape();
    const ArrayEntry& e = h.arrays[i];
    const std::array<std::uint32_t, 4> want{std::uint32_t(s.n), std::uint32_t(s.c), std::uint32_t(s.h),
                                            std::uint32_t(s.w)};
    if (e.name != params[i]->name || e.dims != want)
      throw LoadError(path.string() + ": array '" + e.name + "' does not match '" + params[i]->name + "'");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ArrayEntry& e = h.arrays[i];
    T* dst = params[i]->value.data();
    if (e.dtype == dtype_of<T>()) {
      if (!in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(e.bytes())))
        throw LoadError("truncated checkpoint " + path.string());
    } else if (e.dtype == DType::f32) {
      std::vector<float> buf(e.count());
      if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(e.bytes())))
        throw LoadError("truncated checkpoint " + path.string());
      std::copy(buf.begin(), buf.end(), dst);
    } else {
      std::vector<double> buf(e.count());
      if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(e.bytes())))
        throw LoadError("truncated checkpoint " + path.string());
      for (std::size_t k = 0; k < buf.size(); ++k) dst[k] = static_cast<T>(buf[k]);
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw LoadError(path.string() + ": trailing bytes");
  return model;
}

}  // namespace glahrr
