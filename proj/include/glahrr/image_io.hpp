#pragma once

// 8-bit RGB PNG <-> (1,3,H,W) tensors in [0,1].

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "glahrr/tensor.hpp"

namespace glahrr {

namespace fs = std::filesystem;

template <typename T = float>
Tensor<T> load_image(const fs::path& path) {
  if (!fs::exists(path)) throw NotFoundError("image not found: " + path.string());
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str()))
    throw DecodeError("cannot decode " + path.string() + ": " + img.message);
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  const bool linear = (img.format & PNG_FORMAT_FLAG_LINEAR) != 0;
  if (!color || linear) {
    png_image_free(&img);
    throw DecodeError(path.string() + " is not an 8-bit RGB image");
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr))
    throw DecodeError("cannot decode " + path.string() + ": " + img.message);
  const int h = static_cast<int>(img.height), w = static_cast<int>(img.width);
  Tensor<T> out(Shape{1, 3, h, w}, T(0), Kind::image);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out(0, c, y, x) = static_cast<T>(buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0);
  return out;
}

// Clamp to [0,1], round half up to the nearest 1/255 level.
inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5));
}

template <typename T>
void save_image(const Tensor<T>& img, const fs::path& path) {
  if (img.n() != 1 || img.c() != 3)
    throw ShapeError("save_image expects a (1,3,H,W) tensor, got " + img.shape().str());
  std::vector<png_byte> buf(img.size());
  for (int y = 0; y < img.h(); ++y)
    for (int x = 0; x < img.w(); ++x)
      for (int c = 0; c < 3; ++c)
        buf[(static_cast<std::size_t>(y) * img.w() + x) * 3 + c] = to_byte(double(img(0, c, y, x)));
  png_image out{};
  out.version = PNG_IMAGE_VERSION;
  out.width = static_cast<png_uint_32>(img.w());
  out.height = static_cast<png_uint_32>(img.h());
  out.format = PNG_FORMAT_RGB;
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  if (!png_image_write_to_file(&out, path.string().c_str(), 0, buf.data(), 0, nullptr))
    throw IoError("cannot write " + path.string() + ": " + out.message);
}

// Single-channel map saved as gray RGB, linearly mapped from [lo, hi] to [0,1].
template <typename T>
void save_gray(const Tensor<T>& map, int n, int c, double lo, double hi, const fs::path& path) {
  Tensor<T> rgb(Shape{1, 3, map.h(), map.w()}, T(0), Kind::image);
  const double span = hi > lo ? hi - lo : 1.0;
  const T* src = map.plane(n, c);
  for (int k = 0; k < 3; ++k) {
    T* dst = rgb.plane(0, k);
    for (std::size_t i = 0; i < map.shape().plane(); ++i) dst[i] = static_cast<T>((src[i] - lo) / span);
  }
  save_image(rgb, path);
}

}  // namespace glahrr
