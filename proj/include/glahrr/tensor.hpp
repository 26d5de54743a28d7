#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "glahrr/errors.hpp"

namespace glahrr {

// What a tensor holds. Only `image` and `weight_map` carry range invariants.
enum class Kind { image, feature, residue, weight_map };

struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t count() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
  }
};

// Dense (batch, channel, height, width) array in row-major order.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0), Kind kind = Kind::feature)
      : shape_(shape), kind_(kind), data_(shape.count(), fill) {
    if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1)
      throw ShapeError("tensor dimensions must be positive, got " + shape.str());
  }
  Tensor(int n, int c, int h, int w, T fill = T(0))
      : Tensor(Shape{n, c, h, w}, fill) {}

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Kind kind() const { return kind_; }
  void set_kind(Kind k) { kind_ = k; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  T* plane(int n, int c) {
    return data_.data() + (static_cast<std::size_t>(n) * shape_.c + c) * shape_.plane();
  }
  const T* plane(int n, int c) const {
    return data_.data() + (static_cast<std::size_t>(n) * shape_.c + c) * shape_.plane();
  }
  // Start of sample n; its c*h*w values are contiguous.
  T* sample(int n) { return plane(n, 0); }
  const T* sample(int n) const { return plane(n, 0); }

  T& operator()(int n, int c, int h, int w) {
    return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }
  const T& operator()(int n, int c, int h, int w) const {
    return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    require_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  void require_same(const Tensor& o, const char* what) const {
    if (!(shape_ == o.shape_))
      throw ShapeError(std::string(what) + ": shape mismatch " + shape_.str() + " vs " +
                       o.shape_.str());
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_, U(0), kind_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  Shape shape_{};
  Kind kind_ = Kind::feature;
  std::vector<T> data_;
};

template <typename T>
bool all_finite(const Tensor<T>& t) {
  return std::all_of(t.values().begin(), t.values().end(),
                     [](T v) { return std::isfinite(v); });
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  a.require_same(b, "max_abs_diff");
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Throws DomainError unless t is a 3-channel tensor with values in [0,1].
template <typename T>
void require_image_range(const Tensor<T>& t, const char* what) {
  if (t.c() != 3) throw DomainError(std::string(what) + ": expected 3 channels, got " + t.shape().str());
  for (T v : t.values())
    if (!(v >= T(0) && v <= T(1)))
      throw DomainError(std::string(what) + ": image values must lie in [0,1]");
}

template <typename T>
Tensor<T> clamp01(Tensor<T> t) {
  for (T& v : t.values()) v = std::clamp(v, T(0), T(1));
  return t;
}

// Concatenate along the channel axis; all parts share n, h, w.
template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>* const> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: nothing to concatenate");
  const Shape& s0 = parts[0]->shape();
  int channels = 0;
  for (const Tensor<T>* p : parts) {
    const Shape& s = p->shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w)
      throw ShapeError("concat_channels: spatial mismatch " + s0.str() + " vs " + s.str());
    channels += s.c;
  }
  Tensor<T> out(Shape{s0.n, channels, s0.h, s0.w});
  const std::size_t plane = s0.plane();
  for (int n = 0; n < s0.n; ++n) {
    T* dst = out.sample(n);
    for (const Tensor<T>* p : parts) {
      const std::size_t len = static_cast<std::size_t>(p->c()) * plane;
      std::copy_n(p->sample(n), len, dst);
      dst += len;
    }
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Tensor<T>* parts[] = {&a, &b};
  return concat_channels<T>(parts);
}

// Channels [begin, begin+count) of t.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& t, int begin, int count) {
  if (begin < 0 || count < 1 || begin + count > t.c())
    throw ShapeError("slice_channels: range out of bounds for " + t.shape().str());
  Tensor<T> out(Shape{t.n(), count, t.h(), t.w()});
  const std::size_t len = static_cast<std::size_t>(count) * t.shape().plane();
  for (int n = 0; n < t.n(); ++n) std::copy_n(t.plane(n, begin), len, out.sample(n));
  return out;
}

// Spatial window [y, y+h) x [x, x+w).
template <typename T>
Tensor<T> crop(const Tensor<T>& t, int y, int x, int h, int w) {
  if (y < 0 || x < 0 || h < 1 || w < 1 || y + h > t.h() || x + w > t.w())
    throw SizeError("crop window exceeds tensor " + t.shape().str());
  Tensor<T> out(Shape{t.n(), t.c(), h, w}, T(0), t.kind());
  for (int n = 0; n < t.n(); ++n)
    for (int c = 0; c < t.c(); ++c)
      for (int r = 0; r < h; ++r)
        std::copy_n(&t(n, c, y + r, x), w, &out(n, c, r, 0));
  return out;
}

// Zero-extend t to (h, w) by adding rows/columns at the bottom/right.
template <typename T>
Tensor<T> zero_extend(const Tensor<T>& t, int h, int w) {
  Tensor<T> out(Shape{t.n(), t.c(), h, w}, T(0), t.kind());
  for (int n = 0; n < t.n(); ++n)
    for (int c = 0; c < t.c(); ++c)
      for (int r = 0; r < t.h(); ++r) std::copy_n(&t(n, c, r, 0), t.w(), &out(n, c, r, 0));
  return out;
}

// Mirror index into [0, len) without repeating the edge sample.
inline int reflect_index(int i, int len) {
  if (len == 1) return 0;
  const int period = 2 * (len - 1);
  i %= period;
  if (i < 0) i += period;
  return i < len ? i : period - i;
}

// Reflect-pad at the bottom/right to (h, w).
template <typename T>
Tensor<T> reflect_extend(const Tensor<T>& t, int h, int w) {
  Tensor<T> out(Shape{t.n(), t.c(), h, w}, T(0), t.kind());
  for (int n = 0; n < t.n(); ++n)
    for (int c = 0; c < t.c(); ++c)
      for (int r = 0; r < h; ++r)
        for (int col = 0; col < w; ++col)
          out(n, c, r, col) = t(n, c, reflect_index(r, t.h()), reflect_index(col, t.w()));
  return out;
}

// Sample i of a batch as a batch of one.
template <typename T>
Tensor<T> take_sample(const Tensor<T>& t, int i) {
  Tensor<T> out(Shape{1, t.c(), t.h(), t.w()}, T(0), t.kind());
  std::copy_n(t.sample(i), out.size(), out.data());
  return out;
}

template <typename T>
Tensor<T> stack_samples(std::span<const Tensor<T>> items) {
  if (items.empty()) throw ShapeError("stack_samples: empty batch");
  const Shape s = items[0].shape();
  Tensor<T> out(Shape{static_cast<int>(items.size()), s.c, s.h, s.w}, T(0), items[0].kind());
  const std::size_t len = static_cast<std::size_t>(s.c) * s.plane();
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Shape& si = items[i].shape();
    if (si.n != 1 || si.c != s.c || si.h != s.h || si.w != s.w)
      throw ShapeError("stack_samples: item " + std::to_string(i) + " has shape " + si.str());
    std::copy_n(items[i].data(), len, out.sample(static_cast<int>(i)));
  }
  return out;
}

}  // namespace glahrr
