#pragma once

// Layer primitives with hand-written backward passes. Every layer caches what
// its backward pass needs during forward, so forward/backward must alternate
// on the same input.

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "glahrr/gemm.hpp"
#include "glahrr/rng.hpp"
#include "glahrr/tensor.hpp"

namespace glahrr {

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  int fan_in = 0;  // 0 marks a bias
  int fan_out = 0;

  Param(std::string n, Shape s, int in, int out)
      : name(std::move(n)), value(s), grad(s), fan_in(in), fan_out(out) {}
  bool is_bias() const { return fan_in == 0; }
};

template <typename T>
using ParamList = std::vector<Param<T>*>;

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<T> forward(const Tensor<T>& x) = 0;
  // Consumes dL/d(output), accumulates parameter gradients, returns dL/d(input).
  virtual Tensor<T> backward(const Tensor<T>& dy) = 0;
  virtual void collect_params(ParamList<T>&) {}
};

template <typename T>
ParamList<T> params_of(Layer<T>& layer) {
  ParamList<T> out;
  layer.collect_params(out);
  return out;
}

template <typename T>
void zero_grads(const ParamList<T>& params) {
  for (Param<T>* p : params) p->grad.fill(T(0));
}

// Uniform in +-sqrt(6 / (fan_in + fan_out)) for weights, zero for biases; one
// Rng(seed) stream consumed in list order.
template <typename T>
void xavier_init(const ParamList<T>& params, std::uint64_t seed) {
  Rng rng(seed);
  for (Param<T>* p : params) {
    if (p->is_bias()) {
      p->value.fill(T(0));
      continue;
    }
    const double bound = std::sqrt(6.0 / (p->fan_in + p->fan_out));
    for (T& v : p->value.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  }
}

// k x k convolution, zero padding, with bias. Weight layout (out, in, k, k).
template <typename T>
class Conv2d : public Layer<T> {
 public:
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride = 1,
         int pad = -1)
      : in_(in_channels),
        out_(out_channels),
        k_(kernel),
        stride_(stride),
        pad_(pad < 0 ? kernel / 2 : pad),
        weight_(name + ".weight", Shape{out_channels, in_channels, kernel, kernel},
                in_channels * kernel * kernel, out_channels * kernel * kernel),
        bias_(name + ".bias", Shape{out_channels, 1, 1, 1}, 0, 0) {}

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }

  Tensor<T> forward(const Tensor<T>& x) override {
    if (x.c() != in_)
      throw ConfigError(weight_.name + ": expected " + std::to_string(in_) + " input channels, got " +
                        std::to_string(x.c()));
    x_ = x;
    const detail::ConvGeometry g = geometry(x.h(), x.w());
    Tensor<T> y(Shape{x.n(), out_, g.out_h, g.out_w});
    const int kdim = g.rows();
    const int out_plane = g.out_h * g.out_w;
    for (int n = 0; n < x.n(); ++n) {
      if (pointwise()) {
        detail::gemm(false, false, out_, out_plane, in_, T(1), weight_.value.data(), in_,
                     x.sample(n), out_plane, T(0), y.sample(n), out_plane);
      } else {
        const int rows = detail::chunk_rows(g);
        col_.resize(static_cast<std::size_t>(kdim) * rows * g.out_w);
        for (int oy0 = 0; oy0 < g.out_h; oy0 += rows) {
          const int oy1 = std::min(g.out_h, oy0 + rows);
          const int ncols = (oy1 - oy0) * g.out_w;
          detail::im2col(x.sample(n), g, oy0, oy1, col_.data());
          detail::gemm(false, false, out_, ncols, kdim, T(1), weight_.value.data(), kdim,
                       col_.data(), ncols, T(0), y.sample(n) + oy0 * g.out_w, out_plane);
        }
      }
      for (int c = 0; c < out_; ++c) {
        T* p = y.plane(n, c);
        const T b = bias_.value[c];
        for (int i = 0; i < out_plane; ++i) p[i] += b;
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    const detail::ConvGeometry g = geometry(x_.h(), x_.w());
    Tensor<T> dx(x_.shape());
    const int kdim = g.rows();
    const int out_plane = g.out_h * g.out_w;
    for (int n = 0; n < x_.n(); ++n) {
      for (int c = 0; c < out_; ++c) {
        const T* p = dy.plane(n, c);
        T s = 0;
        for (int i = 0; i < out_plane; ++i) s += p[i];
        bias_.grad[c] += s;
      }
      if (pointwise()) {
        detail::gemm(false, true, out_, in_, out_plane, T(1), dy.sample(n), out_plane, x_.sample(n),
                     out_plane, T(1), weight_.grad.data(), in_);
        detail::gemm(true, false, in_, out_plane, out_, T(1), weight_.value.data(), in_,
                     dy.sample(n), out_plane, T(0), dx.sample(n), out_plane);
        continue;
      }
      const int rows = detail::chunk_rows(g);
      col_.resize(static_cast<std::size_t>(kdim) * rows * g.out_w);
      dcol_.resize(col_.size());
      for (int oy0 = 0; oy0 < g.out_h; oy0 += rows) {
        const int oy1 = std::min(g.out_h, oy0 + rows);
        const int ncols = (oy1 - oy0) * g.out_w;
        const T* dy_chunk = dy.sample(n) + oy0 * g.out_w;
        detail::im2col(x_.sample(n), g, oy0, oy1, col_.data());
        detail::gemm(false, true, out_, kdim, ncols, T(1), dy_chunk, out_plane, col_.data(), ncols,
                     T(1), weight_.grad.data(), kdim);
        detail::gemm(true, false, kdim, ncols, out_, T(1), weight_.value.data(), kdim, dy_chunk,
                     out_plane, T(0), dcol_.data(), ncols);
        detail::col2im(dcol_.data(), g, oy0, oy1, dx.sample(n));
      }
    }
    return dx;
  }

  void collect_params(ParamList<T>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  bool pointwise() const { return k_ == 1 && stride_ == 1 && pad_ == 0; }

  detail::ConvGeometry geometry(int h, int w) const {
    const int oh = (h + 2 * pad_ - k_) / stride_ + 1;
    const int ow = (w + 2 * pad_ - k_) / stride_ + 1;
    if (oh < 1 || ow < 1) throw SizeError(weight_.name + ": input too small for kernel");
    return {in_, h, w, k_, stride_, pad_, oh, ow};
  }

  int in_, out_, k_, stride_, pad_;
  Param<T> weight_, bias_;
  Tensor<T> x_;
  std::vector<T> col_, dcol_;
};

// Transposed convolution: output size (in-1)*stride - 2*pad + k + output_pad.
// Weight layout (in, out, k, k).
template <typename T>
class ConvTranspose2d : public Layer<T> {
 public:
  ConvTranspose2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride,
                  int pad, int output_pad)
      : in_(in_channels),
        out_(out_channels),
        k_(kernel),
        stride_(stride),
        pad_(pad),
        output_pad_(output_pad),
        weight_(name + ".weight", Shape{in_channels, out_channels, kernel, kernel},
                out_channels * kernel * kernel, in_channels * kernel * kernel),
        bias_(name + ".bias", Shape{out_channels, 1, 1, 1}, 0, 0) {}

  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }

  Tensor<T> forward(const Tensor<T>& x) override {
    if (x.c() != in_)
      throw ConfigError(weight_.name + ": expected " + std::to_string(in_) + " input channels, got " +
                        std::to_string(x.c()));
    x_ = x;
    const detail::ConvGeometry g = geometry(x.h(), x.w());
    Tensor<T> y(Shape{x.n(), out_, g.in_h, g.in_w});
    const int kdim = g.rows();
    const int in_plane = x.h() * x.w();
    const int rows = detail::chunk_rows(g);
    col_.resize(static_cast<std::size_t>(kdim) * rows * g.out_w);
    for (int n = 0; n < x.n(); ++n) {
      for (int oy0 = 0; oy0 < g.out_h; oy0 += rows) {
        const int oy1 = std::min(g.out_h, oy0 + rows);
        const int ncols = (oy1 - oy0) * g.out_w;
        detail::gemm(true, false, kdim, ncols, in_, T(1), weight_.value.data(), kdim,
                     x.sample(n) + oy0 * g.out_w, in_plane, T(0), col_.data(), ncols);
        detail::col2im(col_.data(), g, oy0, oy1, y.sample(n));
      }
      for (int c = 0; c < out_; ++c) {
        T* p = y.plane(n, c);
        const T b = bias_.value[c];
        for (std::size_t i = 0; i < y.shape().plane(); ++i) p[i] += b;
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    const detail::ConvGeometry g = geometry(x_.h(), x_.w());
    Tensor<T> dx(x_.shape());
    const int kdim = g.rows();
    const int in_plane = x_.h() * x_.w();
    const int rows = detail::chunk_rows(g);
    col_.resize(static_cast<std::size_t>(kdim) * rows * g.out_w);
    for (int n = 0; n < x_.n(); ++n) {
      for (int c = 0; c < out_; ++c) {
        const T* p = dy.plane(n, c);
        T s = 0;
        for (std::size_t i = 0; i < dy.shape().plane(); ++i) s += p[i];
        bias_.grad[c] += s;
      }
      for (int oy0 = 0; oy0 < g.out_h; oy0 += rows) {
        const int oy1 = std::min(g.out_h, oy0 + rows);
        const int ncols = (oy1 - oy0) * g.out_w;
        detail::im2col(dy.sample(n), g, oy0, oy1, col_.data());
        detail::gemm(false, false, in_, ncols, kdim, T(1), weight_.value.data(), kdim, col_.data(),
                     ncols, T(0), dx.sample(n) + oy0 * g.out_w, in_plane);
        detail::gemm(false, true, in_, kdim, ncols, T(1), x_.sample(n) + oy0 * g.out_w, in_plane,
                     col_.data(), ncols, T(1), weight_.grad.data(), kdim);
      }
    }
    return dx;
  }

  void collect_params(ParamList<T>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  // Geometry of the adjoint convolution: it maps the (larger) output grid
  // back onto the input grid, so `in_*` below is the transposed output.
  detail::ConvGeometry geometry(int h, int w) const {
    const int oh = (h - 1) * stride_ - 2 * pad_ + k_ + output_pad_;
    const int ow = (w - 1) * stride_ - 2 * pad_ + k_ + output_pad_;
    detail::ConvGeometry g{out_, oh, ow, k_, stride_, pad_, h, w};
    if ((oh + 2 * pad_ - k_) / stride_ + 1 != h || (ow + 2 * pad_ - k_) / stride_ + 1 != w)
      throw ConfigError(weight_.name + ": inconsistent transposed-convolution geometry");
    return g;
  }

  int in_, out_, k_, stride_, pad_, output_pad_;
  Param<T> weight_, bias_;
  Tensor<T> x_;
  std::vector<T> col_;
};

template <typename T>
class Relu : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x) override {
    y_ = x;
    for (T& v : y_.values()) v = v > T(0) ? v : T(0);
    return y_;
  }
  Tensor<T> backward(const Tensor<T>& dy) override {
    Tensor<T> dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (!(y_[i] > T(0))) dx[i] = T(0);
    return dx;
  }

 private:
  Tensor<T> y_;
};

template <typename T>
T sigmoid(T v) {
  return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

// scale * sigmoid(x); scale 2 gives the (0,2) multiplicative residue head.
template <typename T>
class Sigmoid : public Layer<T> {
 public:
  explicit Sigmoid(T scale = T(1)) : scale_(scale) {}
  Tensor<T> forward(const Tensor<T>& x) override {
    s_ = x;
    for (T& v : s_.values()) v = sigmoid(v);
    Tensor<T> y = s_;
    for (T& v : y.values()) v *= scale_;
    return y;
  }
  Tensor<T> backward(const Tensor<T>& dy) override {
    Tensor<T> dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= scale_ * s_[i] * (T(1) - s_[i]);
    return dx;
  }

 private:
  T scale_;
  Tensor<T> s_;
};

template <typename T>
class Tanh : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x) override {
    y_ = x;
    for (T& v : y_.values()) v = std::tanh(v);
    return y_;
  }
  Tensor<T> backward(const Tensor<T>& dy) override {
    Tensor<T> dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= T(1) - y_[i] * y_[i];
    return dx;
  }

 private:
  Tensor<T> y_;
};

template <typename T>
class Sequential : public Layer<T> {
 public:
  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    Tensor<T> h = x;
    for (auto& l : layers_) h = l->forward(h);
    return h;
  }
  Tensor<T> backward(const Tensor<T>& dy) override {
    Tensor<T> g = dy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }
  void collect_params(ParamList<T>& out) override {
    for (auto& l : layers_) l->collect_params(out);
  }
  std::size_t size() const { return layers_.size(); }
  Layer<T>& operator[](std::size_t i) { return *layers_[i]; }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

}  // namespace glahrr
