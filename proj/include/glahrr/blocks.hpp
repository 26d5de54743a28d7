#pragma once

// Attention and inception building blocks of the deraining network.

#include <array>
#include <string>
#include <vector>

#include "glahrr/nn.hpp"

namespace glahrr {

// Spatial attention: per-pixel mean and max over channels, 7x7 conv to one
// map, sigmoid, then rescale every channel by that map.
template <typename T>
class SpatialAttention : public Layer<T> {
 public:
  explicit SpatialAttention(const std::string& name) : conv_(name + ".conv", 2, 1, 7) {}

  Tensor<T> forward(const Tensor<T>& x) override {
    x_ = x;
    const Shape s = x.shape();
    const std::size_t plane = s.plane();
    Tensor<T> pooled(Shape{s.n, 2, s.h, s.w});
    argmax_.assign(static_cast<std::size_t>(s.n) * plane, 0);
    for (int n = 0; n < s.n; ++n) {
      T* mean = pooled.plane(n, 0);
      T* max = pooled.plane(n, 1);
      int* arg = argmax_.data() + static_cast<std::size_t>(n) * plane;
      const T* x0 = x.plane(n, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        mean[i] = x0[i];
        max[i] = x0[i];
      }
      for (int c = 1; c < s.c; ++c) {
        const T* xc = x.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          mean[i] += xc[i];
          if (xc[i] > max[i]) {
            max[i] = xc[i];
            arg[i] = c;
          }
        }
      }
      for (std::size_t i = 0; i < plane; ++i) mean[i] /= T(s.c);
    }
    attention_ = conv_.forward(pooled);
    for (T& v : attention_.values()) v = sigmoid(v);
    Tensor<T> y(s);
    for (int n = 0; n < s.n; ++n) {
      const T* a = attention_.plane(n, 0);
      for (int c = 0; c < s.c; ++c) {
        const T* xc = x.plane(n, c);
        T* yc = y.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) yc[i] = xc[i] * a[i];
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    const Shape s = x_.shape();
    const std::size_t plane = s.plane();
    Tensor<T> dx(s);
    Tensor<T> dz(Shape{s.n, 1, s.h, s.w});
    for (int n = 0; n < s.n; ++n) {
      const T* a = attention_.plane(n, 0);
      T* dzn = dz.plane(n, 0);
      for (int c = 0; c < s.c; ++c) {
        const T* g = dy.plane(n, c);
        const T* xc = x_.plane(n, c);
        T* dxc = dx.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          dxc[i] = g[i] * a[i];
          dzn[i] += g[i] * xc[i];
        }
      }
      for (std::size_t i = 0; i < plane; ++i) dzn[i] *= a[i] * (T(1) - a[i]);
    }
    const Tensor<T> dpooled = conv_.backward(dz);
    for (int n = 0; n < s.n; ++n) {
      const T* dmean = dpooled.plane(n, 0);
      const T* dmax = dpooled.plane(n, 1);
      const int* arg = argmax_.data() + static_cast<std::size_t>(n) * plane;
      for (int c = 0; c < s.c; ++c) {
        T* dxc = dx.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) dxc[i] += dmean[i] / T(s.c);
      }
      for (std::size_t i = 0; i < plane; ++i) dx.plane(n, arg[i])[i] += dmax[i];
    }
    return dx;
  }

  void collect_params(ParamList<T>& out) override { conv_.collect_params(out); }

  // Attention map of the last forward pass, (B,1,H,W).
  const Tensor<T>& attention() const { return attention_; }
  Conv2d<T>& conv() { return conv_; }

 private:
  Conv2d<T> conv_;
  Tensor<T> x_, attention_;
  std::vector<int> argmax_;
};

// Squeeze-and-excitation channel attention: GAP, 1x1 C->C/r, ReLU,
// 1x1 C/r->C, sigmoid, rescale channels.
template <typename T>
class ChannelAttention : public Layer<T> {
 public:
  ChannelAttention(const std::string& name, int channels, int reduction)
      : channels_(channels),
        squeeze_(name + ".squeeze", channels, checked_hidden(name, channels, reduction), 1),
        excite_(name + ".excite", channels / reduction, channels, 1) {}

  Tensor<T> forward(const Tensor<T>& x) override {
    if (x.c() != channels_)
      throw ConfigError("channel attention expects " + std::to_string(channels_) + " channels, got " +
                        std::to_string(x.c()));
    x_ = x;
    const Shape s = x.shape();
    const std::size_t plane = s.plane();
    Tensor<T> pooled(Shape{s.n, s.c, 1, 1});
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const T* p = x.plane(n, c);
        T sum = 0;
        for (std::size_t i = 0; i < plane; ++i) sum += p[i];
        pooled(n, c, 0, 0) = sum / T(plane);
      }
    Tensor<T> z = excite_.forward(relu_.forward(squeeze_.forward(pooled)));
    scale_ = z;
    for (T& v : scale_.values()) v = sigmoid(v);
    Tensor<T> y(s);
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const T a = scale_(n, c, 0, 0);
        const T* xc = x.plane(n, c);
        T* yc = y.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) yc[i] = xc[i] * a;
      }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    const Shape s = x_.shape();
    const std::size_t plane = s.plane();
    Tensor<T> dx(s);
    Tensor<T> dz(Shape{s.n, s.c, 1, 1});
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const T a = scale_(n, c, 0, 0);
        const T* g = dy.plane(n, c);
        const T* xc = x_.plane(n, c);
        T* dxc = dx.plane(n, c);
        T da = 0;
        for (std::size_t i = 0; i < plane; ++i) {
          dxc[i] = g[i] * a;
          da += g[i] * xc[i];
        }
        dz(n, c, 0, 0) = da * a * (T(1) - a);
      }
    const Tensor<T> dpooled = squeeze_.backward(relu_.backward(excite_.backward(dz)));
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const T g = dpooled(n, c, 0, 0) / T(plane);
        T* dxc = dx.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) dxc[i] += g;
      }
    return dx;
  }

  void collect_params(ParamList<T>& out) override {
    squeeze_.collect_params(out);
    excite_.collect_params(out);
  }

  // Per-channel scales of the last forward pass, (B,C,1,1).
  const Tensor<T>& scales() const { return scale_; }

 private:
  static int checked_hidden(const std::string& name, int channels, int reduction) {
    if (reduction < 1 || channels % reduction != 0 || channels / reduction < 1)
      throw ConfigError(name + ": " + std::to_string(channels) + " channels not divisible by reduction " +
                        std::to_string(reduction));
    return channels / reduction;
  }

  int channels_;
  Conv2d<T> squeeze_;
  Relu<T> relu_;
  Conv2d<T> excite_;
  Tensor<T> x_, scale_;
};

enum class Direction { down, up };

struct AttentionFlags {
  bool spatial = true;
  bool channel = true;
};

inline constexpr int kChannelReduction = 16;

// Strided 3x3 (transposed) convolution, ReLU, then spatial and channel attention.
template <typename T>
class ScaBlock : public Layer<T> {
 public:
  ScaBlock(const std::string& name, Direction dir, int in_channels, int out_channels,
           AttentionFlags flags = {}) {
    if (dir == Direction::down)
      body_.template add<Conv2d<T>>(name + ".conv", in_channels, out_channels, 3, 2, 1);
    else
      body_.template add<ConvTranspose2d<T>>(name + ".deconv", in_channels, out_channels, 3, 2, 1, 1);
    body_.template add<Relu<T>>();
    if (flags.spatial) body_.template add<SpatialAttention<T>>(name + ".sa");
    if (flags.channel)
      body_.template add<ChannelAttention<T>>(name + ".ca", out_channels, kChannelReduction);
  }

  Tensor<T> forward(const Tensor<T>& x) override { return body_.forward(x); }
  Tensor<T> backward(const Tensor<T>& dy) override { return body_.backward(dy); }
  void collect_params(ParamList<T>& out) override { body_.collect_params(out); }

 private:
  Sequential<T> body_;
};

inline constexpr int kInceptionChannels = 256;
inline constexpr int kInceptionBranch = 128;
inline constexpr std::array<int, 3> kInceptionKernels{3, 5, 7};

// Parallel 3/5/7 convolutions, concatenation, optional channel attention,
// 1x1 fusion, residual add and ReLU. Without attention this is the RIM; with
// it, the CIM.
template <typename T>
class InceptionResidual : public Layer<T> {
 public:
  InceptionResidual(const std::string& name, bool channel_attention) {
    for (std::size_t b = 0; b < kInceptionKernels.size(); ++b) {
      const int k = kInceptionKernels[b];
      branches_[b].template add<Conv2d<T>>(name + ".branch" + std::to_string(k), kInceptionChannels,
                                           kInceptionBranch, k);
      branches_[b].template add<Relu<T>>();
    }
    constexpr int concat = kInceptionBranch * static_cast<int>(kInceptionKernels.size());
    if (channel_attention)
      attention_ = std::make_unique<ChannelAttention<T>>(name + ".ca", concat, kChannelReduction);
    fuse_ = std::make_unique<Conv2d<T>>(name + ".fuse", concat, kInceptionChannels, 1);
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    if (x.c() != kInceptionChannels)
      throw ConfigError("inception module expects 256 channels, got " + std::to_string(x.c()));
    std::array<Tensor<T>, 3> outs;
    for (std::size_t b = 0; b < branches_.size(); ++b) outs[b] = branches_[b].forward(x);
    const Tensor<T>* parts[] = {&outs[0], &outs[1], &outs[2]};
    Tensor<T> h = concat_channels<T>(parts);
    if (attention_) h = attention_->forward(h);
    Tensor<T> y = fuse_->forward(h);
    y += x;
    return relu_.forward(y);
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    const Tensor<T> dsum = relu_.backward(dy);
    Tensor<T> dh = fuse_->backward(dsum);
    if (attention_) dh = attention_->backward(dh);
    Tensor<T> dx = dsum;
    for (std::size_t b = 0; b < branches_.size(); ++b)
      dx += branches_[b].backward(slice_channels(dh, static_cast<int>(b) * kInceptionBranch, kInceptionBranch));
    return dx;
  }

  void collect_params(ParamList<T>& out) override {
    for (auto& b : branches_) b.collect_params(out);
    if (attention_) attention_->collect_params(out);
    fuse_->collect_params(out);
  }

  Conv2d<T>& fuse() { return *fuse_; }
  Conv2d<T>& branch_conv(std::size_t b) { return static_cast<Conv2d<T>&>(branches_[b][0]); }

 private:
  std::array<Sequential<T>, 3> branches_;
  std::unique_ptr<ChannelAttention<T>> attention_;
  std::unique_ptr<Conv2d<T>> fuse_;
  Relu<T> relu_;
};

template <typename T>
class Rim : public InceptionResidual<T> {
 public:
  explicit Rim(const std::string& name) : InceptionResidual<T>(name, false) {}
};

template <typename T>
class Cim : public InceptionResidual<T> {
 public:
  explicit Cim(const std::string& name) : InceptionResidual<T>(name, true) {}
};

inline constexpr int kBlendWidth = 32;
inline constexpr int kBlendReduction = 4;

// Attentive blending: concatenated estimates -> three 3x3 convs (ReLU) ->
// channel attention -> 1x1 conv -> sigmoid, one weight map per estimate.
template <typename T>
class AttentiveBlend {
 public:
  AttentiveBlend(const std::string& name, int estimates) : estimates_(estimates) {
    if (estimates < 2) throw ConfigError(name + ": blending needs at least two estimates");
    net_.template add<Conv2d<T>>(name + ".conv0", 3 * estimates, kBlendWidth, 3);
    net_.template add<Relu<T>>();
    net_.template add<Conv2d<T>>(name + ".conv1", kBlendWidth, kBlendWidth, 3);
    net_.template add<Relu<T>>();
    net_.template add<Conv2d<T>>(name + ".conv2", kBlendWidth, kBlendWidth, 3);
    net_.template add<Relu<T>>();
    net_.template add<ChannelAttention<T>>(name + ".ca", kBlendWidth, kBlendReduction);
    net_.template add<Conv2d<T>>(name + ".out", kBlendWidth, estimates, 1);
    net_.template add<Sigmoid<T>>();
  }

  int estimates() const { return estimates_; }

  // Returns (B, estimates, H, W); channel k is the weight map of estimate k.
  Tensor<T> forward(std::span<const Tensor<T>* const> images) {
    if (static_cast<int>(images.size()) != estimates_)
      throw ShapeError("blend: expected " + std::to_string(estimates_) + " estimates");
    for (const Tensor<T>* im : images) {
      if (im->c() != 3 || !(im->shape() == images[0]->shape()))
        throw ShapeError("blend: estimates must share a (B,3,H,W) shape, got " + im->shape().str() +
                         " and " + images[0]->shape().str());
    }
    Tensor<T> w = net_.forward(concat_channels<T>(images));
    w.set_kind(Kind::weight_map);
    return w;
  }

  // dweights: (B, estimates, H, W). Returns one gradient per estimate.
  std::vector<Tensor<T>> backward(const Tensor<T>& dweights) {
    const Tensor<T> din = net_.backward(dweights);
    std::vector<Tensor<T>> out;
    for (int k = 0; k < estimates_; ++k) out.push_back(slice_channels(din, 3 * k, 3));
    return out;
  }

  void collect_params(ParamList<T>& out) { net_.collect_params(out); }

 private:
  int estimates_;
  Sequential<T> net_;
};

}  // namespace glahrr
