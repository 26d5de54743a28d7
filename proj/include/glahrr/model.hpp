#pragma once

// Full three-branch deraining network: an attention U-net producing I0 and a
// quarter-resolution feature tap, an additive-residue head producing
// I1 = J + R_A, a multiplicative-residue head producing I2 = J * R_M, and an
// attentive blend I = sum_k I_k * W_k.

#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "glahrr/blocks.hpp"
#include "glahrr/rng.hpp"

namespace glahrr {

struct VariantConfig {
  bool use_sca = true;
  bool use_add = true;
  bool use_mul = true;
  bool use_sa = true;
  bool use_ca = true;
  // Adds one 3x3 64->64 conv to the U-net decoder; used when both attentions
  // are removed so the parameter budget stays comparable.
  bool extra_conv_when_no_attn = false;

  bool operator==(const VariantConfig&) const = default;

  int subnet_count() const { return int(use_sca) + int(use_add) + int(use_mul); }

  void validate() const {
    if (subnet_count() == 0) throw ConfigError("variant must enable at least one sub-net");
  }
};

// Named variants: the sub-net grid and the attention grid.
inline VariantConfig variant_by_name(const std::string& name) {
  VariantConfig v;
  if (name == "full") return v;
  if (name == "sca") return {true, false, false};
  if (name == "add") return {false, true, false};
  if (name == "mul") return {false, false, true};
  if (name == "sca+add") return {true, true, false};
  if (name == "sca+mul") return {true, false, true};
  if (name == "add+mul") return {false, true, true};
  if (name == "no-ca") return {true, true, true, true, false};
  if (name == "no-sa") return {true, true, true, false, true};
  if (name == "no-ca-sa") return {true, true, true, false, false, true};
  throw ConfigError("unknown variant '" + name + "'");
}

inline const std::vector<std::string>& subnet_grid() {
  static const std::vector<std::string> g{"sca", "add", "mul", "sca+add", "sca+mul", "add+mul", "full"};
  return g;
}

inline const std::vector<std::string>& sca_block_grid() {
  static const std::vector<std::string> g{"no-ca", "no-sa", "no-ca-sa", "full"};
  return g;
}

// Everything one forward pass produces. Tensors of disabled sub-nets are empty;
// weights[k] pairs with estimate k (0: SCA, 1: additive, 2: multiplicative).
template <typename T>
struct ModelOutput {
  Tensor<T> I0, I1, I2, I;
  Tensor<T> R_A, R_M;
  std::array<Tensor<T>, 3> weights;
  Tensor<T> F_sca;
};

// dL/d(output) for the image-valued outputs; empty means zero.
template <typename T>
struct OutputGrads {
  Tensor<T> I0, I1, I2, I;
};

inline constexpr int kSizeMultiple = 16;

inline int round_up(int v, int m) { return (v + m - 1) / m * m; }

template <typename T>
class GlaHrrModel {
 public:
  explicit GlaHrrModel(VariantConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    const AttentionFlags attn{cfg.use_sa, cfg.use_ca};

    front_.template add<Conv2d<T>>("sca.front0", 3, 64, 3);
    front_.template add<Relu<T>>();
    front_.template add<Conv2d<T>>("sca.front1", 64, 64, 3);
    front_.template add<Relu<T>>();
    front_.template add<Conv2d<T>>("sca.front2", 64, 64, 3);
    front_.template add<Relu<T>>();

    // Without the U-net output only the encoder up to the feature tap is kept.
    const int encoder_depth = cfg.use_sca ? 4 : 2;
    const std::array<int, 5> widths{64, 128, 256, 512, 1024};
    for (int i = 0; i < encoder_depth; ++i)
      encoder_.push_back(std::make_unique<ScaBlock<T>>("sca.enc" + std::to_string(i), Direction::down,
                                                       widths[i], widths[i + 1], attn));
    if (cfg.use_sca) {
      // Each decoder block consumes the previous output concatenated with the skip.
      const std::array<int, 4> dec_in{1024, 1024, 512, 256};
      const std::array<int, 4> dec_out{512, 256, 128, 64};
      for (int i = 0; i < 4; ++i)
        decoder_.push_back(std::make_unique<ScaBlock<T>>("sca.dec" + std::to_string(i), Direction::up,
                                                         dec_in[i], dec_out[i], attn));
      tail_.template add<Conv2d<T>>("sca.fuse", 128, 64, 3);
      tail_.template add<Relu<T>>();
      if (cfg.extra_conv_when_no_attn) {
        tail_.template add<Conv2d<T>>("sca.compensate", 64, 64, 3);
        tail_.template add<Relu<T>>();
      }
      tail_.template add<Conv2d<T>>("sca.out", 64, 3, 3);
    }
    if (cfg.use_add) {
      add_trunk_.template add<Rim<T>>("add.rim0");
      add_trunk_.template add<Rim<T>>("add.rim1");
      build_upsampler(add_up_, "add");
      add_up_.template add<Tanh<T>>();
    }
    if (cfg.use_mul) {
      mul_trunk_.template add<Cim<T>>("mul.cim0");
      mul_trunk_.template add<Cim<T>>("mul.cim1");
      build_upsampler(mul_up_, "mul");
      mul_up_.template add<Sigmoid<T>>(T(2));
    }
    if (cfg.subnet_count() > 1) blend_.emplace("blend", cfg.subnet_count());
  }

  const VariantConfig& config() const { return cfg_; }

  // Parameters in a fixed order; checkpoint and initialization rely on it.
  ParamList<T> params() {
    ParamList<T> out;
    front_.collect_params(out);
    for (auto& b : encoder_) b->collect_params(out);
    for (auto& b : decoder_) b->collect_params(out);
    tail_.collect_params(out);
    add_trunk_.collect_params(out);
    add_up_.collect_params(out);
    mul_trunk_.collect_params(out);
    mul_up_.collect_params(out);
    if (blend_) blend_->collect_params(out);
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (Param<T>* p : params()) n += p->value.size();
    return n;
  }

  // Final convolution of each head, exposed for identity constructions.
  Conv2d<T>* sca_output_conv() { return cfg_.use_sca ? &last_conv(tail_) : nullptr; }
  Conv2d<T>* add_output_conv() { return cfg_.use_add ? &last_conv(add_up_) : nullptr; }
  Conv2d<T>* mul_output_conv() { return cfg_.use_mul ? &last_conv(mul_up_) : nullptr; }

  ModelOutput<T> forward(const Tensor<T>& J) {
    require_image_range(J, "forward");
    in_h_ = J.h();
    in_w_ = J.w();
    const int ph = round_up(J.h(), kSizeMultiple);
    const int pw = round_up(J.w(), kSizeMultiple);
    J_ = (ph == J.h() && pw == J.w()) ? J : reflect_extend(J, ph, pw);

    skips_.clear();
    Tensor<T> h = front_.forward(J_);
    skips_.push_back(h);
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
      h = encoder_[i]->forward(h);
      if (i + 1 < encoder_.size()) skips_.push_back(h);
      if (i == 1) features_ = h;
    }

    estimates_.clear();
    estimate_ids_.clear();
    ModelOutput<T> out;
    if (cfg_.use_sca) {
      for (std::size_t i = 0; i < decoder_.size(); ++i) {
        h = decoder_[i]->forward(h);
        h = concat_channels(h, skips_[skips_.size() - 1 - i]);
      }
      push_estimate(0, tail_.forward(h));
    }
    if (cfg_.use_add) {
      add_features_ = add_trunk_.forward(features_);
      Tensor<T> ra = add_up_.forward(add_features_);
      Tensor<T> i1 = J_;
      i1 += ra;
      out.R_A = crop_out(ra, Kind::residue);
      push_estimate(1, std::move(i1));
    }
    if (cfg_.use_mul) {
      mul_features_ = mul_trunk_.forward(features_);
      rm_ = mul_up_.forward(mul_features_);
      Tensor<T> i2 = J_;
      for (std::size_t i = 0; i < i2.size(); ++i) i2[i] *= rm_[i];
      out.R_M = crop_out(rm_, Kind::residue);
      push_estimate(2, std::move(i2));
    }

    Tensor<T> fused;
    if (estimates_.size() == 1) {
      fused = estimates_[0];
    } else {
      std::vector<const Tensor<T>*> parts;
      for (const auto& e : estimates_) parts.push_back(&e);
      weights_ = blend_->forward(parts);
      fused = Tensor<T>(estimates_[0].shape());
      blend_sum(fused);
      for (std::size_t k = 0; k < estimates_.size(); ++k)
        out.weights[estimate_ids_[k]] = crop_out(slice_channels(weights_, static_cast<int>(k), 1), Kind::weight_map);
    }

    for (std::size_t k = 0; k < estimates_.size(); ++k) {
      Tensor<T> e = crop_out(estimates_[k], Kind::image);
      if (estimate_ids_[k] == 0) out.I0 = std::move(e);
      if (estimate_ids_[k] == 1) out.I1 = std::move(e);
      if (estimate_ids_[k] == 2) out.I2 = std::move(e);
    }
    out.I = crop_out(fused, Kind::image);
    out.F_sca = crop(features_, 0, 0, (in_h_ + 3) / 4, (in_w_ + 3) / 4);
    return out;
  }

  // Accumulates parameter gradients for the last forward pass.
  void backward(const OutputGrads<T>& g) {
    const Shape padded = J_.shape();
    std::vector<Tensor<T>> dest;
    for (int id : estimate_ids_) {
      const Tensor<T>& given = id == 0 ? g.I0 : id == 1 ? g.I1 : g.I2;
      dest.push_back(given.empty() ? Tensor<T>(padded) : zero_extend(given, padded.h, padded.w));
    }
    if (!g.I.empty()) {
      const Tensor<T> dI = zero_extend(g.I, padded.h, padded.w);
      if (estimates_.size() == 1) {
        dest[0] += dI;
      } else {
        const int k_count = static_cast<int>(estimates_.size());
        Tensor<T> dw(weights_.shape());
        const std::size_t plane = padded.plane();
        for (int n = 0; n < padded.n; ++n)
          for (int k = 0; k < k_count; ++k) {
            const T* w = weights_.plane(n, k);
            T* dwk = dw.plane(n, k);
            for (int c = 0; c < 3; ++c) {
              const T* gi = dI.plane(n, c);
              const T* e = estimates_[k].plane(n, c);
              T* de = dest[k].plane(n, c);
              for (std::size_t i = 0; i < plane; ++i) {
                de[i] += gi[i] * w[i];
                dwk[i] += gi[i] * e[i];
              }
            }
          }
        std::vector<Tensor<T>> via_blend = blend_->backward(dw);
        for (int k = 0; k < k_count; ++k) dest[k] += via_blend[k];
      }
    }

    Tensor<T> dfeatures(features_.shape());
    std::optional<Tensor<T>> ddecoder;
    for (std::size_t k = 0; k < estimate_ids_.size(); ++k) {
      switch (estimate_ids_[k]) {
        case 0:
          ddecoder = tail_.backward(dest[k]);
          break;
        case 1:
          dfeatures += add_trunk_.backward(add_up_.backward(dest[k]));
          break;
        case 2: {
          Tensor<T> drm = dest[k];
          for (std::size_t i = 0; i < drm.size(); ++i) drm[i] *= J_[i];
          dfeatures += mul_trunk_.backward(mul_up_.backward(drm));
          break;
        }
      }
    }

    // Skip gradients, indexed like skips_ (0: front output, 1: enc0, 2: enc1, 3: enc2).
    std::vector<Tensor<T>> dskips;
    for (const auto& s : skips_) dskips.emplace_back(s.shape());
    Tensor<T> dh;
    if (ddecoder) {
      dh = std::move(*ddecoder);
      for (std::size_t j = decoder_.size(); j-- > 0;) {
        const Tensor<T>& skip = skips_[skips_.size() - 1 - j];
        const int own = dh.c() - skip.c();
        dskips[skips_.size() - 1 - j] += slice_channels(dh, own, skip.c());
        dh = decoder_[j]->backward(slice_channels(dh, 0, own));
      }
    }
    for (std::size_t i = encoder_.size(); i-- > 0;) {
      Tensor<T> grad_out;
      if (i + 1 < encoder_.size()) {
        grad_out = std::move(dskips[i + 1]);
        grad_out += dh;
      } else {
        // Topmost block: fed by the decoder, or only by the heads when there is none.
        grad_out = dh.empty() ? Tensor<T>(features_.shape()) : std::move(dh);
      }
      if (i == 1) grad_out += dfeatures;
      dh = encoder_[i]->backward(grad_out);
    }
    dh += dskips[0];
    front_.backward(dh);
  }

  // Feature maps of the last forward pass at the padded resolution.
  const Tensor<T>& sca_features() const { return features_; }
  const Tensor<T>& additive_features() const { return add_features_; }
  const Tensor<T>& multiplicative_features() const { return mul_features_; }

 private:
  static void build_upsampler(Sequential<T>& seq, const std::string& prefix) {
    seq.template add<ConvTranspose2d<T>>(prefix + ".up0", 256, 64, 4, 2, 1, 0);
    seq.template add<Relu<T>>();
    seq.template add<ConvTranspose2d<T>>(prefix + ".up1", 64, 16, 4, 2, 1, 0);
    seq.template add<Relu<T>>();
    seq.template add<Conv2d<T>>(prefix + ".out", 16, 3, 3);
  }

  static Conv2d<T>& last_conv(Sequential<T>& seq) {
    for (std::size_t i = seq.size(); i-- > 0;)
      if (auto* c = dynamic_cast<Conv2d<T>*>(&seq[i])) return *c;
    throw ConfigError("no output convolution");
  }

  void push_estimate(int id, Tensor<T> e) {
    estimate_ids_.push_back(id);
    estimates_.push_back(std::move(e));
  }

  void blend_sum(Tensor<T>& fused) const {
    const Shape s = fused.shape();
    const std::size_t plane = s.plane();
    for (int n = 0; n < s.n; ++n)
      for (std::size_t k = 0; k < estimates_.size(); ++k) {
        const T* w = weights_.plane(n, static_cast<int>(k));
        for (int c = 0; c < 3; ++c) {
          const T* e = estimates_[k].plane(n, c);
          T* f = fused.plane(n, c);
          for (std::size_t i = 0; i < plane; ++i) f[i] += e[i] * w[i];
        }
      }
  }

  Tensor<T> crop_out(const Tensor<T>& t, Kind kind) const {
    Tensor<T> out = (t.h() == in_h_ && t.w() == in_w_) ? t : crop(t, 0, 0, in_h_, in_w_);
    out.set_kind(kind);
    return out;
  }

  VariantConfig cfg_;
  Sequential<T> front_;
  std::vector<std::unique_ptr<ScaBlock<T>>> encoder_, decoder_;
  Sequential<T> tail_;
  Sequential<T> add_trunk_, add_up_;
  Sequential<T> mul_trunk_, mul_up_;
  std::optional<AttentiveBlend<T>> blend_;

  int in_h_ = 0, in_w_ = 0;
  Tensor<T> J_;
  std::vector<Tensor<T>> skips_;
  Tensor<T> features_, add_features_, mul_features_, rm_, weights_;
  std::vector<Tensor<T>> estimates_;
  std::vector<int> estimate_ids_;
};

// Xavier-uniform weights, zero biases, drawn in params() order from one
// stream seeded by `seed`.
template <typename T>
void xavier_init(GlaHrrModel<T>& model, std::uint64_t seed) {
  xavier_init(model.params(), seed);
}

template <typename T>
std::unique_ptr<GlaHrrModel<T>> build_variant(const VariantConfig& cfg, std::uint64_t seed) {
  auto model = std::make_unique<GlaHrrModel<T>>(cfg);
  xavier_init(*model, seed);
  return model;
}

}  // namespace glahrr
