#pragma once

#include <cmath>
#include <vector>

#include "glahrr/nn.hpp"

namespace glahrr {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
class Adam {
 public:
  explicit Adam(ParamList<T> params, AdamOptions opt = {}) : params_(std::move(params)), opt_(opt) {
    for (Param<T>* p : params_) {
      m_.emplace_back(p->value.size(), T(0));
      v_.emplace_back(p->value.size(), T(0));
    }
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, t_);
    const double bc2 = 1.0 - std::pow(opt_.beta2, t_);
    const T b1 = T(opt_.beta1), b2 = T(opt_.beta2);
    const T step_size = static_cast<T>(lr / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(opt_.eps);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      T* w = params_[k]->value.data();
      const T* g = params_[k]->grad.data();
      T* m = m_[k].data();
      T* v = v_[k].data();
      for (std::size_t i = 0; i < m_[k].size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        w[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
      }
    }
  }

  long steps() const { return t_; }

 private:
  ParamList<T> params_;
  AdamOptions opt_;
  std::vector<std::vector<T>> m_, v_;
  long t_ = 0;
};

struct Schedule {
  double base_lr = 1e-4;
  double poly_power = 0.9;
  int epochs = 200;
  int halve_at_epoch = 100;
};

// base * (1 - t/T)^power, halved from `halve_at_epoch` on; t is the global
// step and T = epochs * steps_per_epoch.
inline double learning_rate(int epoch, int step_in_epoch, int steps_per_epoch, const Schedule& s) {
  const double total = double(s.epochs) * steps_per_epoch;
  const double t = double(epoch) * steps_per_epoch + step_in_epoch;
  const double frac = std::clamp(1.0 - t / total, 0.0, 1.0);
  const double halving = epoch >= s.halve_at_epoch ? 0.5 : 1.0;
  return s.base_lr * std::pow(frac, s.poly_power) * halving;
}

}  // namespace glahrr
