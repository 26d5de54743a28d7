#pragma once

// Training objectives: per-estimate MSE terms plus MSE and edge loss on the
// blended output. Each loss has a matching gradient with respect to its
// first argument.

#include <cmath>

#include "glahrr/model.hpp"

namespace glahrr {

template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
  a.require_same(b, "mse");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    s += d * d;
  }
  return s / double(a.size());
}

// d mse(a, b) / d a, scaled by `scale`.
template <typename T>
Tensor<T> mse_grad(const Tensor<T>& a, const Tensor<T>& b, double scale = 1.0) {
  a.require_same(b, "mse_grad");
  Tensor<T> g(a.shape());
  const double k = 2.0 * scale / double(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) g[i] = static_cast<T>(k * (double(a[i]) - double(b[i])));
  return g;
}

template <typename T>
int sign_of(T v) {
  return (v > T(0)) - (v < T(0));
}

// mean |Hx(a) - Hx(b)| + mean |Hy(a) - Hy(b)|, forward differences over the
// valid region (H x (W-1) and (H-1) x W).
template <typename T>
double edge_loss(const Tensor<T>& a, const Tensor<T>& b) {
  a.require_same(b, "edge_loss");
  if (a.h() < 2 || a.w() < 2) throw SizeError("edge_loss needs H,W >= 2");
  const Shape s = a.shape();
  double sx = 0, sy = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          const double d = double(a(n, c, y, x)) - double(b(n, c, y, x));
          if (x + 1 < s.w) sx += std::abs(double(a(n, c, y, x + 1)) - double(b(n, c, y, x + 1)) - d);
          if (y + 1 < s.h) sy += std::abs(double(a(n, c, y + 1, x)) - double(b(n, c, y + 1, x)) - d);
        }
  const double nx = double(s.n) * s.c * s.h * (s.w - 1);
  const double ny = double(s.n) * s.c * (s.h - 1) * s.w;
  return sx / nx + sy / ny;
}

template <typename T>
Tensor<T> edge_loss_grad(const Tensor<T>& a, const Tensor<T>& b, double scale = 1.0) {
  a.require_same(b, "edge_loss_grad");
  if (a.h() < 2 || a.w() < 2) throw SizeError("edge_loss needs H,W >= 2");
  const Shape s = a.shape();
  const double kx = scale / (double(s.n) * s.c * s.h * (s.w - 1));
  const double ky = scale / (double(s.n) * s.c * (s.h - 1) * s.w);
  Tensor<T> g(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          const double d = double(a(n, c, y, x)) - double(b(n, c, y, x));
          if (x + 1 < s.w) {
            const double sg = kx * sign_of(double(a(n, c, y, x + 1)) - double(b(n, c, y, x + 1)) - d);
            g(n, c, y, x + 1) += static_cast<T>(sg);
            g(n, c, y, x) -= static_cast<T>(sg);
          }
          if (y + 1 < s.h) {
            const double sg = ky * sign_of(double(a(n, c, y + 1, x)) - double(b(n, c, y + 1, x)) - d);
            g(n, c, y + 1, x) += static_cast<T>(sg);
            g(n, c, y, x) -= static_cast<T>(sg);
          }
        }
  return g;
}

struct LossWeights {
  double sca = 1.0;    // lambda0
  double add = 1.0;    // lambda1
  double mul = 1.0;    // lambda2
  double mse = 1.0;    // lambda3
  double edge = 1.0;   // lambda4
};

struct LossReport {
  double l_sca = 0, l_add = 0, l_mul = 0, l_inter = 0;
  double l_mse = 0, l_edge = 0, l_final = 0, l_total = 0;
};

// Loss of one forward pass. Terms of disabled sub-nets are zero. When `grads`
// is non-null it receives dL_total / d{I0, I1, I2, I}.
template <typename T>
LossReport total_loss(const ModelOutput<T>& out, const Tensor<T>& gt, const LossWeights& w,
                      OutputGrads<T>* grads = nullptr) {
  LossReport r;
  if (!out.I0.empty()) {
    r.l_sca = mse(out.I0, gt);
    if (grads) grads->I0 = mse_grad(out.I0, gt, w.sca);
  }
  if (!out.I1.empty()) {
    r.l_add = mse(out.I1, gt);
    if (grads) grads->I1 = mse_grad(out.I1, gt, w.add);
  }
  if (!out.I2.empty()) {
    r.l_mul = mse(out.I2, gt);
    if (grads) grads->I2 = mse_grad(out.I2, gt, w.mul);
  }
  r.l_inter = w.sca * r.l_sca + w.add * r.l_add + w.mul * r.l_mul;
  r.l_mse = mse(out.I, gt);
  r.l_edge = edge_loss(out.I, gt);
  r.l_final = w.mse * r.l_mse + w.edge * r.l_edge;
  r.l_total = r.l_inter + r.l_final;
  if (grads) {
    grads->I = mse_grad(out.I, gt, w.mse);
    grads->I += edge_loss_grad(out.I, gt, w.edge);
  }
  return r;
}

}  // namespace glahrr
