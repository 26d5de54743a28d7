#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "glahrr/losses.hpp"

namespace glahrr {

// Peak signal-to-noise ratio for [0,1] images; +inf when the inputs are identical.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
  const double e = mse(a, b);
  if (e == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / e);
}

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

inline std::array<double, kSsimWindow> ssim_kernel() {
  std::array<double, kSsimWindow> k{};
  double sum = 0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    k[i] = std::exp(-d * d / (2 * kSsimSigma * kSsimSigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

namespace detail {

// Separable Gaussian filter over the valid region.
inline std::vector<double> gaussian_valid(const std::vector<double>& src, int h, int w) {
  const auto k = ssim_kernel();
  const int ow = w - kSsimWindow + 1;
  const int oh = h - kSsimWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int i = 0; i < kSsimWindow; ++i) s += k[i] * src[static_cast<std::size_t>(y) * w + x + i];
      rows[static_cast<std::size_t>(y) * ow + x] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int i = 0; i < kSsimWindow; ++i) s += k[i] * rows[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

}  // namespace detail

// Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), dynamic range 1,
// computed per channel on the valid region and averaged.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
  a.require_same(b, "ssim");
  if (a.h() < kSsimWindow || a.w() < kSsimWindow)
    throw SizeError("ssim needs images of at least 11x11, got " + a.shape().str());
  const double c1 = (kSsimK1 * kSsimK1);
  const double c2 = (kSsimK2 * kSsimK2);
  const int h = a.h(), w = a.w();
  const std::size_t plane = a.shape().plane();
  double total = 0;
  int planes = 0;
  std::vector<double> pa(plane), pb(plane), aa(plane), bb(plane), ab(plane);
  for (int n = 0; n < a.n(); ++n)
    for (int c = 0; c < a.c(); ++c) {
      const T* xa = a.plane(n, c);
      const T* xb = b.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        pa[i] = xa[i];
        pb[i] = xb[i];
        aa[i] = pa[i] * pa[i];
        bb[i] = pb[i] * pb[i];
        ab[i] = pa[i] * pb[i];
      }
      const auto mu_a = detail::gaussian_valid(pa, h, w);
      const auto mu_b = detail::gaussian_valid(pb, h, w);
      const auto e_aa = detail::gaussian_valid(aa, h, w);
      const auto e_bb = detail::gaussian_valid(bb, h, w);
      const auto e_ab = detail::gaussian_valid(ab, h, w);
      double sum = 0;
      for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double ma = mu_a[i], mb = mu_b[i];
        const double va = e_aa[i] - ma * ma;
        const double vb = e_bb[i] - mb * mb;
        const double cov = e_ab[i] - ma * mb;
        sum += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      }
      total += sum / double(mu_a.size());
      ++planes;
    }
  return total / planes;
}

}  // namespace glahrr
