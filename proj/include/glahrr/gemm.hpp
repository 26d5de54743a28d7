#pragma once

#include <algorithm>
#include <cstddef>

#include <Eigen/Core>

namespace glahrr::detail {

// Row-major C = alpha * op(A) * op(B) + beta * C, beta in {0, 1}.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda, const T* b,
          int ldb, T beta, T* c, int ldc) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Stride = Eigen::OuterStride<>;
  const Eigen::Map<const Mat, 0, Stride> A(a, trans_a ? k : m, trans_a ? m : k, Stride(lda));
  const Eigen::Map<const Mat, 0, Stride> B(b, trans_b ? n : k, trans_b ? k : n, Stride(ldb));
  Eigen::Map<Mat, 0, Stride> C(c, m, n, Stride(ldc));
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (beta == T(0))
      C.noalias() = alpha * (lhs * rhs);
    else
      C.noalias() += alpha * (lhs * rhs);
  };
  if (trans_a && trans_b)
    run(A.transpose(), B.transpose());
  else if (trans_a)
    run(A.transpose(), B);
  else if (trans_b)
    run(A, B.transpose());
  else
    run(A, B);
}

// Geometry of a k x k convolution mapping an (in_h, in_w) grid to (out_h, out_w).
struct ConvGeometry {
  int channels;
  int in_h, in_w;
  int kernel, stride, pad;
  int out_h, out_w;

  int rows() const { return channels * kernel * kernel; }
};

// Unfold output rows [oy0, oy1) into col, shaped (channels*k*k, (oy1-oy0)*out_w).
template <typename T>
void im2col(const T* x, const ConvGeometry& g, int oy0, int oy1, T* col) {
  const int ncols = (oy1 - oy0) * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    const T* xc = x + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        T* row = col + (static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx)) * ncols;
        for (int oy = oy0; oy < oy1; ++oy) {
          T* dst = row + static_cast<std::size_t>(oy - oy0) * g.out_w;
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.in_h) {
            std::fill_n(dst, g.out_w, T(0));
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(iy) * g.in_w;
          if (g.stride == 1) {
            const int shift = kx - g.pad;
            const int lo = std::max(0, -shift);
            const int hi = std::min(g.out_w, g.in_w - shift);
            std::fill_n(dst, std::max(0, std::min(lo, g.out_w)), T(0));
            if (hi > lo) std::copy(src + lo + shift, src + hi + shift, dst + lo);
            if (hi < g.out_w) std::fill(dst + std::max(hi, 0), dst + g.out_w, T(0));
          } else {
            for (int ox = 0; ox < g.out_w; ++ox) {
              const int ix = ox * g.stride - g.pad + kx;
              dst[ox] = (ix >= 0 && ix < g.in_w) ? src[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulate col back into x.
template <typename T>
void col2im(const T* col, const ConvGeometry& g, int oy0, int oy1, T* x) {
  const int ncols = (oy1 - oy0) * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    T* xc = x + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        const T* row =
            col + (static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx)) * ncols;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.in_h) continue;
          const T* src = row + static_cast<std::size_t>(oy - oy0) * g.out_w;
          T* dst = xc + static_cast<std::size_t>(iy) * g.in_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.in_w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// Output rows per im2col chunk, bounding the column buffer to ~8M elements.
inline int chunk_rows(const ConvGeometry& g) {
  constexpr std::size_t kMaxColElements = std::size_t{1} << 23;
  const std::size_t per_row = static_cast<std::size_t>(g.rows()) * g.out_w;
  return static_cast<int>(std::clamp<std::size_t>(kMaxColElements / std::max<std::size_t>(per_row, 1), 1,
                                                  static_cast<std::size_t>(g.out_h)));
}

}  // namespace glahrr::detail
