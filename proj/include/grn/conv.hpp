#pragma once

#include <algorithm>
#include <cstring>
#include <vector>

#include "gemm.hpp"
#include "tensor.hpp"

namespace grn {

namespace detail {

struct ConvDims {
  int N, C, H, W;       // input
  int Co, kh, kw;       // filter
  int stride, pad;
  int OH, OW;
};

inline ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
  if (x.ndim() != 4) fail("conv2d: input must be [N,C,H,W], got " + shape_str(x.shape()));
  if (w.ndim() != 4) fail("conv2d: weight must be [C',C,kh,kw], got " + shape_str(w.shape()));
  if (stride < 1) fail("conv2d: stride must be >= 1, got " + std::to_string(stride));
  if (pad < 0) fail("conv2d: pad must be >= 0, got " + std::to_string(pad));
  ConvDims d{};
  d.N = x.dim(0); d.C = x.dim(1); d.H = x.dim(2); d.W = x.dim(3);
  d.Co = w.dim(0); d.kh = w.dim(2); d.kw = w.dim(3);
  d.stride = stride; d.pad = pad;
  if (w.dim(1) != d.C)
    fail("conv2d: input channels " + std::to_string(d.C) + " != weight channels " +
         std::to_string(w.dim(1)));
  if (d.H + 2 * pad < d.kh || d.W + 2 * pad < d.kw)
    fail("conv2d: kernel " + std::to_string(d.kh) + "x" + std::to_string(d.kw) +
         " exceeds padded input " + std::to_string(d.H + 2 * pad) + "x" +
         std::to_string(d.W + 2 * pad));
  d.OH = (d.H + 2 * pad - d.kh) / stride + 1;
  d.OW = (d.W + 2 * pad - d.kw) / stride + 1;
  return d;
}

// Cache-blocked [rows x cols] -> [cols x rows] transpose.
inline void transpose(const double* a, int rows, int cols, double* at) {
  constexpr int B = 32;
  for (int r0 = 0; r0 < rows; r0 += B)
    for (int c0 = 0; c0 < cols; c0 += B) {
      const int r1 = std::min(rows, r0 + B), c1 = std::min(cols, c0 + B);
      for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c)
          at[static_cast<std::size_t>(c) * rows + r] = a[static_cast<std::size_t>(r) * cols + c];
    }
}

// In-bounds ox range [lo,hi) for one kernel column: 0 <= ox*stride - pad + kx < W.
inline void col_span(const ConvDims& d, int kx, int& lo, int& hi) {
  const int ix0 = kx - d.pad;
  lo = ix0 < 0 ? (-ix0 + d.stride - 1) / d.stride : 0;
  hi = ix0 >= d.W ? 0 : (d.W - 1 - ix0) / d.stride + 1;
  hi = std::min(hi, d.OW);
  lo = std::min(lo, hi);
}

// Samples [n0,n1) of x into column matrix [C*kh*kw x (n1-n0)*OH*OW],
// row (c*kh+ky)*kw+kx, column ((n-n0)*OH+oy)*OW+ox; out-of-bounds taps are 0.
inline void im2col(const double* x, const ConvDims& d, int n0, int n1, double* cols) {
  const int ncols = (n1 - n0) * d.OH * d.OW;
  for (int c = 0; c < d.C; ++c)
    for (int ky = 0; ky < d.kh; ++ky)
      for (int kx = 0; kx < d.kw; ++kx) {
        double* row = cols + static_cast<std::size_t>((c * d.kh + ky) * d.kw + kx) * ncols;
        int lo, hi;
        col_span(d, kx, lo, hi);
        for (int n = n0; n < n1; ++n) {
          const double* plane = x + (static_cast<std::size_t>(n) * d.C + c) * d.H * d.W;
          for (int oy = 0; oy < d.OH; ++oy) {
            const int iy = oy * d.stride - d.pad + ky;
            double* dst = row + (static_cast<std::size_t>(n - n0) * d.OH + oy) * d.OW;
            if (iy < 0 || iy >= d.H) {
              std::fill(dst, dst + d.OW, 0.0);
              continue;
            }
            const double* src = plane + static_cast<std::size_t>(iy) * d.W + (kx - d.pad);
            std::fill(dst, dst + lo, 0.0);
            if (d.stride == 1) {
              if (hi > lo) std::memcpy(dst + lo, src + lo, sizeof(double) * (hi - lo));
            } else {
              const double* s = src + static_cast<std::size_t>(lo) * d.stride;
              for (int ox = lo; ox < hi; ++ox, s += d.stride) dst[ox] = *s;
            }
            std::fill(dst + hi, dst + d.OW, 0.0);
          }
        }
      }
}

// Adjoint of im2col: scatter-accumulates dcols into dx. The loop order is
// fixed, so every input element receives its kernel-tap contributions in
// ascending (c,ky,kx) order and runs are reproducible bit for bit.
inline void col2im_acc(const double* dcols, const ConvDims& d, int n0, int n1, double* dx) {
  const int ncols = (n1 - n0) * d.OH * d.OW;
  for (int c = 0; c < d.C; ++c)
    for (int ky = 0; ky < d.kh; ++ky)
      for (int kx = 0; kx < d.kw; ++kx) {
        const double* row = dcols + static_cast<std::size_t>((c * d.kh + ky) * d.kw + kx) * ncols;
        int lo, hi;
        col_span(d, kx, lo, hi);
        for (int n = n0; n < n1; ++n) {
          double* plane = dx + (static_cast<std::size_t>(n) * d.C + c) * d.H * d.W;
          for (int oy = 0; oy < d.OH; ++oy) {
            const int iy = oy * d.stride - d.pad + ky;
            if (iy < 0 || iy >= d.H) continue;
            const double* src = row + (static_cast<std::size_t>(n - n0) * d.OH + oy) * d.OW;
            double* dst = plane + static_cast<std::size_t>(iy) * d.W + (kx - d.pad);
            if (d.stride == 1) {
              for (int ox = lo; ox < hi; ++ox) dst[ox] += src[ox];
            } else {
              double* t = dst + static_cast<std::size_t>(lo) * d.stride;
              for (int ox = lo; ox < hi; ++ox, t += d.stride) *t += src[ox];
            }
          }
        }
      }
}

// Samples per GEMM chunk, capped so the widest scratch stays modest.
inline int conv_chunk_samples(const ConvDims& d) {
  const std::size_t per_sample =
      static_cast<std::size_t>(d.C) * d.kh * d.kw * d.OH * d.OW * sizeof(double);
  const std::size_t cap = static_cast<std::size_t>(96) << 20;
  int chunk = per_sample == 0 ? d.N : static_cast<int>(std::max<std::size_t>(1, cap / std::max<std::size_t>(per_sample, 1)));
  return std::min(chunk, d.N);
}

}  // namespace detail

// 2-d cross-correlation with zero padding. bias may be an undefined tensor.
// Output element accumulation order matches the naive (c,ky,kx)-ascending
// loop oracle exactly (single fma chain, bias added last).
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  using detail::ConvDims;
  const ConvDims d = detail::conv_dims(x, w, stride, pad);
  const bool has_bias = b.defined();
  if (has_bias && (b.ndim() != 1 || b.dim(0) != d.Co))
    fail("conv2d: bias must be [" + std::to_string(d.Co) + "], got " + shape_str(b.shape()));

  std::vector<Tensor> parents = has_bias ? std::vector<Tensor>{x, w, b} : std::vector<Tensor>{x, w};
  Tensor out = make_op({d.N, d.Co, d.OH, d.OW}, parents, [x, w, b, d, has_bias](detail::Node& self) mutable {
    const int K = d.C * d.kh * d.kw;
    const int chunk = detail::conv_chunk_samples(d);
    const double* g = self.grad.data();
    const double* px = x.data();
    const double* pw = w.data();
    const bool need_dx = x.requires_grad();
    const bool need_dw = w.requires_grad();
    const bool need_db = has_bias && b.requires_grad();

    std::vector<double> wt;  // w transposed to [K x Co], built once if needed
    if (need_dx) {
      wt.resize(static_cast<std::size_t>(K) * d.Co);
      detail::transpose(pw, d.Co, K, wt.data());
    }

    std::vector<double> cols, colst, dys, dcols;
    for (int n0 = 0; n0 < d.N; n0 += chunk) {
      const int n1 = std::min(d.N, n0 + chunk);
      const int ncols = (n1 - n0) * d.OH * d.OW;

      // gather dY into [Co x ncols]
      dys.assign(static_cast<std::size_t>(d.Co) * ncols, 0.0);
      for (int n = n0; n < n1; ++n)
        for (int co = 0; co < d.Co; ++co) {
          const double* src = g + (static_cast<std::size_t>(n) * d.Co + co) * d.OH * d.OW;
          double* dst = dys.data() + static_cast<std::size_t>(co) * ncols +
                        static_cast<std::size_t>(n - n0) * d.OH * d.OW;
          std::memcpy(dst, src, sizeof(double) * d.OH * d.OW);
        }

      if (need_db) {
        double* db = b.grad_data();
        for (int co = 0; co < d.Co; ++co) {
          const double* row = dys.data() + static_cast<std::size_t>(co) * ncols;
          double s = 0.0;
          for (int q = 0; q < ncols; ++q) s += row[q];
          db[co] += s;
        }
      }
      if (need_dw || need_dx) {
        cols.resize(static_cast<std::size_t>(K) * ncols);
        detail::im2col(px, d, n0, n1, cols.data());
      }
      if (need_dw) {
        // dW += dY * cols^T, run through the tiled NN kernel on cols^T
        colst.resize(static_cast<std::size_t>(ncols) * K);
        detail::transpose(cols.data(), K, ncols, colst.data());
        gemm_nn_acc(dys.data(), colst.data(), w.grad_data(), d.Co, ncols, K);
      }
      if (need_dx) {
        dcols.assign(static_cast<std::size_t>(K) * ncols, 0.0);
        gemm_nn_acc(wt.data(), dys.data(), dcols.data(), K, d.Co, ncols);
        detail::col2im_acc(dcols.data(), d, n0, n1, x.grad_data());
      }
    }
  });

  const int K = d.C * d.kh * d.kw;
  const int chunk = detail::conv_chunk_samples(d);
  const double* px = x.data();
  const double* pw = w.data();
  double* po = out.data();
  std::vector<double> cols, ys;
  for (int n0 = 0; n0 < d.N; n0 += chunk) {
    const int n1 = std::min(d.N, n0 + chunk);
    const int ncols = (n1 - n0) * d.OH * d.OW;
    cols.resize(static_cast<std::size_t>(K) * ncols);
    detail::im2col(px, d, n0, n1, cols.data());
    ys.assign(static_cast<std::size_t>(d.Co) * ncols, 0.0);
    gemm_nn_acc(pw, cols.data(), ys.data(), d.Co, K, ncols);
    if (has_bias) {
      const double* pb = b.data();
      for (int co = 0; co < d.Co; ++co) {
        double* row = ys.data() + static_cast<std::size_t>(co) * ncols;
        for (int q = 0; q < ncols; ++q) row[q] += pb[co];
      }
    }
    for (int n = n0; n < n1; ++n)
      for (int co = 0; co < d.Co; ++co)
        std::memcpy(po + (static_cast<std::size_t>(n) * d.Co + co) * d.OH * d.OW,
                    ys.data() + static_cast<std::size_t>(co) * ncols +
                        static_cast<std::size_t>(n - n0) * d.OH * d.OW,
                    sizeof(double) * d.OH * d.OW);
  }
  return out;
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad) {
  return conv2d(x, w, Tensor(), stride, pad);
}

}  // namespace grn
