#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "tensor.hpp"

namespace grn {

// Max pooling with implicit -inf padding. Backward routes each output's
// gradient to its argmax input (first in row-major scan order on ties).
inline Tensor maxpool2d(const Tensor& x, int k, int stride, int pad) {
  if (x.ndim() != 4) fail("maxpool2d: input must be [N,C,H,W], got " + shape_str(x.shape()));
  if (k < 1 || stride < 1 || pad < 0) fail("maxpool2d: invalid window/stride/pad");
  if (pad >= k) fail("maxpool2d: pad " + std::to_string(pad) + " must be < window " + std::to_string(k));
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H + 2 * pad < k || W + 2 * pad < k)
    fail("maxpool2d: window " + std::to_string(k) + " exceeds padded input " +
         std::to_string(H + 2 * pad) + "x" + std::to_string(W + 2 * pad));
  const int OH = (H + 2 * pad - k) / stride + 1;
  const int OW = (W + 2 * pad - k) / stride + 1;

  auto argmax = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(N) * C * OH * OW);
  Tensor out = make_op({N, C, OH, OW}, {x}, [x, argmax](detail::Node& self) mutable {
    if (!x.requires_grad()) return;
    double* dx = x.grad_data();
    const double* g = self.grad.data();
    const std::int64_t* am = argmax->data();
    for (std::size_t i = 0; i < self.data.size(); ++i) dx[am[i]] += g[i];
  });

  const double* px = x.data();
  double* po = out.data();
  std::int64_t* am = argmax->data();
  std::size_t o = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * H * W;
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox, ++o) {
          double best = -std::numeric_limits<double>::infinity();
          std::int64_t best_i = -1;
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= W) continue;
              const double v = px[base + static_cast<std::size_t>(iy) * W + ix];
              if (v > best) {
                best = v;
                best_i = static_cast<std::int64_t>(base + static_cast<std::size_t>(iy) * W + ix);
              }
            }
          }
          po[o] = best;
          am[o] = best_i;
        }
    }
  return out;
}

// Global average pooling: window must equal the (square) spatial size.
inline Tensor avgpool2d(const Tensor& x, int k) {
  if (x.ndim() != 4) fail("avgpool2d: input must be [N,C,H,W], got " + shape_str(x.shape()));
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H != W || H != k)
    fail("avgpool2d: window " + std::to_string(k) + " must equal square spatial size, got " +
         std::to_string(H) + "x" + std::to_string(W));
  const double inv = 1.0 / (static_cast<double>(k) * k);
  Tensor out = make_op({N, C, 1, 1}, {x}, [x, k, inv](detail::Node& self) mutable {
    if (!x.requires_grad()) return;
    double* dx = x.grad_data();
    const double* g = self.grad.data();
    const std::size_t plane = static_cast<std::size_t>(k) * k;
    for (std::size_t i = 0; i < self.data.size(); ++i) {
      const double gv = g[i] * inv;
      double* p = dx + i * plane;
      for (std::size_t j = 0; j < plane; ++j) p[j] += gv;
    }
  });
  const double* px = x.data();
  double* po = out.data();
  const std::size_t plane = static_cast<std::size_t>(k) * k;
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    const double* p = px + static_cast<std::size_t>(i) * plane;
    double s = 0.0;
    for (std::size_t j = 0; j < plane; ++j) s += p[j];
    po[i] = s * inv;
  }
  return out;
}

namespace detail {

struct LerpTap {
  int i0, i1;   // source indices
  double f;     // fraction toward i1
};

// Half-pixel-center source coordinate, clamped to the valid range.
inline LerpTap lerp_tap(int out_i, int src_n, int out_n) {
  double s = (out_i + 0.5) * (static_cast<double>(src_n) / out_n) - 0.5;
  s = std::min(std::max(s, 0.0), static_cast<double>(src_n - 1));
  LerpTap t;
  t.i0 = static_cast<int>(std::floor(s));
  t.i1 = std::min(t.i0 + 1, src_n - 1);
  t.f = s - t.i0;
  return t;
}

// One-plane bilinear resample (up or down); shared by the tensor op and the
// image pipeline so both use the identical formula.
inline void bilinear_plane(const double* src, int h, int w, double* dst, int oh, int ow) {
  for (int oy = 0; oy < oh; ++oy) {
    const LerpTap ty = lerp_tap(oy, h, oh);
    for (int ox = 0; ox < ow; ++ox) {
      const LerpTap tx = lerp_tap(ox, w, ow);
      const double top = (1.0 - tx.f) * src[static_cast<std::size_t>(ty.i0) * w + tx.i0] +
                         tx.f * src[static_cast<std::size_t>(ty.i0) * w + tx.i1];
      const double bot = (1.0 - tx.f) * src[static_cast<std::size_t>(ty.i1) * w + tx.i0] +
                         tx.f * src[static_cast<std::size_t>(ty.i1) * w + tx.i1];
      dst[static_cast<std::size_t>(oy) * ow + ox] = (1.0 - ty.f) * top + ty.f * bot;
    }
  }
}

}  // namespace detail

// Bilinear upsampling to (out_h, out_w) with half-pixel centers and edge
// clamping; backward scatters the four interpolation weights.
inline Tensor bilinear_upsample(const Tensor& x, int out_h, int out_w) {
  if (x.ndim() != 4) fail("bilinear_upsample: input must be [N,C,H,W], got " + shape_str(x.shape()));
  if (out_h < 1 || out_w < 1) fail("bilinear_upsample: target size must be positive");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (out_h < H || out_w < W)
    fail("bilinear_upsample: target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
         " smaller than source " + std::to_string(H) + "x" + std::to_string(W));

  Tensor out = make_op({N, C, out_h, out_w}, {x}, [x, H, W, out_h, out_w](detail::Node& self) mutable {
    if (!x.requires_grad()) return;
    const int planes = x.dim(0) * x.dim(1);
    double* dx = x.grad_data();
    const double* g = self.grad.data();
    for (int p = 0; p < planes; ++p) {
      double* dplane = dx + static_cast<std::size_t>(p) * H * W;
      const double* gplane = g + static_cast<std::size_t>(p) * out_h * out_w;
      for (int oy = 0; oy < out_h; ++oy) {
        const detail::LerpTap ty = detail::lerp_tap(oy, H, out_h);
        for (int ox = 0; ox < out_w; ++ox) {
          const detail::LerpTap tx = detail::lerp_tap(ox, W, out_w);
          const double gv = gplane[static_cast<std::size_t>(oy) * out_w + ox];
          dplane[static_cast<std::size_t>(ty.i0) * W + tx.i0] += gv * (1.0 - ty.f) * (1.0 - tx.f);
          dplane[static_cast<std::size_t>(ty.i0) * W + tx.i1] += gv * (1.0 - ty.f) * tx.f;
          dplane[static_cast<std::size_t>(ty.i1) * W + tx.i0] += gv * ty.f * (1.0 - tx.f);
          dplane[static_cast<std::size_t>(ty.i1) * W + tx.i1] += gv * ty.f * tx.f;
        }
      }
    }
  });
  const double* px = x.data();
  double* po = out.data();
  for (int p = 0; p < N * C; ++p)
    detail::bilinear_plane(px + static_cast<std::size_t>(p) * H * W, H, W,
                           po + static_cast<std::size_t>(p) * out_h * out_w, out_h, out_w);
  return out;
}

}  // namespace grn
