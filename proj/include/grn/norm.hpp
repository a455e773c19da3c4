#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "tensor.hpp"

namespace grn {

// Per-channel batch normalization over (N,H,W). Training normalizes by batch
// statistics (biased variance) and updates running stats in place with
// momentum (running variance gets the unbiased estimate); eval normalizes by
// the running stats. Differentiable w.r.t. input, gamma, and beta in both
// modes; the running buffers never take gradients.
inline Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                          Tensor& running_mean, Tensor& running_var, bool training,
                          double momentum = 0.1, double eps = 1e-5) {
  if (x.ndim() != 4) fail("batchnorm2d: input must be [N,C,H,W], got " + shape_str(x.shape()));
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  for (const Tensor* t : std::initializer_list<const Tensor*>{&gamma, &beta, &running_mean, &running_var})
    if (t->ndim() != 1 || t->dim(0) != C)
      fail("batchnorm2d: per-channel tensor must be [" + std::to_string(C) + "], got " +
           shape_str(t->shape()));
  const std::int64_t m = static_cast<std::int64_t>(N) * H * W;
  if (training && m == 1)
    fail("batchnorm2d: train mode needs more than one value per channel (N*H*W == 1)");

  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const std::size_t nstride = static_cast<std::size_t>(C) * plane;

  if (!training) {
    const double* rm = running_mean.data();
    const double* rv = running_var.data();
    Tensor out = make_op({N, C, H, W}, {x, gamma, beta}, nullptr);
    // running stats captured by value so later in-place updates cannot skew backward
    auto inv_s = std::make_shared<std::vector<double>>(C);
    auto mu_s = std::make_shared<std::vector<double>>(C);
    for (int c = 0; c < C; ++c) {
      (*inv_s)[c] = 1.0 / std::sqrt(rv[c] + eps);
      (*mu_s)[c] = rm[c];
    }
    if (out.requires_grad())
      out.node().backfn = [x, gamma, beta, N, C, plane, nstride, inv_s, mu_s](detail::Node& self) mutable {
        const double* g = self.grad.data();
        const double* pg = gamma.data();
        const double* px = x.data();
        const double* inv = inv_s->data();
        const double* mu = mu_s->data();
        for (int c = 0; c < C; ++c) {
          const double a = pg[c] * inv[c];
          double dg = 0.0, db = 0.0;
          for (int n = 0; n < N; ++n) {
            const std::size_t off = static_cast<std::size_t>(n) * nstride + static_cast<std::size_t>(c) * plane;
            const double* gp = g + off;
            const double* xp = px + off;
            if (x.requires_grad()) {
              double* dxp = x.grad_data() + off;
              for (std::size_t i = 0; i < plane; ++i) dxp[i] += gp[i] * a;
            }
            for (std::size_t i = 0; i < plane; ++i) {
              dg += gp[i] * (xp[i] - mu[c]) * inv[c];
              db += gp[i];
            }
          }
          if (gamma.requires_grad()) gamma.grad_data()[c] += dg;
          if (beta.requires_grad()) beta.grad_data()[c] += db;
        }
      };
    const double* px = x.data();
    const double* pg = gamma.data();
    const double* pb = beta.data();
    double* po = out.data();
    for (int c = 0; c < C; ++c) {
      const double a = pg[c] / std::sqrt(rv[c] + eps);
      const double b2 = pb[c] - rm[c] * a;
      for (int n = 0; n < N; ++n) {
        const std::size_t off = static_cast<std::size_t>(n) * nstride + static_cast<std::size_t>(c) * plane;
        for (std::size_t i = 0; i < plane; ++i) po[off + i] = a * px[off + i] + b2;
      }
    }
    return out;
  }

  // training path
  auto mean = std::make_shared<std::vector<double>>(C, 0.0);
  auto var = std::make_shared<std::vector<double>>(C, 0.0);
  const double* px = x.data();
  for (int c = 0; c < C; ++c) {
    double s = 0.0;
    for (int n = 0; n < N; ++n) {
      const double* p = px + static_cast<std::size_t>(n) * nstride + static_cast<std::size_t>(c) * plane;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
    }
    const double mu = s / static_cast<double>(m);
    double sq = 0.0;
    for (int n = 0; n < N; ++n) {
      const double* p = px + static_cast<std::size_t>(n) * nstride + static_cast<std::size_t>(c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double dvv = p[i] - mu;
        sq += dvv * dvv;
      }
    }
    (*mean)[c] = mu;
    (*var)[c] = sq / static_cast<double>(m);
  }

  {
    double* rm = running_mean.data();
    double* rv = running_var.data();
    const double unbias = static_cast<double>(m) / static_cast<double>(m - 1);
    for (int c = 0; c < C; ++c) {
      rm[c] = (1.0 - momentum) * rm[c] + momentum * (*mean)[c];
      rv[c] = (1.0 - momentum) * rv[c] + momentum * (*var)[c] * unbias;
    }
  }

  Tensor out = make_op({N, C, H, W}, {x, gamma, beta},
                       [x, gamma, beta, mean, var, N, C, plane, nstride, m, eps](detail::Node& self) mutable {
    const double* g = self.grad.data();
    const double* px = x.data();
    const double* pg = gamma.data();
    const double inv_m = 1.0 / static_cast<double>(m);
    for (int c = 0; c < C; ++c) {
      const double mu = (*mean)[c];
      const double inv = 1.0 / std::sqrt((*var)[c] + eps);
      // reductions: sum dy, sum dy*(x-mu)
      double sg = 0.0, sgx = 0.0;
      for (int n = 0; n < N; ++n) {
        const std::size_t off = static_cast<std::size_t>(n) * nstride + static_cast<std::size_t>(c) * plane;
        const double* gp = g + off;
        const double* xp = px + off;
        for (std::size_t i = 0; i < plane; ++i) {
          sg += gp[i];
          sgx += gp[i] * (xp[i] - mu);
        }
      }
      if (gamma.requires_grad()) gamma.grad_data()[c] += sgx * inv;
      if (beta.requires_grad()) beta.grad_data()[c] += sg;
      if (x.requires_grad()) {
        // dL/dx = (gamma*inv/m) * (m*dy - sum(dy) - (x-mu)*inv^2 * sum(dy*(x-mu)))
        const double a = pg[c] * inv * inv_m;
        double* dx = x.grad_data();
        for (int n = 0; n < N; ++n) {
          const std::size_t off = static_cast<std::size_t>(n) * nstride + static_cast<std::size_t>(c) * plane;
          const double* gp = g + off;
          const double* xp = px + off;
          double* dxp = dx + off;
          for (std::size_t i = 0; i < plane; ++i)
            dxp[i] += a * (static_cast<double>(m) * gp[i] - sg - (xp[i] - mu) * inv * inv * sgx);
        }
      }
    }
  });

  const double* pg = gamma.data();
  const double* pb = beta.data();
  double* po = out.data();
  for (int c = 0; c < C; ++c) {
    const double inv = 1.0 / std::sqrt((*var)[c] + eps);
    const double a = pg[c] * inv;
    const double b2 = pb[c] - (*mean)[c] * a;
    for (int n = 0; n < N; ++n) {
      const std::size_t off = static_cast<std::size_t>(n) * nstride + static_cast<std::size_t>(c) * plane;
      for (std::size_t i = 0; i < plane; ++i) po[off + i] = a * px[off + i] + b2;
    }
  }
  return out;
}

}  // namespace grn
