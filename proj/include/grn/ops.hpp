#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "gemm.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace grn {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    fail(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
         shape_str(b.shape()));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = make_op(a.shape(), {a, b}, [a, b](detail::Node& self) mutable {
    const double* g = self.grad.data();
    const std::size_t n = self.data.size();
    if (a.requires_grad()) {
      double* da = a.grad_data();
      for (std::size_t i = 0; i < n; ++i) da[i] += g[i];
    }
    if (b.requires_grad()) {
      double* db = b.grad_data();
      for (std::size_t i = 0; i < n; ++i) db[i] += g[i];
    }
  });
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + pb[i];
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = make_op(a.shape(), {a, b}, [a, b](detail::Node& self) mutable {
    const double* g = self.grad.data();
    const std::size_t n = self.data.size();
    if (a.requires_grad()) {
      double* da = a.grad_data();
      const double* pb = b.data();
      for (std::size_t i = 0; i < n; ++i) da[i] += g[i] * pb[i];
    }
    if (b.requires_grad()) {
      double* db = b.grad_data();
      const double* pa = a.data();
      for (std::size_t i = 0; i < n; ++i) db[i] += g[i] * pa[i];
    }
  });
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * pb[i];
  return out;
}

// Feature fusion (1 + g) * l. At g == 0 the result is bitwise equal to l.
inline Tensor fuse(const Tensor& g, const Tensor& l) {
  check_same_shape(g, l, "fuse");
  Tensor out = make_op(g.shape(), {g, l}, [g, l](detail::Node& self) mutable {
    const double* go = self.grad.data();
    const std::size_t n = self.data.size();
    if (g.requires_grad()) {
      double* dg = g.grad_data();
      const double* pl = l.data();
      for (std::size_t i = 0; i < n; ++i) dg[i] += go[i] * pl[i];
    }
    if (l.requires_grad()) {
      double* dl = l.grad_data();
      const double* pg = g.data();
      for (std::size_t i = 0; i < n; ++i) dl[i] += go[i] * (1.0 + pg[i]);
    }
  });
  const double* pg = g.data();
  const double* pl = l.data();
  double* po = out.data();
  for (std::int64_t i = 0; i < out.numel(); ++i) po[i] = (1.0 + pg[i]) * pl[i];
  return out;
}

inline Tensor scale(const Tensor& x, double c) {
  Tensor out = make_op(x.shape(), {x}, [x, c](detail::Node& self) mutable {
    const double* g = self.grad.data();
    if (x.requires_grad()) {
      double* dx = x.grad_data();
      for (std::size_t i = 0; i < self.data.size(); ++i) dx[i] += c * g[i];
    }
  });
  const double* px = x.data();
  double* po = out.data();
  for (std::int64_t i = 0; i < out.numel(); ++i) po[i] = c * px[i];
  return out;
}

inline Tensor sum(const Tensor& x) {
  Tensor out = make_op({1}, {x}, [x](detail::Node& self) mutable {
    const double g = self.grad[0];
    if (x.requires_grad()) {
      double* dx = x.grad_data();
      for (std::int64_t i = 0; i < x.numel(); ++i) dx[i] += g;
    }
  });
  const double* px = x.data();
  double s = 0.0;
  for (std::int64_t i = 0; i < x.numel(); ++i) s += px[i];
  out.data()[0] = s;
  return out;
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    fail("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  Tensor out = make_op(std::move(shape), {x}, [x](detail::Node& self) mutable {
    if (x.requires_grad()) {
      double* dx = x.grad_data();
      const double* g = self.grad.data();
      for (std::size_t i = 0; i < self.data.size(); ++i) dx[i] += g[i];
    }
  });
  std::copy(x.data(), x.data() + x.numel(), out.data());
  return out;
}

inline Tensor relu(const Tensor& x) {
  Tensor out = make_op(x.shape(), {x}, [x](detail::Node& self) mutable {
    if (x.requires_grad()) {
      double* dx = x.grad_data();
      const double* g = self.grad.data();
      const double* px = x.data();
      for (std::size_t i = 0; i < self.data.size(); ++i)
        if (px[i] > 0.0) dx[i] += g[i];
    }
  });
  const double* px = x.data();
  double* po = out.data();
  for (std::int64_t i = 0; i < out.numel(); ++i) po[i] = px[i] > 0.0 ? px[i] : 0.0;
  return out;
}

inline Tensor sigmoid(const Tensor& x) {
  Tensor out = make_op(x.shape(), {x}, [x](detail::Node& self) mutable {
    if (x.requires_grad()) {
      double* dx = x.grad_data();
      const double* g = self.grad.data();
      const double* s = self.data.data();  // own forward output
      for (std::size_t i = 0; i < self.data.size(); ++i) dx[i] += g[i] * s[i] * (1.0 - s[i]);
    }
  });
  const double* px = x.data();
  double* po = out.data();
  for (std::int64_t i = 0; i < out.numel(); ++i) po[i] = 1.0 / (1.0 + std::exp(-px[i]));
  return out;
}

// Inverted dropout. Training zeroes each element with probability `rate` and
// scales survivors by 1/(1-rate); eval and rate 0 return the input unchanged.
inline Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) fail("dropout: rate must lie in [0,1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& m : *mask) m = rng.uniform() >= rate ? keep_scale : 0.0;
  Tensor out = make_op(x.shape(), {x}, [x, mask](detail::Node& self) mutable {
    if (x.requires_grad()) {
      double* dx = x.grad_data();
      const double* g = self.grad.data();
      const double* m = mask->data();
      for (std::size_t i = 0; i < self.data.size(); ++i) dx[i] += g[i] * m[i];
    }
  });
  const double* px = x.data();
  const double* m = mask->data();
  double* po = out.data();
  for (std::int64_t i = 0; i < out.numel(); ++i) po[i] = px[i] * m[i];
  return out;
}

// y = x W^T + b with x:[N,D], w:[K,D], b:[K]. Forward dots use one fma chain
// each, matching the naive oracle bit for bit.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.ndim() != 2 || w.ndim() != 2 || b.ndim() != 1)
    fail("linear: expected x:[N,D] w:[K,D] b:[K], got " + shape_str(x.shape()) + " " +
         shape_str(w.shape()) + " " + shape_str(b.shape()));
  const int N = x.dim(0), D = x.dim(1), K = w.dim(0);
  if (w.dim(1) != D || b.dim(0) != K)
    fail("linear: dimension mismatch x:" + shape_str(x.shape()) + " w:" + shape_str(w.shape()) +
         " b:" + shape_str(b.shape()));
  Tensor out = make_op({N, K}, {x, w, b}, [x, w, b, N, D, K](detail::Node& self) mutable {
    const double* g = self.grad.data();
    const double* px = x.data();
    const double* pw = w.data();
    if (x.requires_grad()) {
      double* dx = x.grad_data();
      for (int n = 0; n < N; ++n)
        for (int o = 0; o < K; ++o) {
          const double go = g[n * K + o];
          for (int d = 0; d < D; ++d) dx[n * D + d] += go * pw[o * D + d];
        }
    }
    if (w.requires_grad()) {
      double* dw = w.grad_data();
      for (int n = 0; n < N; ++n)
        for (int o = 0; o < K; ++o) {
          const double go = g[n * K + o];
          for (int d = 0; d < D; ++d) dw[o * D + d] += go * px[n * D + d];
        }
    }
    if (b.requires_grad()) {
      double* db = b.grad_data();
      for (int n = 0; n < N; ++n)
        for (int o = 0; o < K; ++o) db[o] += g[n * K + o];
    }
  });
  const double* px = x.data();
  const double* pw = w.data();
  const double* pb = b.data();
  double* po = out.data();
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < K; ++o) po[n * K + o] = dot_strict(px + n * D, pw + o * D, D) + pb[o];
  return out;
}

// Mean over the batch of -log softmax(logits)[label], stabilized by row-max
// subtraction. Gradient is (softmax - one_hot)/N.
inline Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2) fail("softmax_cross_entropy: logits must be [N,K], got " + shape_str(logits.shape()));
  const int N = logits.dim(0), K = logits.dim(1);
  if (static_cast<int>(labels.size()) != N)
    fail("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
         std::to_string(N));
  for (int n = 0; n < N; ++n)
    if (labels[n] < 0 || labels[n] >= K)
      fail("softmax_cross_entropy: label " + std::to_string(labels[n]) + " outside [0," +
           std::to_string(K) + ")");

  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(N) * K);
  const double* pl = logits.data();
  double loss = 0.0;
  for (int n = 0; n < N; ++n) {
    const double* row = pl + static_cast<std::size_t>(n) * K;
    double m = row[0];
    for (int k = 1; k < K; ++k) m = std::max(m, row[k]);
    double sum = 0.0;
    double* prow = probs->data() + static_cast<std::size_t>(n) * K;
    for (int k = 0; k < K; ++k) {
      prow[k] = std::exp(row[k] - m);
      sum += prow[k];
    }
    for (int k = 0; k < K; ++k) prow[k] /= sum;
    loss += std::log(sum) - (row[labels[n]] - m);
  }
  loss /= N;

  Tensor out = make_op({1}, {logits}, [logits, probs, labels, N, K](detail::Node& self) mutable {
    if (!logits.requires_grad()) return;
    const double g = self.grad[0] / N;
    double* dl = logits.grad_data();
    const double* p = probs->data();
    for (int n = 0; n < N; ++n) {
      for (int k = 0; k < K; ++k) dl[n * K + k] += g * p[n * K + k];
      dl[n * K + labels[n]] -= g;
    }
  });
  out.data()[0] = loss;
  return out;
}

}  // namespace grn
