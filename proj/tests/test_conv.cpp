#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "grn/conv.hpp"
#include "grn/ops.hpp"
#include "grn/rng.hpp"

using grn::Tensor;

namespace {

// Six-loop reference with the documented accumulation contract: for every
// output element, one fused multiply-add chain over (ci, ky, kx) ascending,
// starting at 0.0, padding contributing explicit zero terms; bias added last.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor* b, int stride, int pad) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int OH = (H + 2 * pad - kh) / stride + 1;
  const int OW = (W + 2 * pad - kw) / stride + 1;
  Tensor out({N, Co, OH, OW});
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < Co; ++co)
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          double acc = 0.0;
          for (int ci = 0; ci < C; ++ci)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int iy = oy * stride - pad + ky;
                const int ix = ox * stride - pad + kx;
                const double xv =
                    (iy < 0 || iy >= H || ix < 0 || ix >= W)
                        ? 0.0
                        : x.data()[((static_cast<std::size_t>(n) * C + ci) * H + iy) * W + ix];
                const double wv =
                    w.data()[((static_cast<std::size_t>(co) * C + ci) * kh + ky) * kw + kx];
                acc = std::fma(wv, xv, acc);
              }
          if (b) acc += b->data()[co];
          out.data()[((static_cast<std::size_t>(n) * Co + co) * OH + oy) * OW + ox] = acc;
        }
  return out;
}

void fill(Tensor& t, grn::Rng& r, double s = 1.0) {
  for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = r.uniform(-s, s);
}

struct Cfg {
  int N, C, H, W, Co, k, stride, pad;
};

}  // namespace

TEST_CASE("conv2d forward matches the six-loop fma reference bitwise") {
  grn::Rng r(211);
  const Cfg cfgs[] = {
      {1, 1, 5, 5, 1, 3, 1, 1},   {2, 3, 8, 8, 4, 3, 1, 1},  {1, 2, 9, 7, 3, 3, 2, 1},
      {2, 4, 11, 11, 5, 7, 2, 3}, {1, 8, 6, 6, 16, 1, 1, 0}, {3, 5, 10, 10, 2, 3, 2, 1},
      {1, 1, 3, 3, 1, 3, 1, 0},   {2, 2, 12, 5, 3, 5, 3, 2},
  };
  for (const Cfg& c : cfgs) {
    Tensor x({c.N, c.C, c.H, c.W}), w({c.Co, c.C, c.k, c.k}), b({c.Co});
    fill(x, r);
    fill(w, r);
    fill(b, r);
    Tensor got = grn::conv2d(x, w, b, c.stride, c.pad);
    Tensor want = naive_conv(x, w, &b, c.stride, c.pad);
    REQUIRE(got.shape() == want.shape());
    for (std::int64_t i = 0; i < got.numel(); ++i) {
      INFO("cfg N" << c.N << " C" << c.C << " H" << c.H << " k" << c.k << " s" << c.stride
                   << " p" << c.pad << " element " << i);
      REQUIRE(got.data()[i] == want.data()[i]);
    }
    // bias-free overload agrees with the reference without bias
    Tensor got2 = grn::conv2d(x, w, c.stride, c.pad);
    Tensor want2 = naive_conv(x, w, nullptr, c.stride, c.pad);
    for (std::int64_t i = 0; i < got2.numel(); ++i) REQUIRE(got2.data()[i] == want2.data()[i]);
  }
}

TEST_CASE("conv2d output shape follows the floor formula") {
  Tensor x({1, 1, 17, 13}), w({2, 1, 3, 3});
  Tensor y = grn::conv2d(x, w, 2, 1);
  REQUIRE(y.dim(2) == (17 + 2 - 3) / 2 + 1);
  REQUIRE(y.dim(3) == (13 + 2 - 3) / 2 + 1);
}

TEST_CASE("conv2d validates shapes") {
  Tensor x({1, 3, 8, 8});
  REQUIRE_THROWS_AS(grn::conv2d(x, Tensor({4, 2, 3, 3}), 1, 1), grn::Error);  // Ci mismatch
  REQUIRE_THROWS_AS(grn::conv2d(x, Tensor({4, 3, 9, 9}), 1, 0), grn::Error);  // kernel too big
  Tensor w({4, 3, 3, 3});
  REQUIRE_THROWS_AS(grn::conv2d(x, w, Tensor({5}), 1, 1), grn::Error);        // bias length
  REQUIRE_THROWS_AS(grn::conv2d(x, w, 0, 1), grn::Error);                     // stride
}

TEST_CASE("conv2d backward is deterministic across runs") {
  grn::Rng r(223);
  auto run = [&](std::uint64_t seed) {
    grn::Rng rr(seed);
    Tensor x({2, 3, 9, 9}, true), w({4, 3, 3, 3}, true), b({4}, true);
    fill(x, rr);
    fill(w, rr);
    fill(b, rr);
    grn::sum(grn::conv2d(x, w, b, 2, 1)).backward();
    std::vector<double> all;
    all.insert(all.end(), x.grad().begin(), x.grad().end());
    all.insert(all.end(), w.grad().begin(), w.grad().end());
    all.insert(all.end(), b.grad().begin(), b.grad().end());
    return all;
  };
  REQUIRE(run(5) == run(5));
}

TEST_CASE("conv2d bias gradient is the sum over output positions") {
  grn::Rng r(227);
  Tensor x({2, 2, 6, 6}, true), w({3, 2, 3, 3}, true), b({3}, true);
  fill(x, r);
  fill(w, r);
  fill(b, r);
  Tensor y = grn::conv2d(x, w, b, 1, 1);
  grn::sum(y).backward();
  // d(sum)/db[co] = number of output elements fed by that bias = N*OH*OW
  const double want = static_cast<double>(y.dim(0) * y.dim(2) * y.dim(3));
  for (int co = 0; co < 3; ++co) REQUIRE(b.grad()[static_cast<std::size_t>(co)] == want);
}

TEST_CASE("conv2d weight gradient matches the reference on a tiny case") {
  // 1x1x2x2 input, 1x1x1x1 kernel: y = w*x, d(sum y)/dw = sum x, dx = w each
  Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4}, true);
  Tensor w = Tensor::from({1, 1, 1, 1}, {2.5}, true);
  grn::sum(grn::conv2d(x, w, 1, 0)).backward();
  REQUIRE(w.grad()[0] == 10.0);
  for (int i = 0; i < 4; ++i) REQUIRE(x.grad()[static_cast<std::size_t>(i)] == 2.5);
}
