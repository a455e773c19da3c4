#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "grn/ops.hpp"
#include "grn/pool.hpp"
#include "grn/rng.hpp"

using grn::Tensor;

namespace {
void fill(Tensor& t, grn::Rng& r, double s = 1.0) {
  for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = r.uniform(-s, s);
}
}  // namespace

TEST_CASE("maxpool matches a brute-force window scan") {
  grn::Rng r(301);
  const int cfgs[][5] = {{2, 3, 9, 3, 2}, {1, 2, 8, 2, 2}, {2, 1, 7, 3, 1}};
  for (const auto& c : cfgs) {
    const int N = c[0], C = c[1], H = c[2], k = c[3], stride = c[4];
    const int pad = 1;
    Tensor x({N, C, H, H});
    fill(x, r);
    Tensor y = grn::maxpool2d(x, k, stride, pad);
    const int OH = (H + 2 * pad - k) / stride + 1;
    REQUIRE(y.dim(2) == OH);
    for (int n = 0; n < N; ++n)
      for (int ch = 0; ch < C; ++ch)
        for (int oy = 0; oy < OH; ++oy)
          for (int ox = 0; ox < OH; ++ox) {
            double best = -std::numeric_limits<double>::infinity();
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= H || ix < 0 || ix >= H) continue;
                best = std::max(best,
                                x.data()[((static_cast<std::size_t>(n) * C + ch) * H + iy) * H + ix]);
              }
            REQUIRE(y.data()[((static_cast<std::size_t>(n) * C + ch) * OH + oy) * OH + ox] == best);
          }
  }
}

TEST_CASE("maxpool padding never wins even for all-negative input") {
  Tensor x = Tensor::full({1, 1, 2, 2}, -5.0);
  Tensor y = grn::maxpool2d(x, 3, 2, 1);
  REQUIRE(y.numel() == 1);
  REQUIRE(y.data()[0] == -5.0);
}

TEST_CASE("maxpool routes gradient to the first maximum on ties") {
  Tensor x = Tensor::from({1, 1, 2, 2}, {7.0, 7.0, 7.0, 7.0}, true);
  Tensor y = grn::maxpool2d(x, 2, 2, 0);
  grn::sum(y).backward();
  REQUIRE(x.grad()[0] == 1.0);  // scan order: first element claims the tie
  REQUIRE(x.grad()[1] == 0.0);
  REQUIRE(x.grad()[2] == 0.0);
  REQUIRE(x.grad()[3] == 0.0);
}

TEST_CASE("maxpool gradient accumulates across overlapping windows") {
  // stride 1, k 2 on 3x3: center element is the max of all four windows
  Tensor x = Tensor::from({1, 1, 3, 3}, {0, 0, 0, 0, 9, 0, 0, 0, 0}, true);
  grn::sum(grn::maxpool2d(x, 2, 1, 0)).backward();
  REQUIRE(x.grad()[4] == 4.0);
}

TEST_CASE("maxpool validates its geometry") {
  Tensor x({1, 1, 4, 4});
  REQUIRE_THROWS_AS(grn::maxpool2d(x, 0, 1, 0), grn::Error);
  REQUIRE_THROWS_AS(grn::maxpool2d(x, 3, 1, 3), grn::Error);  // pad >= window
  REQUIRE_THROWS_AS(grn::maxpool2d(x, 7, 1, 1), grn::Error);  // window > padded input
}

TEST_CASE("global average pool is the plane mean with uniform backward") {
  grn::Rng r(307);
  Tensor x({2, 3, 5, 5}, true);
  fill(x, r);
  Tensor y = grn::avgpool2d(x, 5);
  REQUIRE(y.dim(2) == 1);
  for (int i = 0; i < 6; ++i) {
    double s = 0.0;
    for (int j = 0; j < 25; ++j) s += x.data()[i * 25 + j];
    REQUIRE(y.data()[i] == s * (1.0 / 25.0));
  }
  grn::sum(y).backward();
  for (std::int64_t i = 0; i < x.numel(); ++i)
    REQUIRE(x.grad()[static_cast<std::size_t>(i)] == 1.0 / 25.0);
}

TEST_CASE("global average pool demands a matching square window") {
  Tensor a({1, 1, 4, 5});
  REQUIRE_THROWS_AS(grn::avgpool2d(a, 4), grn::Error);
  Tensor b({1, 1, 4, 4});
  REQUIRE_THROWS_AS(grn::avgpool2d(b, 3), grn::Error);
}

TEST_CASE("bilinear upsample 2x2 -> 4x4 matches hand-derived taps exactly") {
  // half-pixel centers: source coords -0.25, 0.25, 0.75, 1.25 clamp to
  // fractions {0, 0.25, 0.75, 1} toward the second sample; with the plane
  // [[0,1],[2,3]] the surface is fx + 2*fy, every product an exact dyadic
  Tensor x = Tensor::from({1, 1, 2, 2}, {0, 1, 2, 3});
  Tensor y = grn::bilinear_upsample(x, 4, 4);
  const double f[4] = {0.0, 0.25, 0.75, 1.0};
  for (int oy = 0; oy < 4; ++oy)
    for (int ox = 0; ox < 4; ++ox)
      REQUIRE(y.data()[oy * 4 + ox] == f[ox] + 2.0 * f[oy]);
}

TEST_CASE("bilinear upsample matches an independent per-pixel evaluation") {
  grn::Rng r(311);
  Tensor x({2, 2, 5, 7});
  fill(x, r);
  const int OH = 11, OW = 13;
  Tensor y = grn::bilinear_upsample(x, OH, OW);
  for (int p = 0; p < 4; ++p) {
    const double* src = x.data() + p * 35;
    const double* dst = y.data() + p * OH * OW;
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox) {
        auto tap = [](int o, int n, int on, int* i0, int* i1, double* fr) {
          double s = (o + 0.5) * (static_cast<double>(n) / on) - 0.5;
          s = std::min(std::max(s, 0.0), static_cast<double>(n - 1));
          *i0 = static_cast<int>(std::floor(s));
          *i1 = std::min(*i0 + 1, n - 1);
          *fr = s - *i0;
        };
        int y0, y1, x0, x1;
        double fy, fx;
        tap(oy, 5, OH, &y0, &y1, &fy);
        tap(ox, 7, OW, &x0, &x1, &fx);
        const double top = (1 - fx) * src[y0 * 7 + x0] + fx * src[y0 * 7 + x1];
        const double bot = (1 - fx) * src[y1 * 7 + x0] + fx * src[y1 * 7 + x1];
        REQUIRE(dst[oy * OW + ox] == (1 - fy) * top + fy * bot);
      }
  }
}

TEST_CASE("bilinear upsample to the same size is the identity") {
  grn::Rng r(313);
  Tensor x({1, 3, 6, 6});
  fill(x, r);
  Tensor y = grn::bilinear_upsample(x, 6, 6);
  for (std::int64_t i = 0; i < x.numel(); ++i) REQUIRE(y.data()[i] == x.data()[i]);
}

TEST_CASE("bilinear upsample rejects shrinking") {
  Tensor x({1, 1, 8, 8});
  REQUIRE_THROWS_AS(grn::bilinear_upsample(x, 4, 8), grn::Error);
  REQUIRE_THROWS_AS(grn::bilinear_upsample(x, 8, 7), grn::Error);
}

TEST_CASE("bilinear backward scatters the interpolation weights") {
  // upsample 1x1 -> 3x3: every output copies the single source, so the
  // source gradient is the count of outputs
  Tensor x = Tensor::from({1, 1, 1, 1}, {4.0}, true);
  Tensor y = grn::bilinear_upsample(x, 3, 3);
  for (int i = 0; i < 9; ++i) REQUIRE(y.data()[i] == 4.0);
  grn::sum(y).backward();
  REQUIRE(x.grad()[0] == 9.0);
}
