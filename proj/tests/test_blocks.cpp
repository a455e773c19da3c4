// Building blocks: parameter registry, initializer contracts, residual unit
// skip-path selection, and the attention module's mask wiring.
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "grn/blocks.hpp"

using namespace grn;

namespace {

Tensor filled(const Shape& shape, Rng& r, double lo, double hi) {
  Tensor t(shape);
  for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = lo + (hi - lo) * r.uniform();
  return t;
}

void zero_out(Tensor t) {
  for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = 0.0;
}

}  // namespace

TEST_CASE("parameter registry preserves creation order and rejects misuse", "[blocks]") {
  ParamStore ps;
  Rng rng(1);
  Builder b{ps, rng, ""};
  b.fc("head", 4, 2);
  b.bn("norm", 3);
  REQUIRE(ps.entries().size() == 6);
  CHECK(ps.entries()[0].name == "head.w");
  CHECK(ps.entries()[1].name == "head.b");
  CHECK(ps.entries()[2].name == "norm.gamma");
  CHECK(ps.entries()[3].name == "norm.beta");
  CHECK(ps.entries()[4].name == "norm.running_mean");
  CHECK(ps.entries()[5].name == "norm.running_var");

  CHECK(ps.has("head.w"));
  CHECK(!ps.has("nope"));
  CHECK_THROWS_AS(ps.get("nope"), Error);
  CHECK_THROWS_AS(ps.add("head.w", Tensor({1}), true), Error);

  // running statistics are state, not trainable parameters
  CHECK(ps.entries()[0].trainable);
  CHECK(ps.entries()[2].trainable);
  CHECK(!ps.entries()[4].trainable);
  CHECK(!ps.entries()[5].trainable);
}

TEST_CASE("classifier layers start at exact zero", "[blocks]") {
  ParamStore ps;
  Rng rng(7);
  Builder b{ps, rng, ""};
  LinearLayer fc = b.fc("fc", 64, 10);
  for (std::int64_t i = 0; i < fc.w.numel(); ++i) REQUIRE(fc.w.data()[i] == 0.0);
  for (std::int64_t i = 0; i < fc.b.numel(); ++i) REQUIRE(fc.b.data()[i] == 0.0);
}

TEST_CASE("batch norm starts as the identity transform", "[blocks]") {
  ParamStore ps;
  Rng rng(7);
  Builder b{ps, rng, ""};
  BatchNorm2d bn = b.bn("bn", 5);
  for (std::int64_t i = 0; i < 5; ++i) {
    CHECK(bn.gamma.data()[i] == 1.0);
    CHECK(bn.beta.data()[i] == 0.0);
    CHECK(bn.rm.data()[i] == 0.0);
    CHECK(bn.rv.data()[i] == 1.0);
  }
}

TEST_CASE("convolution weights follow the fan-in scaled normal init", "[blocks]") {
  ParamStore ps;
  Rng rng(7);
  Builder b{ps, rng, ""};
  const int cin = 32, k = 3, cout = 64;
  Conv2dLayer conv = b.conv("c", cin, cout, k, 1, 1, false);
  REQUIRE(conv.w.shape() == Shape{cout, cin, k, k});
  CHECK(!conv.b.defined());

  const double expect_sd = std::sqrt(2.0 / (cin * k * k));
  double sum = 0.0, sq = 0.0;
  const std::int64_t n = conv.w.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    sum += conv.w.data()[i];
    sq += conv.w.data()[i] * conv.w.data()[i];
  }
  const double mean = sum / static_cast<double>(n);
  const double sd = std::sqrt(sq / static_cast<double>(n) - mean * mean);
  CHECK(std::abs(mean) < 0.05 * expect_sd);          // ~18k samples
  CHECK(std::abs(sd - expect_sd) < 0.05 * expect_sd);

  Conv2dLayer with_bias = b.conv("cb", 4, 4, 1, 1, 0, true);
  REQUIRE(with_bias.b.defined());
  for (std::int64_t i = 0; i < 4; ++i) CHECK(with_bias.b.data()[i] == 0.0);
}

TEST_CASE("builder prefixes nest through sub-scopes", "[blocks]") {
  ParamStore ps;
  Rng rng(3);
  Builder b{ps, rng, ""};
  Builder inner = b.sub("stage1").sub("unit0");
  inner.bn("bn1", 2);
  CHECK(ps.has("stage1.unit0.bn1.gamma"));
}

TEST_CASE("a same-shape unit uses an identity skip, a reshaping unit projects", "[blocks]") {
  ParamStore ps;
  Rng rng(11);
  Builder b{ps, rng, ""};

  ResidualUnit same = ResidualUnit::make(b.sub("same"), 8, 8, 1);
  CHECK(!same.has_proj);
  CHECK(!ps.has("same.proj.w"));

  ResidualUnit strided = ResidualUnit::make(b.sub("strided"), 8, 8, 2);
  CHECK(strided.has_proj);
  CHECK(ps.has("strided.proj.w"));
  CHECK(ps.has("strided.proj_bn.gamma"));

  ResidualUnit widened = ResidualUnit::make(b.sub("widened"), 8, 16, 1);
  CHECK(widened.has_proj);
}

TEST_CASE("zeroed main path collapses an identity unit to relu of its input", "[blocks]") {
  ParamStore ps;
  Rng rng(11);
  Builder b{ps, rng, ""};
  ResidualUnit u = ResidualUnit::make(b.sub("u"), 4, 4, 1);
  zero_out(u.conv1.w);
  zero_out(u.conv2.w);

  NoGradGuard ng;
  Rng xr(5);
  Tensor x = filled({2, 4, 6, 6}, xr, 0.05, 1.0);  // strictly positive input
  Tensor y = u(x, /*training=*/false);
  REQUIRE(y.shape() == x.shape());
  // main path: conv->0, eval BN at init is identity on 0, relu 0, conv 0, BN 0;
  // skip is the raw input, so the sum is bitwise the input, and relu keeps it
  for (std::int64_t i = 0; i < x.numel(); ++i) REQUIRE(y.data()[i] == x.data()[i]);
}

TEST_CASE("zeroed projection unit outputs exact zero at halved resolution", "[blocks]") {
  ParamStore ps;
  Rng rng(11);
  Builder b{ps, rng, ""};
  ResidualUnit u = ResidualUnit::make(b.sub("u"), 4, 8, 2);
  zero_out(u.conv1.w);
  zero_out(u.conv2.w);
  zero_out(u.proj.w);

  NoGradGuard ng;
  Rng xr(5);
  Tensor x = filled({1, 4, 8, 8}, xr, -1.0, 1.0);
  Tensor y = u(x, false);
  REQUIRE(y.shape() == Shape{1, 8, 4, 4});
  for (std::int64_t i = 0; i < y.numel(); ++i) REQUIRE(y.data()[i] == 0.0);
}

TEST_CASE("attention ladder depth and level sizes follow the input side", "[blocks]") {
  ParamStore ps;
  Rng rng(2);
  Builder b{ps, rng, ""};

  AttentionModule a32 = AttentionModule::make(b.sub("a32"), 4, 32);
  CHECK(a32.depth == 3);
  CHECK(a32.sizes == std::vector<int>{32, 16, 8, 4});
  CHECK(a32.skips.size() == 2);

  AttentionModule a8 = AttentionModule::make(b.sub("a8"), 4, 8);
  CHECK(a8.depth == 2);
  CHECK(a8.sizes == std::vector<int>{8, 4, 2});
  CHECK(a8.skips.size() == 1);

  AttentionModule a4 = AttentionModule::make(b.sub("a4"), 4, 4);
  CHECK(a4.depth == 1);
  CHECK(a4.sizes == std::vector<int>{4, 2});
  CHECK(a4.skips.empty());

  // explicit depth deeper than the side supports must be rejected
  CHECK_THROWS_AS(AttentionModule::make(b.sub("bad"), 4, 4, 3), Error);
}

TEST_CASE("attention module wires mask and trunk exactly as documented", "[blocks]") {
  ParamStore ps;
  Rng rng(21);
  Builder b{ps, rng, ""};
  AttentionModule m = AttentionModule::make(b.sub("m"), 4, 16);

  NoGradGuard ng;
  Rng xr(9);
  Tensor x = filled({2, 4, 16, 16}, xr, -1.0, 1.0);

  // recompose the documented dataflow from the module's own pieces
  Tensor p = m.pre(x, false);
  Tensor t = m.trunk2(m.trunk1(p, false), false);
  Tensor mask = m.soft_mask(p, false);
  Tensor expect = m.post(fuse(mask, t), false);

  Tensor y = m(x, false);
  REQUIRE(y.shape() == expect.shape());
  for (std::int64_t i = 0; i < y.numel(); ++i) REQUIRE(y.data()[i] == expect.data()[i]);

  // the mask is a sigmoid: strictly inside (0, 1)
  for (std::int64_t i = 0; i < mask.numel(); ++i) {
    REQUIRE(mask.data()[i] > 0.0);
    REQUIRE(mask.data()[i] < 1.0);
  }
}

TEST_CASE("disabling the mask routes the trunk straight through", "[blocks]") {
  ParamStore ps;
  Rng rng(21);
  Builder b{ps, rng, ""};
  AttentionModule m = AttentionModule::make(b.sub("m"), 4, 16);

  NoGradGuard ng;
  Rng xr(9);
  Tensor x = filled({2, 4, 16, 16}, xr, -1.0, 1.0);

  Tensor p = m.pre(x, false);
  Tensor t = m.trunk2(m.trunk1(p, false), false);
  Tensor expect = m.post(t, false);

  m.mask_zero = true;
  Tensor y = m(x, false);
  for (std::int64_t i = 0; i < y.numel(); ++i) REQUIRE(y.data()[i] == expect.data()[i]);

  // and the hook changes the result relative to the masked forward
  m.mask_zero = false;
  Tensor masked = m(x, false);
  bool differs = false;
  for (std::int64_t i = 0; i < masked.numel(); ++i)
    if (masked.data()[i] != y.data()[i]) { differs = true; break; }
  CHECK(differs);
}

TEST_CASE("attention module rejects a mismatched spatial side", "[blocks]") {
  ParamStore ps;
  Rng rng(4);
  Builder b{ps, rng, ""};
  AttentionModule m = AttentionModule::make(b.sub("m"), 4, 16);
  NoGradGuard ng;
  Rng xr(3);
  Tensor x = filled({1, 4, 8, 8}, xr, 0.0, 1.0);
  CHECK_THROWS_AS(m(x, false), Error);
}
