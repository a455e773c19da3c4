#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "conv.hpp"
#include "norm.hpp"
#include "ops.hpp"
#include "pool.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace grn {

struct ParamEntry {
  std::string name;
  Tensor t;
  bool trainable;
};

// Named parameter registry. Creation order is the canonical order used by the
// optimizer and the checkpoint format, so it must be deterministic.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor t, bool trainable) {
    if (index_.count(name)) fail("params: duplicate name " + name);
    index_[name] = entries_.size();
    entries_.push_back({name, t, trainable});
    return t;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Tensor get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail("params: unknown name " + name);
    return entries_[it->second].t;
  }

  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::vector<ParamEntry>& entries() { return entries_; }

  void zero_grad() {
    for (ParamEntry& e : entries_)
      if (e.trainable) e.t.zero_grad();
  }

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Conv2dLayer {
  Tensor w, b;  // b stays undefined for convolutions feeding a batch norm
  int stride = 1, pad = 0;
  Tensor operator()(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }
};

struct BatchNorm2d {
  Tensor gamma, beta, rm, rv;
  Tensor operator()(const Tensor& x, bool training) const {
    Tensor m = rm, v = rv;
    return batchnorm2d(x, gamma, beta, m, v, training);
  }
};

struct LinearLayer {
  Tensor w, b;
  Tensor operator()(const Tensor& x) const { return linear(x, w, b); }
};

// Scoped factory: registers parameters under a dotted prefix and draws every
// initial value from one shared stream, so build order fixes the init.
struct Builder {
  ParamStore& store;
  Rng& rng;
  std::string prefix;

  Builder sub(const std::string& name) const { return {store, rng, prefix + name + "."}; }

  Conv2dLayer conv(const std::string& name, int cin, int cout, int k, int stride, int pad,
                   bool bias) const {
    Conv2dLayer l;
    Tensor w({cout, cin, k, k}, true);
    const double stddev = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
    for (std::int64_t i = 0; i < w.numel(); ++i) w.data()[i] = rng.normal(0.0, stddev);
    l.w = store.add(prefix + name + ".w", w, true);
    if (bias) l.b = store.add(prefix + name + ".b", Tensor({cout}, true), true);
    l.stride = stride;
    l.pad = pad;
    return l;
  }

  BatchNorm2d bn(const std::string& name, int c) const {
    BatchNorm2d l;
    l.gamma = store.add(prefix + name + ".gamma", Tensor::full({c}, 1.0, true), true);
    l.beta = store.add(prefix + name + ".beta", Tensor({c}, true), true);
    l.rm = store.add(prefix + name + ".running_mean", Tensor({c}), false);
    l.rv = store.add(prefix + name + ".running_var", Tensor::full({c}, 1.0), false);
    return l;
  }

  // classifier layers start at zero so an untrained model scores uniformly
  LinearLayer fc(const std::string& name, int in, int out) const {
    LinearLayer l;
    l.w = store.add(prefix + name + ".w", Tensor({out, in}, true), true);
    l.b = store.add(prefix + name + ".b", Tensor({out}, true), true);
    return l;
  }
};

// Bottleneck-style unit: relu(BN(conv3x3_s(relu(BN(conv1x1(x))))) + skip(x)).
// The skip is identity, or a 1x1 stride-s projection (conv + BN, so both
// branches meet at a normalized scale) exactly when the unit changes
// resolution or width.
struct ResidualUnit {
  Conv2dLayer conv1, conv2, proj;
  BatchNorm2d bn1, bn2, proj_bn;
  bool has_proj = false;

  static ResidualUnit make(const Builder& b, int cin, int cout, int stride) {
    ResidualUnit u;
    u.conv1 = b.conv("conv1", cin, cout, 1, 1, 0, false);
    u.bn1 = b.bn("bn1", cout);
    u.conv2 = b.conv("conv2", cout, cout, 3, stride, 1, false);
    u.bn2 = b.bn("bn2", cout);
    u.has_proj = stride != 1 || cin != cout;
    if (u.has_proj) {
      u.proj = b.conv("proj", cin, cout, 1, stride, 0, false);
      u.proj_bn = b.bn("proj_bn", cout);
    }
    return u;
  }

  Tensor operator()(const Tensor& x, bool training) const {
    Tensor h = relu(bn1(conv1(x), training));
    h = bn2(conv2(h), training);
    Tensor skip = has_proj ? proj_bn(proj(x), training) : x;
    return relu(add(h, skip));
  }
};

// Residual attention block: pre unit, then H = (1 + M) * T over a
// two-unit trunk T and a pool/upsample soft-mask ladder M, then a post unit.
struct AttentionModule {
  ResidualUnit pre, trunk1, trunk2, post;
  int depth = 0;
  std::vector<ResidualUnit> down;   // one per pooled level
  std::vector<ResidualUnit> skips;  // taps at the 2x and 4x reduced levels
  Conv2dLayer mconv1, mconv2;
  std::vector<int> sizes;  // spatial side per ladder level; sizes[0] = input side
  bool mask_zero = false;  // ablation hook: mask replaced by exact 0

  // depth < 0 selects the default clamped ladder depth min(3, log2(side)-1).
  static AttentionModule make(const Builder& b, int c, int side, int depth = -1) {
    AttentionModule m;
    int lg = 0;
    while ((2 << lg) <= side) ++lg;  // lg = floor(log2(side))
    const int auto_depth = std::max(0, std::min(3, lg - 1));
    m.depth = depth < 0 ? auto_depth : depth;

    m.sizes.assign(static_cast<std::size_t>(m.depth) + 1, side);
    for (int i = 1; i <= m.depth; ++i) {
      const int prev = m.sizes[static_cast<std::size_t>(i) - 1];
      if (prev < 2)
        fail("attention: input side " + std::to_string(side) + " too small for ladder depth " +
             std::to_string(m.depth));
      m.sizes[static_cast<std::size_t>(i)] = (prev + 2 - 3) / 2 + 1;
    }
    if (m.depth > 0 && m.sizes.back() < 2)
      fail("attention: input side " + std::to_string(side) + " too small for ladder depth " +
           std::to_string(m.depth));

    m.pre = ResidualUnit::make(b.sub("pre"), c, c, 1);
    m.trunk1 = ResidualUnit::make(b.sub("trunk1"), c, c, 1);
    m.trunk2 = ResidualUnit::make(b.sub("trunk2"), c, c, 1);
    for (int i = 0; i < m.depth; ++i)
      m.down.push_back(ResidualUnit::make(b.sub("mask.down" + std::to_string(i)), c, c, 1));
    const int n_skips = std::min(2, std::max(0, m.depth - 1));
    for (int i = 0; i < n_skips; ++i)
      m.skips.push_back(ResidualUnit::make(b.sub("mask.skip" + std::to_string(i)), c, c, 1));
    m.mconv1 = b.conv("mask.out1", c, c, 1, 1, 0, true);
    m.mconv2 = b.conv("mask.out2", c, c, 1, 1, 0, true);
    m.post = ResidualUnit::make(b.sub("post"), c, c, 1);
    return m;
  }

  Tensor soft_mask(const Tensor& p, bool training) const {
    if (p.dim(2) != sizes[0] || p.dim(3) != sizes[0])
      fail("attention: expected " + std::to_string(sizes[0]) + "x" + std::to_string(sizes[0]) +
           " input, got " + shape_str(p.shape()));
    std::vector<Tensor> levels(static_cast<std::size_t>(depth) + 1);
    levels[0] = p;
    for (int i = 1; i <= depth; ++i)
      levels[static_cast<std::size_t>(i)] =
          down[static_cast<std::size_t>(i) - 1](maxpool2d(levels[static_cast<std::size_t>(i) - 1], 3, 2, 1), training);
    Tensor y = levels[static_cast<std::size_t>(depth)];
    for (int i = depth - 1; i >= 0; --i) {
      y = bilinear_upsample(y, sizes[static_cast<std::size_t>(i)], sizes[static_cast<std::size_t>(i)]);
      if (i >= 1 && i <= static_cast<int>(skips.size()))
        y = add(y, skips[static_cast<std::size_t>(i) - 1](levels[static_cast<std::size_t>(i)], training));
    }
    return sigmoid(mconv2(relu(mconv1(y))));
  }

  Tensor operator()(const Tensor& x, bool training) const {
    Tensor p = pre(x, training);
    Tensor t = trunk2(trunk1(p, training), training);
    Tensor h = mask_zero ? t : fuse(soft_mask(p, training), t);
    return post(h, training);
  }
};

}  // namespace grn
