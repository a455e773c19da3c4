#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "blocks.hpp"

namespace grn {

enum class Variant { GRN, Net1, Net2, NoAttention };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::GRN: return "grn";
    case Variant::Net1: return "net1";
    case Variant::Net2: return "net2";
    case Variant::NoAttention: return "noattention";
  }
  return "?";
}

inline Variant variant_from_name(const std::string& s) {
  if (s == "grn") return Variant::GRN;
  if (s == "net1") return Variant::Net1;
  if (s == "net2") return Variant::Net2;
  if (s == "noattention") return Variant::NoAttention;
  fail("unknown variant '" + s + "' (expected grn|net1|net2|noattention)");
}

struct ModelConfig {
  Variant variant = Variant::GRN;
  int num_classes = 0;
  int input_size = 256;
  double dropout_rate = 0.5;
  double k = 0.5;  // Net1 loss blend; ignored elsewhere
};

// Per-stage output shapes captured during a forward pass, for shape audits.
struct ShapeTrace {
  Shape conv1_global, conv1_local;
  Shape stem_global, stem_local;
  std::vector<Shape> global_stages, local_stages;
  Shape head_in;
};

namespace detail {

constexpr std::array<int, 4> kStageWidths = {64, 128, 256, 512};
constexpr std::array<int, 4> kStageStrides = {1, 2, 2, 2};
constexpr std::array<int, 4> kResnetUnitCounts = {3, 4, 6, 3};

inline int conv_out(int s, int k, int stride, int pad) { return (s + 2 * pad - k) / stride + 1; }

}  // namespace detail

struct BranchStage {
  std::vector<ResidualUnit> units;
  std::optional<AttentionModule> attn;

  Tensor operator()(Tensor x, bool training) const {
    for (const ResidualUnit& u : units) x = u(x, training);
    if (attn) x = (*attn)(x, training);
    return x;
  }
};

struct Branch {
  Conv2dLayer conv1;
  BatchNorm2d bn1;
  std::vector<BranchStage> stages;
};

struct Head {
  LinearLayer fc;
};

// Two-branch writer-identification network. The page-fed branch produces
// global features that reweight the word-fed branch's local features as
// (1 + G) * L at the enabled fusion taps; variants differ only in tap set,
// local-branch layout, and head count.
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), rng_(seed), seed_(seed) {
    if (cfg.num_classes < 1) fail("model: num_classes must be positive");
    if (cfg.input_size < 32) fail("model: input_size must be >= 32, got " + std::to_string(cfg.input_size));
    if (cfg.variant == Variant::Net1 && (cfg.k < 0.0 || cfg.k > 1.0))
      fail("model: net1 k must lie in [0,1], got " + std::to_string(cfg.k));
    if (cfg.dropout_rate < 0.0 || cfg.dropout_rate >= 1.0)
      fail("model: dropout rate must lie in [0,1), got " + std::to_string(cfg.dropout_rate));

    switch (cfg.variant) {
      case Variant::GRN: taps_ = {1, 2, 3, 4}; break;
      case Variant::NoAttention: taps_ = {1, 2, 3, 4}; break;
      case Variant::Net2: taps_ = {4}; break;
      case Variant::Net1: taps_ = {}; break;
    }

    Builder root{store_, rng_, ""};
    global_ = build_branch(root.sub("global"), true);
    const bool local_plain = cfg.variant == Variant::NoAttention;
    local_ = build_branch(root.sub("local"), local_plain);
    if (cfg.variant == Variant::Net1) {
      local_head_.fc = root.sub("local_head").fc("fc", 512, cfg.num_classes);
      global_head_.fc = root.sub("global_head").fc("fc", 512, cfg.num_classes);
    } else {
      head_.fc = root.sub("head").fc("fc", 512, cfg.num_classes);
    }
  }

  struct Output {
    Tensor logits;    // local/fused classifier output
    Tensor logits_g;  // defined only for Net1
  };

  // page feeds the global branch, word feeds the local branch.
  Output forward(const Tensor& page, const Tensor& word, bool training, Rng* dropout_rng,
                 ShapeTrace* trace = nullptr) const {
    check_input("page", page);
    check_input("word", word);
    if (page.dim(0) != word.dim(0))
      fail("model: page batch " + std::to_string(page.dim(0)) + " != word batch " +
           std::to_string(word.dim(0)));
    if (training && cfg_.dropout_rate > 0.0 && dropout_rng == nullptr)
      fail("model: training forward needs a dropout rng");

    Tensor g = global_.conv1(page);
    Tensor l = local_.conv1(word);
    if (trace) {
      trace->conv1_global = g.shape();
      trace->conv1_local = l.shape();
    }
    g = maxpool2d(relu(global_.bn1(g, training)), 3, 2, 1);
    l = maxpool2d(relu(local_.bn1(l, training)), 3, 2, 1);
    if (trace) {
      trace->stem_global = g.shape();
      trace->stem_local = l.shape();
    }

    for (int i = 0; i < 4; ++i) {
      g = global_.stages[static_cast<std::size_t>(i)](g, training);
      l = local_.stages[static_cast<std::size_t>(i)](l, training);
      if (taps_.count(i + 1)) l = fuse(g, l);
      if (trace) {
        trace->global_stages.push_back(g.shape());
        trace->local_stages.push_back(l.shape());
      }
    }

    Output out;
    if (cfg_.variant == Variant::Net1) {
      out.logits = apply_head(local_head_, l, training, dropout_rng, trace);
      out.logits_g = apply_head(global_head_, g, training, dropout_rng, nullptr);
    } else {
      out.logits = apply_head(head_, l, training, dropout_rng, trace);
    }
    return out;
  }

  const ModelConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const std::set<int>& fusion_taps() const { return taps_; }
  void set_fusion_taps(std::set<int> taps) { taps_ = std::move(taps); }

  void zero_grad() { store_.zero_grad(); }

  // Deterministic parameter listing: every tensor with shape and count, then
  // per-branch and grand totals.
  std::string param_census() const {
    std::ostringstream os;
    std::int64_t total = 0;
    std::map<std::string, std::int64_t> groups;
    for (const ParamEntry& e : store_.entries()) {
      const std::int64_t n = e.t.numel();
      os << e.name << ' ' << shape_str(e.t.shape()) << ' ' << n
         << (e.trainable ? "" : " (buffer)") << '\n';
      total += n;
      const std::string group = e.name.substr(0, e.name.find('.'));
      groups[group] += n;
    }
    for (const auto& [group, n] : groups) os << "total." << group << ' ' << n << '\n';
    os << "total " << total << '\n';
    return os.str();
  }

  // Names of trainable parameters under the given branch prefixes.
  std::vector<std::string> param_names_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const ParamEntry& e : store_.entries())
      if (e.trainable && e.name.rfind(prefix, 0) == 0) out.push_back(e.name);
    return out;
  }

 private:
  Branch build_branch(const Builder& b, bool plain_resnet) {
    Branch br;
    br.conv1 = b.conv("conv1", 1, 64, 7, 2, 3, false);
    br.bn1 = b.bn("bn1", 64);
    int side = detail::conv_out(cfg_.input_size, 7, 2, 3);
    side = detail::conv_out(side, 3, 2, 1);  // stem max pool
    int cin = 64;
    for (int s = 0; s < 4; ++s) {
      const int width = detail::kStageWidths[static_cast<std::size_t>(s)];
      const int stride = detail::kStageStrides[static_cast<std::size_t>(s)];
      side = stride == 1 ? side : detail::conv_out(side, 3, stride, 1);
      BranchStage stage;
      Builder sb = b.sub("s" + std::to_string(s + 1));
      if (plain_resnet || s == 3) {
        const int n_units = plain_resnet ? detail::kResnetUnitCounts[static_cast<std::size_t>(s)] : 3;
        for (int u = 0; u < n_units; ++u)
          stage.units.push_back(ResidualUnit::make(sb.sub("u" + std::to_string(u)),
                                                   u == 0 ? cin : width, width, u == 0 ? stride : 1));
      } else {
        stage.units.push_back(ResidualUnit::make(sb.sub("u0"), cin, width, stride));
        stage.attn = AttentionModule::make(sb.sub("attn"), width, side);
      }
      br.stages.push_back(std::move(stage));
      cin = width;
    }
    return br;
  }

  Tensor apply_head(const Head& head, const Tensor& feat, bool training, Rng* dropout_rng,
                    ShapeTrace* trace) const {
    if (feat.dim(2) != feat.dim(3)) fail("model: head expects square features, got " + shape_str(feat.shape()));
    Tensor pooled = avgpool2d(feat, feat.dim(2));
    if (trace) trace->head_in = pooled.shape();
    Tensor flat = reshape(pooled, {pooled.dim(0), pooled.dim(1)});
    Tensor dropped = training && cfg_.dropout_rate > 0.0
                         ? dropout(flat, cfg_.dropout_rate, true, *dropout_rng)
                         : flat;
    return head.fc(dropped);
  }

  void check_input(const char* which, const Tensor& t) const {
    if (t.ndim() != 4 || t.dim(1) != 1)
      fail(std::string("model: ") + which + " must be [N,1,S,S], got " + shape_str(t.shape()));
    if (t.dim(2) != cfg_.input_size || t.dim(3) != cfg_.input_size)
      fail(std::string("model: ") + which + " spatial size " + std::to_string(t.dim(2)) + "x" +
           std::to_string(t.dim(3)) + " != configured input size " +
           std::to_string(cfg_.input_size));
  }

  ModelConfig cfg_;
  Rng rng_;
  std::uint64_t seed_;
  ParamStore store_;
  Branch global_, local_;
  Head head_, local_head_, global_head_;
  std::set<int> taps_;
};

}  // namespace grn
