#pragma once

// Optimization harness: Adam, the halving learning-rate schedule, the
// two-branch loss paths, epoch loops, and deterministic evaluation.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "grn/dataset.hpp"
#include "grn/model.hpp"

namespace grn {

namespace detail {
constexpr std::uint64_t kDropTag = 0x64726f70ULL;
}

// base_lr halved once per full period elapsed
inline double lr_at_epoch(double base_lr, int period, int epoch) {
  if (period < 1) fail("lr_at_epoch: period must be >= 1");
  if (epoch < 0) fail("lr_at_epoch: epoch must be >= 0");
  return base_lr * std::ldexp(1.0, -(epoch / period));
}

// k-weighted convex combination of the two branch losses; multiplication by
// an exact 0 or 1 silences the corresponding branch's gradients exactly
inline Tensor net1_total_loss(const Tensor& loss_g, const Tensor& loss_l, double k) {
  if (!(k >= 0.0 && k <= 1.0)) fail("net1_total_loss: k must be in [0,1]");
  return add(scale(loss_g, k), scale(loss_l, 1.0 - k));
}

class Adam {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long t = 0;
  std::unordered_map<std::string, std::vector<double>> m, v;

  void step(ParamStore& ps, double lr) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (const ParamEntry& e : ps.entries()) {
      if (!e.trainable) continue;
      if (!e.t.has_grad()) fail("adam: missing gradient for parameter '" + e.name + "'");
      const std::size_t n = static_cast<std::size_t>(e.t.numel());
      std::vector<double>& em = m[e.name];
      std::vector<double>& ev = v[e.name];
      if (em.size() != n) em.assign(n, 0.0);
      if (ev.size() != n) ev.assign(n, 0.0);
      const double* g = e.t.grad_data();
      double* p = e.t.data();
      for (std::size_t i = 0; i < n; ++i) {
        em[i] = beta1 * em[i] + (1.0 - beta1) * g[i];
        ev[i] = beta2 * ev[i] + (1.0 - beta2) * g[i] * g[i];
        p[i] -= lr * (em[i] / bc1) / (std::sqrt(ev[i] / bc2) + eps);
      }
    }
  }
};

// one run's full configuration; serialized into checkpoints, metrics files,
// and prep manifests so outputs are self-describing
struct RunConfig {
  std::string variant = "grn";
  double k = 0.5;
  int num_classes = 0;
  int input_size = 64;
  int epochs = 90;
  int batch = 16;
  double base_lr = 0.001;
  int lr_half_period = 30;
  double dropout = 0.5;
  std::uint64_t seed = 0;
  int epochs_done = 0;
  std::string data_root;

  std::string to_text() const {
    std::ostringstream s;
    s.precision(17);
    s << "variant=" << variant << "\n"
      << "k=" << k << "\n"
      << "num_classes=" << num_classes << "\n"
      << "input_size=" << input_size << "\n"
      << "epochs=" << epochs << "\n"
      << "batch=" << batch << "\n"
      << "base_lr=" << base_lr << "\n"
      << "lr_half_period=" << lr_half_period << "\n"
      << "dropout=" << dropout << "\n"
      << "seed=" << seed << "\n"
      << "epochs_done=" << epochs_done << "\n"
      << "data_root=" << data_root << "\n";
    return s.str();
  }

  static RunConfig from_text(const std::string& text) {
    RunConfig rc;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos) fail_data("run config: malformed line: " + line);
      const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
      try {
        if (key == "variant")
          rc.variant = val;
        else if (key == "k")
          rc.k = std::stod(val);
        else if (key == "num_classes")
          rc.num_classes = std::stoi(val);
        else if (key == "input_size")
          rc.input_size = std::stoi(val);
        else if (key == "epochs")
          rc.epochs = std::stoi(val);
        else if (key == "batch")
          rc.batch = std::stoi(val);
        else if (key == "base_lr")
          rc.base_lr = std::stod(val);
        else if (key == "lr_half_period")
          rc.lr_half_period = std::stoi(val);
        else if (key == "dropout")
          rc.dropout = std::stod(val);
        else if (key == "seed")
          rc.seed = std::stoull(val);
        else if (key == "epochs_done")
          rc.epochs_done = std::stoi(val);
        else if (key == "data_root")
          rc.data_root = val;
      } catch (const std::exception&) {
        fail_data("run config: bad value for " + key + ": " + val);
      }
    }
    return rc;
  }

  ModelConfig model_config() const {
    ModelConfig mc;
    mc.variant = variant_from_name(variant);
    mc.num_classes = num_classes;
    mc.input_size = input_size;
    mc.dropout_rate = dropout;
    mc.k = k;
    return mc;
  }

  std::vector<std::string> config_lines() const {
    std::vector<std::string> out;
    std::istringstream in(to_text());
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) out.push_back(line);
    return out;
  }
};

// mean cross-entropy over one epoch of pairs; aborts on a non-finite loss
inline double train_epoch(Model& model, const RunConfig& rc, const DatasetManifest& data,
                          const PairSampler& sampler, Adam& opt, int epoch) {
  const double lr = lr_at_epoch(rc.base_lr, rc.lr_half_period, epoch);
  const std::vector<Pair> pairs = sampler.epoch(epoch);
  if (pairs.empty()) fail_data("train_epoch: empty training split");
  Rng drop_rng(derive_seed(derive_seed(rc.seed, detail::kDropTag), static_cast<std::uint64_t>(epoch)));
  const std::size_t bsz = static_cast<std::size_t>(rc.batch);
  double total = 0.0;
  std::size_t batch_idx = 0;
  for (std::size_t lo = 0; lo < pairs.size(); lo += bsz, ++batch_idx) {
    const std::size_t n = std::min(bsz, pairs.size() - lo);
    Tensor page = to_batch(data, pairs, lo, n, true);
    Tensor word = to_batch(data, pairs, lo, n, false);
    const std::vector<int> labels = batch_labels(pairs, lo, n);
    model.zero_grad();
    Model::Output out = model.forward(page, word, true, &drop_rng);
    Tensor loss = model.config().variant == Variant::Net1
                      ? net1_total_loss(softmax_cross_entropy(out.logits_g, labels),
                                        softmax_cross_entropy(out.logits, labels), rc.k)
                      : softmax_cross_entropy(out.logits, labels);
    const double lv = loss.item();
    if (!std::isfinite(lv))
      fail_numeric("numeric abort: non-finite loss at epoch " + std::to_string(epoch) +
                   ", batch " + std::to_string(batch_idx) + " (lr=" + std::to_string(lr) +
                   ", batch_size=" + std::to_string(n) + ")");
    loss.backward();
    opt.step(model.params(), lr);
    total += lv * static_cast<double>(n);
  }
  return total / static_cast<double>(pairs.size());
}

struct EvalMetrics {
  double loss = 0.0;
  double top1 = 0.0;
  double top5 = 0.0;
  std::size_t samples = 0;
};

// rank of the label's logit with ties broken toward lower class indices
inline int classes_ranked_above(const double* logits, int num_classes, int label) {
  int above = 0;
  for (int j = 0; j < num_classes; ++j) {
    if (logits[j] > logits[label]) ++above;
    if (j < label && logits[j] == logits[label]) ++above;
  }
  return above;
}

// deterministic: fixed pairing stream, eval-mode forward, no gradients
inline EvalMetrics evaluate(Model& model, const RunConfig& rc, const DatasetManifest& data,
                            const PairSampler& sampler) {
  const std::vector<Pair> pairs = sampler.fixed();
  if (pairs.empty()) fail_data("evaluate: empty evaluation split");
  NoGradGuard ng;
  const bool net1 = model.config().variant == Variant::Net1;
  const int C = model.config().num_classes;
  const std::size_t bsz = static_cast<std::size_t>(rc.batch);
  EvalMetrics ev;
  ev.samples = pairs.size();
  for (std::size_t lo = 0; lo < pairs.size(); lo += bsz) {
    const std::size_t n = std::min(bsz, pairs.size() - lo);
    Tensor page = to_batch(data, pairs, lo, n, true);
    Tensor word = to_batch(data, pairs, lo, n, false);
    const std::vector<int> labels = batch_labels(pairs, lo, n);
    Model::Output out = model.forward(page, word, false, nullptr);
    Tensor scores = net1 ? add(scale(out.logits, 1.0 - rc.k), scale(out.logits_g, rc.k))
                         : out.logits;
    const double batch_loss =
        net1 ? net1_total_loss(softmax_cross_entropy(out.logits_g, labels),
                               softmax_cross_entropy(out.logits, labels), rc.k)
                   .item()
             : softmax_cross_entropy(out.logits, labels).item();
    ev.loss += batch_loss * static_cast<double>(n);
    const double* s = scores.data();
    for (std::size_t i = 0; i < n; ++i) {
      const int above = classes_ranked_above(s + i * static_cast<std::size_t>(C), C, labels[i]);
      if (above < 1) ev.top1 += 1.0;
      if (above < 5) ev.top5 += 1.0;
    }
  }
  const double N = static_cast<double>(ev.samples);
  ev.loss /= N;
  ev.top1 /= N;
  ev.top5 /= N;
  return ev;
}

// CSV with the run config embedded as leading '#' comment lines
class MetricsWriter {
 public:
  MetricsWriter(const std::string& path, const RunConfig& rc) : f_(path, std::ios::binary) {
    if (!f_) fail_data("cannot write metrics file: " + path);
    for (const std::string& line : rc.config_lines()) f_ << "# " << line << "\n";
    f_ << "epoch,train_loss,test_loss,top1,top5,lr,seconds\n";
    f_.flush();
  }

  void row(int epoch, double train_loss, const EvalMetrics& ev, double lr, double seconds) {
    f_.precision(9);
    f_ << epoch << ',' << train_loss << ',' << ev.loss << ',' << ev.top1 << ',' << ev.top5 << ','
       << lr << ',' << seconds << "\n";
    f_.flush();
  }

 private:
  std::ofstream f_;
};

}  // namespace grn
