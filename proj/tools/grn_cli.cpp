// Command-line front end: dataset preparation, synthetic corpus generation,
// training, evaluation, and the gradient-check suite.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric abort.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "grn/checkpoint.hpp"
#include "grn/checks.hpp"
#include "grn/dataset.hpp"
#include "grn/train.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

// loads a prepared corpus from disk and brings every image to s x s
grn::DatasetManifest load_prepared(const std::string& root, int s) {
  grn::DatasetManifest m = grn::scan_dataset(root);
  grn::load_images(m);
  grn::resize_images(m, s);
  return m;
}

void print_metrics_header_and_row(const grn::EvalMetrics& ev) {
  std::printf("test_loss,top1,top5\n");
  std::printf("%.9g,%.9g,%.9g\n", ev.loss, ev.top1, ev.top5);
}

int cmd_prep(const std::string& in_root, const std::string& out_root, int size,
             std::uint64_t seed, double tau) {
  grn::DatasetManifest raw = grn::scan_dataset(in_root);
  grn::load_images(raw);
  std::vector<std::string> skipped;
  grn::DatasetManifest out = grn::prep_manifest(raw, size, seed, tau, &skipped);
  if (out.entries.empty()) grn::fail_data("prep: no usable images under " + in_root);
  std::filesystem::create_directories(out_root);
  grn::save_corpus(out, out_root);
  const std::vector<std::string> cfg = {
      "command=prep",  "in=" + in_root,
      "out=" + out_root, "size=" + std::to_string(size),
      "seed=" + std::to_string(seed), "tau=" + std::to_string(tau)};
  grn::write_manifest(out, out_root + "/manifest.csv", cfg);
  std::printf("prep: %zu images written to %s (%zu skipped)\n", out.entries.size(),
              out_root.c_str(), skipped.size());
  for (const std::string& p : skipped) std::fprintf(stderr, "prep: skipped blank image %s\n", p.c_str());
  return kExitOk;
}

int cmd_synth(int writers, int pages, int words, int size, std::uint64_t seed,
              const std::string& out_root) {
  grn::SyntheticCorpusSpec spec;
  spec.num_writers = writers;
  spec.pages_per_writer = pages;
  spec.words_per_writer = words;
  spec.image_size = size;
  spec.seed = seed;
  grn::DatasetManifest m = grn::generate_synthetic(spec);
  std::filesystem::create_directories(out_root);
  grn::save_corpus(m, out_root);
  const std::vector<std::string> cfg = {
      "command=synth", "writers=" + std::to_string(writers),
      "pages=" + std::to_string(pages), "words=" + std::to_string(words),
      "size=" + std::to_string(size), "seed=" + std::to_string(seed)};
  grn::write_manifest(m, out_root + "/manifest.csv", cfg);
  std::printf("synth: %d writers, %zu images written to %s\n", writers, m.entries.size(),
              out_root.c_str());
  return kExitOk;
}

int cmd_train(grn::RunConfig rc, const std::string& out_dir, const std::string& resume) {
  grn::DatasetManifest data = load_prepared(rc.data_root, rc.input_size);
  rc.num_classes = data.classes();
  const grn::SplitView split = grn::make_split(data);
  const grn::PairSampler train_sampler(data, split.train, rc.seed);
  const grn::PairSampler test_sampler(data, split.test, rc.seed);

  grn::Model model(rc.model_config(), rc.seed);
  grn::Adam opt;
  int start_epoch = 0;
  if (!resume.empty()) {
    const grn::Checkpoint ck = grn::load_checkpoint(resume);
    const grn::RunConfig prev = grn::RunConfig::from_text(ck.config);
    if (prev.num_classes != rc.num_classes)
      grn::fail_data("resume: checkpoint has " + std::to_string(prev.num_classes) +
                     " classes, dataset has " + std::to_string(rc.num_classes));
    if (prev.variant != rc.variant)
      grn::fail_data("resume: checkpoint variant '" + prev.variant + "' does not match '" +
                     rc.variant + "'");
    grn::apply_checkpoint(ck, model.params(), &opt);
    start_epoch = prev.epochs_done;
    std::printf("resumed from %s at epoch %d\n", resume.c_str(), start_epoch);
  }
  if (start_epoch >= rc.epochs)
    grn::fail_data("resume: checkpoint already has " + std::to_string(start_epoch) +
                   " epochs, nothing to do for --epochs " + std::to_string(rc.epochs));

  std::filesystem::create_directories(out_dir);
  grn::MetricsWriter metrics(out_dir + "/metrics.csv", rc);
  const auto t0 = std::chrono::steady_clock::now();
  for (int epoch = start_epoch; epoch < rc.epochs; ++epoch) {
    const double train_loss = grn::train_epoch(model, rc, data, train_sampler, opt, epoch);
    const grn::EvalMetrics ev = grn::evaluate(model, rc, data, test_sampler);
    const double lr = grn::lr_at_epoch(rc.base_lr, rc.lr_half_period, epoch);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    metrics.row(epoch, train_loss, ev, lr, secs);
    std::printf("epoch %d train_loss %.6f test_loss %.6f top1 %.4f top5 %.4f lr %g\n", epoch,
                train_loss, ev.loss, ev.top1, ev.top5, lr);
    std::fflush(stdout);
  }
  rc.epochs_done = rc.epochs;
  grn::save_checkpoint(out_dir + "/checkpoint.bin", model.params(), opt, rc.to_text());
  std::printf("checkpoint written to %s/checkpoint.bin\n", out_dir.c_str());
  return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_root, int batch) {
  const grn::Checkpoint ck = grn::load_checkpoint(ckpt_path);
  grn::RunConfig rc = grn::RunConfig::from_text(ck.config);
  if (batch > 0) rc.batch = batch;
  grn::DatasetManifest data = load_prepared(data_root, rc.input_size);
  if (data.classes() != rc.num_classes)
    grn::fail_data("eval: checkpoint has " + std::to_string(rc.num_classes) +
                   " classes, dataset has " + std::to_string(data.classes()));
  grn::Model model(rc.model_config(), rc.seed);
  grn::apply_checkpoint(ck, model.params(), nullptr);
  const grn::SplitView split = grn::make_split(data);
  const grn::PairSampler test_sampler(data, split.test, rc.seed);
  const grn::EvalMetrics ev = grn::evaluate(model, rc, data, test_sampler);
  print_metrics_header_and_row(ev);
  return kExitOk;
}

int cmd_gradcheck(const std::string& ops, bool inject_fault, std::uint64_t seed) {
  const std::vector<grn::CheckResult> rs = grn::run_gradient_checks(ops, inject_fault, seed);
  if (rs.empty()) grn::fail_data("gradcheck: no case matches filter '" + ops + "'");
  bool all_ok = true;
  double total = 0.0;
  for (const grn::CheckResult& r : rs) {
    std::printf("%-28s %-4s max_rel %.3e (%.2fs)\n", r.name.c_str(), r.pass ? "ok" : "FAIL",
                r.max_rel, r.seconds);
    total += r.seconds;
    all_ok = all_ok && r.pass;
  }
  std::printf("gradcheck: %zu cases, %.1fs, %s (tolerance %.1e)\n", rs.size(), total,
              all_ok ? "all ok" : "FAILURES", grn::kGradCheckTol);
  if (!all_ok) grn::fail_numeric("gradcheck: at least one case exceeded tolerance");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-branch writer-identification network: data pipeline, training, evaluation"};
  app.require_subcommand(1);

  // prep
  std::string prep_in, prep_out;
  int prep_size = 256;
  std::uint64_t prep_seed = 0;
  double prep_tau = 0.05;
  CLI::App* prep = app.add_subcommand("prep", "preprocess a raw corpus into square tiles and words");
  prep->add_option("--in", prep_in, "raw dataset root (writer/pages, writer/words)")->required();
  prep->add_option("--out", prep_out, "output root for the prepared corpus")->required();
  prep->add_option("--size", prep_size, "output side length in pixels")->check(CLI::PositiveNumber);
  prep->add_option("--seed", prep_seed, "seed for tile sampling");
  prep->add_option("--tau", prep_tau, "ink threshold in [0,1)")->check(CLI::Range(0.0, 1.0));

  // synth
  int sy_writers = 8, sy_pages = 4, sy_words = 20, sy_size = 256;
  std::uint64_t sy_seed = 0;
  std::string sy_out;
  CLI::App* synth = app.add_subcommand("synth", "generate a deterministic synthetic corpus");
  synth->add_option("--writers", sy_writers, "number of writers (1..36)")->check(CLI::Range(1, 36));
  synth->add_option("--pages", sy_pages, "pages per writer")->check(CLI::PositiveNumber);
  synth->add_option("--words", sy_words, "words per writer")->check(CLI::PositiveNumber);
  synth->add_option("--size", sy_size, "page canvas side in pixels")->check(CLI::PositiveNumber);
  synth->add_option("--seed", sy_seed, "corpus seed");
  synth->add_option("--out", sy_out, "output root")->required();

  // train
  grn::RunConfig rc;
  std::string tr_out = ".", tr_resume;
  CLI::App* train = app.add_subcommand("train", "train a model on a prepared corpus");
  train->add_option("--data", rc.data_root, "prepared dataset root")->required();
  train->add_option("--variant", rc.variant, "model variant")
      ->check(CLI::IsMember({"grn", "net1", "net2", "noattention"}));
  CLI::Option* kopt = train->add_option("--k", rc.k, "global/local loss blend for net1")
                          ->check(CLI::Range(0.0, 1.0));
  train->add_option("--input-size", rc.input_size, "network input side")->check(CLI::PositiveNumber);
  train->add_option("--epochs", rc.epochs, "total epochs to reach")->check(CLI::PositiveNumber);
  train->add_option("--batch", rc.batch, "batch size")->check(CLI::PositiveNumber);
  train->add_option("--lr", rc.base_lr, "base learning rate")->check(CLI::PositiveNumber);
  train->add_option("--lr-half-period", rc.lr_half_period, "epochs between halvings")
      ->check(CLI::PositiveNumber);
  train->add_option("--dropout", rc.dropout, "head dropout rate")->check(CLI::Range(0.0, 1.0));
  train->add_option("--seed", rc.seed, "run seed");
  train->add_option("--out", tr_out, "output directory for metrics.csv and checkpoint.bin");
  train->add_option("--resume", tr_resume, "checkpoint to continue from");

  // eval
  std::string ev_ckpt, ev_data;
  int ev_batch = 0;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a prepared corpus");
  eval->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  eval->add_option("--data", ev_data, "prepared dataset root")->required();
  eval->add_option("--batch", ev_batch, "batch size override")->check(CLI::PositiveNumber);

  // gradcheck
  std::string gc_ops;
  std::uint64_t gc_seed = 0;
  bool gc_fault = false;
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gradcheck->add_option("--ops", gc_ops, "only run cases whose name contains this substring");
  gradcheck->add_option("--seed", gc_seed, "fill-point seed (0 = reference)");
  gradcheck->add_flag("--inject-fault", gc_fault,
                      "append a known-broken backward rule (must be caught; test fixture)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the error message
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (prep->parsed()) return cmd_prep(prep_in, prep_out, prep_size, prep_seed, prep_tau);
    if (synth->parsed()) return cmd_synth(sy_writers, sy_pages, sy_words, sy_size, sy_seed, sy_out);
    if (train->parsed()) {
      if (rc.variant != "net1" && kopt->count() > 0)
        std::fprintf(stderr, "warning: --k only affects net1; ignored for %s\n",
                     rc.variant.c_str());
      return cmd_train(rc, tr_out, tr_resume);
    }
    if (eval->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_batch);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_ops, gc_fault, gc_seed);
  } catch (const grn::NumericError& e) {
    std::fprintf(stderr, "numeric abort: %s\n", e.what());
    return kExitNumeric;
  } catch (const grn::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return kExitUsage;
}
