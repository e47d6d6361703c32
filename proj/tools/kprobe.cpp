#include <exception>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "commands.hpp"
#include "kprobe/kernels.hpp"
#include "kprobe/probe.hpp"

namespace {

using namespace kprobe::cli;

int run_guarded(const std::function<int()>& command) {
  try {
    return command();
  } catch (const kprobe::TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kernelized structural probes: train, decode, evaluate"};
  app.require_subcommand(1);

  SplitArgs split;
  auto* sp = app.add_subcommand("split", "Write a seeded 80/10/10 train/test/dev split of a treebank");
  sp->add_option("--treebank", split.treebank, "CoNLL-U file")->required();
  sp->add_option("--cap", split.cap, "Use at most the first N sentences")->capture_default_str();
  sp->add_option("--seed", split.seed, "Shuffle seed")->capture_default_str();
  sp->add_flag("--sequential", split.sequential, "Keep file order instead of shuffling");
  sp->add_option("--out", split.out, "Output JSON path")->required();

  TrainArgs train;
  auto* tr = app.add_subcommand("train", "Train a probe");
  tr->add_option("--config", train.config, "Probe config (JSON or key=value)")->required();
  tr->add_option("--treebank", train.treebank, "CoNLL-U file")->required();
  tr->add_option("--store", train.store, "KPEB embedding store")->required();
  tr->add_option("--split", train.split, "Split JSON")->required();
  tr->add_option("--out", train.out, "Output directory")->required();
  tr->add_option("--optimizer", train.optimizer, "Override optimizer")->check(CLI::IsMember({"sgd", "adaptive"}));
  tr->add_option("--seed", train.seed, "Override config seed");

  EvalArgs eval;
  auto* ev = app.add_subcommand("eval", "Decode trees and score UUAS / DSpr");
  ev->add_option("--probe", eval.probe, "KPRB weights (config sidecar alongside)");
  ev->add_option("--treebank", eval.treebank, "CoNLL-U file")->required();
  ev->add_option("--store", eval.store, "KPEB embedding store");
  ev->add_option("--split", eval.split, "Split JSON; all sentences if omitted");
  ev->add_option("--section", eval.section)->check(CLI::IsMember({"train", "dev", "test"}))->capture_default_str();
  ev->add_option("--out", eval.out, "Output directory")->required();
  ev->add_flag("--include-punct", eval.include_punct, "Score edges touching PUNCT tokens");
  ev->add_option("--dspr-mode", eval.dspr_mode)->check(CLI::IsMember({"banded", "plain"}))->capture_default_str();
  ev->add_flag("--oracle", eval.oracle, "Use gold tree distances as predictions");
  ev->add_flag("--dump-trees", eval.dump_trees, "Write decoded edge lists");

  CompareArgs cmp;
  auto* cp = app.add_subcommand("compare", "Paired permutation test between two eval reports");
  cp->add_option("--a", cmp.a, "Eval report JSON of system A")->required();
  cp->add_option("--b", cmp.b, "Eval report JSON of system B")->required();
  cp->add_option("--samples", cmp.samples)->capture_default_str();
  cp->add_option("--seed", cmp.seed)->capture_default_str();
  cp->add_option("--metric", cmp.metric)->check(CLI::IsMember({"uuas", "spearman"}))->capture_default_str();
  cp->add_option("--out", cmp.out, "Optional JSON result path");

  GradcheckArgs gc;
  auto* gp = app.add_subcommand("gradcheck", "Check analytic gradients against finite differences");
  gp->add_option("--kernel", gc.kernel)
      ->check(CLI::IsMember({"all", "linear", "polynomial", "sigmoid", "rbf"}))
      ->capture_default_str();
  gp->add_option("--regularizer", gc.regularizer)
      ->check(CLI::IsMember({"all", "none", "frobenius", "trace"}))
      ->capture_default_str();
  gp->add_option("--trials", gc.trials)->capture_default_str();
  gp->add_option("--seed", gc.seed)->capture_default_str();
  gp->add_flag("--perturb", gc.perturb, "Corrupt the analytic gradient (harness self-test)")->group("");

  SynthArgs sy;
  auto* sn = app.add_subcommand("synth", "Generate a synthetic treebank and matching embedding store");
  sn->add_option("--sentences", sy.sentences)->capture_default_str();
  sn->add_option("--min-len", sy.min_len)->capture_default_str();
  sn->add_option("--max-len", sy.max_len)->capture_default_str();
  sn->add_option("--d1", sy.d1)->capture_default_str();
  sn->add_option("--noise", sy.noise)->capture_default_str();
  sn->add_option("--seed", sy.seed)->capture_default_str();
  sn->add_option("--out", sy.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (*sp) return run_guarded([&] { return cmd_split(split); });
  if (*tr) return run_guarded([&] { return cmd_train(train); });
  if (*ev) return run_guarded([&] { return cmd_eval(eval); });
  if (*cp) return run_guarded([&] { return cmd_compare(cmp); });
  if (*gp) return run_guarded([&] { return cmd_gradcheck(gc); });
  if (*sn) return run_guarded([&] { return cmd_synth(sy); });
  return kExitUsage;
}
