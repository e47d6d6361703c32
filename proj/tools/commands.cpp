#include "commands.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "kprobe/decode_eval.hpp"
#include "kprobe/embeddings.hpp"
#include "kprobe/gradcheck.hpp"
#include "kprobe/probe.hpp"
#include "kprobe/random.hpp"
#include "kprobe/treebank.hpp"

namespace fs = std::filesystem;

namespace kprobe::cli {

namespace {

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw std::runtime_error(std::string(what) + " not found: " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory '" + dir + "': " + ec.message());
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

const std::vector<std::string>& section_ids(const SplitSpec& split, const std::string& section) {
  if (section == "train") return split.train;
  if (section == "dev") return split.dev;
  if (section == "test") return split.test;
  throw std::invalid_argument("unknown section '" + section + "'");
}

/// Aligned sentences restricted to `ids`, in treebank order.
std::vector<AlignedSentence> select(const std::vector<AlignedSentence>& aligned, const std::vector<std::string>& ids) {
  const std::unordered_set<std::string> wanted(ids.begin(), ids.end());
  std::vector<AlignedSentence> out;
  for (const auto& a : aligned)
    if (wanted.count(a.sentence->id)) out.push_back(a);
  return out;
}

std::vector<ProbeExample> to_examples(const std::vector<AlignedSentence>& aligned) {
  std::vector<ProbeExample> out;
  out.reserve(aligned.size());
  for (const auto& a : aligned) out.emplace_back(a.embedding->matrix, tree_distances(*a.sentence));
  return out;
}

fs::path sidecar_for(const std::string& probe_path) {
  fs::path p(probe_path);
  p.replace_extension(".json");
  return p;
}

}  // namespace

int cmd_split(const SplitArgs& args) {
  require_file(args.treebank, "treebank");
  const auto sentences = read_conllu_file(args.treebank);
  const auto split = make_splits(sentences, args.cap, args.seed, !args.sequential);
  write_text(args.out, split_to_json(split));
  std::cout << "train " << split.train.size() << "  test " << split.test.size() << "  dev " << split.dev.size()
            << "\n";
  return kExitOk;
}

int cmd_train(const TrainArgs& args) {
  require_file(args.config, "config");
  require_file(args.treebank, "treebank");
  require_file(args.store, "embedding store");
  require_file(args.split, "split");
  const std::string started = utc_now();

  ProbeConfig config = parse_probe_config(read_text(args.config));
  if (args.optimizer) config.optimizer = optimizer_from_string(*args.optimizer);
  if (args.seed) config.seed = *args.seed;

  const auto sentences = read_conllu_file(args.treebank);
  const auto store = load_store(args.store);
  const auto split = split_from_json(read_text(args.split));
  const auto aligned = align(store, sentences);
  const auto train_set = to_examples(select(aligned, split.train));
  const auto dev_set = to_examples(select(aligned, split.dev));
  if (train_set.empty()) throw std::runtime_error("no training sentences found in both treebank and store");
  if (dev_set.empty()) throw std::runtime_error("no dev sentences found in both treebank and store");
  if (train_set.size() < split.train.size() || dev_set.size() < split.dev.size()) {
    std::cerr << "warning: " << (split.train.size() - train_set.size()) << " train and "
              << (split.dev.size() - dev_set.size()) << " dev sentences missing from the store\n";
  }

  const auto result = train(config, train_set, dev_set);

  ensure_dir(args.out);
  const fs::path out(args.out);
  save_probe(result.B, (out / "probe.kprb").string());
  write_text(out / "probe.json", probe_config_to_json(config));
  write_text(out / "train_report.json", train_report_to_json(result.report));

  nlohmann::ordered_json manifest;
  manifest["command"] = "train";
  manifest["config"] = nlohmann::ordered_json::parse(probe_config_to_json(config));
  manifest["treebank"] = args.treebank;
  manifest["store"] = args.store;
  manifest["split"] = args.split;
  manifest["split_seed"] = split.seed;
  manifest["out"] = args.out;
  manifest["started_at"] = started;
  manifest["finished_at"] = utc_now();
  write_text(out / "manifest.json", manifest.dump(2) + "\n");

  const auto& r = result.report;
  std::cout << std::setprecision(6) << "epochs " << r.epochs_run << "  best epoch " << r.best_epoch
            << "  dev loss " << r.dev_loss_per_epoch[r.best_epoch] << "  clamps " << r.clamp_counter << "\n";
  return kExitOk;
}

int cmd_eval(const EvalArgs& args) {
  require_file(args.treebank, "treebank");
  if (!args.oracle) {
    if (args.probe.empty()) throw std::invalid_argument("--probe is required unless --oracle is given");
    if (args.store.empty()) throw std::invalid_argument("--store is required unless --oracle is given");
    require_file(args.probe, "probe");
    require_file(args.store, "embedding store");
    require_file(sidecar_for(args.probe).string(), "probe config sidecar");
  }
  if (!args.split.empty()) require_file(args.split, "split");
  const std::string started = utc_now();

  const auto sentences = read_conllu_file(args.treebank);
  std::vector<const Sentence*> section;
  if (args.split.empty()) {
    for (const auto& s : sentences) section.push_back(&s);
  } else {
    const auto split = split_from_json(read_text(args.split));
    const auto& ids = section_ids(split, args.section);
    const std::unordered_set<std::string> wanted(ids.begin(), ids.end());
    for (const auto& s : sentences)
      if (wanted.count(s.id)) section.push_back(&s);
  }

  std::vector<const Sentence*> scored;
  std::vector<PredictedDistances> pred;
  ClampCounter clamps;
  if (args.oracle) {
    for (const auto* s : section) {
      scored.push_back(s);
      pred.push_back(tree_distances(*s).cast<double>());
    }
  } else {
    const auto B = load_probe(args.probe);
    const auto config = parse_probe_config(read_text(sidecar_for(args.probe).string()));
    const KernelSpec spec = config.kernel.resolved(static_cast<int>(B.rows()));
    const auto store = load_store(args.store);
    std::vector<Sentence> subset;
    subset.reserve(section.size());
    for (const auto* s : section) subset.push_back(*s);
    const auto aligned = align(store, subset);
    std::unordered_map<std::string, const Sentence*> by_id;
    for (const auto* s : section) by_id.emplace(s->id, s);
    for (const auto& a : aligned) {
      scored.push_back(by_id.at(a.sentence->id));
      pred.push_back(predict_distances(spec, B, a.embedding->matrix.cast<double>(), &clamps));
    }
  }

  EvalOptions options;
  options.include_punct = args.include_punct;
  options.dspr_mode = dspr_mode_from_string(args.dspr_mode);
  const auto report = evaluate(scored, pred, options);

  ensure_dir(args.out);
  const fs::path out(args.out);
  write_text(out / "eval_report.json", eval_report_to_json(report));
  const std::string table = eval_report_to_table(report);
  write_text(out / "eval_report.txt", table);
  if (args.dump_trees) {
    std::ostringstream trees;
    for (std::size_t k = 0; k < scored.size(); ++k) {
      trees << "# sent_id = " << scored[k]->id << "\n";
      for (const auto& e : prim_mst(pred[k])) trees << e.lo << "\t" << e.hi << "\n";
      trees << "\n";
    }
    write_text(out / "predicted_trees.txt", trees.str());
  }

  nlohmann::ordered_json manifest;
  manifest["command"] = "eval";
  manifest["probe"] = args.oracle ? "oracle" : args.probe;
  manifest["treebank"] = args.treebank;
  manifest["store"] = args.store;
  manifest["split"] = args.split;
  manifest["section"] = args.section;
  manifest["include_punct"] = args.include_punct;
  manifest["dspr_mode"] = args.dspr_mode;
  manifest["out"] = args.out;
  manifest["started_at"] = started;
  manifest["finished_at"] = utc_now();
  write_text(out / "manifest.json", manifest.dump(2) + "\n");

  std::cout << table;
  if (clamps.total() > 0) std::cout << "radicand clamps: " << clamps.total() << "\n";
  return kExitOk;
}

int cmd_compare(const CompareArgs& args) {
  require_file(args.a, "report");
  require_file(args.b, "report");
  const auto a = eval_report_from_json(read_text(args.a));
  const auto b = eval_report_from_json(read_text(args.b));
  const auto [sa, sb] = paired_scores(a, b, args.metric);
  const double p = paired_permutation_test(sa, sb, args.samples, args.seed);
  double mean_diff = 0.0;
  for (std::size_t k = 0; k < sa.size(); ++k) mean_diff += sa[k] - sb[k];
  mean_diff /= static_cast<double>(sa.size());

  std::cout << std::setprecision(6) << "paired sentences " << sa.size() << "\n"
            << "mean difference  " << mean_diff << "\n"
            << "p-value          " << p << "\n";
  if (!args.out.empty()) {
    nlohmann::ordered_json j;
    j["metric"] = args.metric;
    j["paired_sentences"] = sa.size();
    j["mean_difference"] = mean_diff;
    j["samples"] = args.samples;
    j["seed"] = args.seed;
    j["p_value"] = p;
    write_text(args.out, j.dump(2) + "\n");
  }
  return kExitOk;
}

int cmd_gradcheck(const GradcheckArgs& args) {
  std::vector<KernelKind> kinds;
  if (args.kernel == "all") {
    kinds = {KernelKind::linear, KernelKind::polynomial, KernelKind::sigmoid, KernelKind::rbf};
  } else {
    kinds = {kernel_kind_from_string(args.kernel)};
  }
  std::vector<Regularizer> regs;
  if (args.regularizer == "all") {
    regs = {Regularizer::none, Regularizer::frobenius, Regularizer::trace};
  } else {
    regs = {regularizer_from_string(args.regularizer)};
  }

  bool all_passed = true;
  std::cout << std::left << std::setw(12) << "kernel" << std::setw(11) << "regularizer" << std::right
            << std::setw(7) << "trials" << std::setw(8) << "redrawn" << std::setw(14) << "max rel err"
            << std::setw(8) << "clamps" << "  result\n";
  for (const auto kind : kinds) {
    for (const auto reg : regs) {
      GradCheckOptions o;
      o.kind = kind;
      o.regularizer = reg;
      o.trials = args.trials;
      o.seed = args.seed;
      o.perturb = args.perturb;
      const auto r = run_gradcheck(o);
      all_passed = all_passed && r.passed;
      std::cout << std::left << std::setw(12) << to_string(kind) << std::setw(11) << to_string(reg) << std::right
                << std::setw(7) << r.trials << std::setw(8) << r.redrawn << std::setw(14) << std::scientific
                << std::setprecision(3) << r.max_rel_error << std::defaultfloat << std::setw(8) << r.clamp_events
                << "  " << (r.passed ? "PASS" : "FAIL") << "\n";
    }
  }
  return all_passed ? kExitOk : kExitNumeric;
}

int cmd_synth(const SynthArgs& args) {
  if (args.sentences < 1) throw std::invalid_argument("--sentences must be >= 1");
  if (args.min_len < 1 || args.max_len < args.min_len) throw std::invalid_argument("need 1 <= --min-len <= --max-len");
  if (args.d1 < args.max_len - 1) {
    throw std::invalid_argument("--d1 " + std::to_string(args.d1) + " is smaller than --max-len - 1 = " +
                                std::to_string(args.max_len - 1));
  }
  Rng rng(args.seed);
  std::vector<Sentence> sentences;
  sentences.reserve(args.sentences);
  const auto span = static_cast<std::uint64_t>(args.max_len - args.min_len + 1);
  for (int k = 0; k < args.sentences; ++k) {
    const int n = args.min_len + static_cast<int>(rng.index(span));
    sentences.push_back(random_tree(rng, n, "synth-" + std::to_string(k + 1)));
  }

  const SyntheticEmbedder embedder(args.d1, args.noise, args.seed);
  EmbeddingStore store;
  store.d1 = args.d1;
  store.model_tag = "synthetic-tree";
  for (const auto& s : sentences) store.records.push_back(embedder.embed(s));

  ensure_dir(args.out);
  const fs::path out(args.out);
  write_text(out / "synth.conllu", serialize_conllu(sentences));
  save_store(store, (out / "synth.kpeb").string());
  std::cout << "wrote " << sentences.size() << " sentences to " << (out / "synth.conllu").string() << " and "
            << (out / "synth.kpeb").string() << "\n";
  return kExitOk;
}

}  // namespace kprobe::cli
