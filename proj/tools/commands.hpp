#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace kprobe::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitNumeric = 1;
inline constexpr int kExitUsage = 2;

struct SplitArgs {
  std::string treebank;
  std::size_t cap = 12000;
  std::uint64_t seed = 0;
  bool sequential = false;
  std::string out;
};

struct TrainArgs {
  std::string config;
  std::string treebank;
  std::string store;
  std::string split;
  std::string out;
  std::optional<std::string> optimizer;
  std::optional<std::uint64_t> seed;
};

struct EvalArgs {
  std::string probe;
  std::string treebank;
  std::string store;
  std::string split;
  std::string section = "test";
  std::string out;
  bool include_punct = false;
  std::string dspr_mode = "banded";
  bool oracle = false;
  bool dump_trees = false;
};

struct CompareArgs {
  std::string a;
  std::string b;
  int samples = 10000;
  std::uint64_t seed = 0;
  std::string metric = "uuas";
  std::string out;
};

struct GradcheckArgs {
  std::string kernel = "all";
  std::string regularizer = "all";
  int trials = 50;
  std::uint64_t seed = 0;
  bool perturb = false;
};

struct SynthArgs {
  int sentences = 500;
  int min_len = 5;
  int max_len = 30;
  int d1 = 64;
  double noise = 0.0;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_split(const SplitArgs& args);
int cmd_train(const TrainArgs& args);
int cmd_eval(const EvalArgs& args);
int cmd_compare(const CompareArgs& args);
int cmd_gradcheck(const GradcheckArgs& args);
int cmd_synth(const SynthArgs& args);

}  // namespace kprobe::cli
