#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "kprobe/kernels.hpp"
#include "kprobe/treebank.hpp"

namespace kprobe {

/// Symmetric, zero-diagonal, nonnegative n x n matrix of probe distances.
using PredictedDistances = Eigen::MatrixXd;

/// Undirected edge between 1-based token indices, lo < hi.
struct Edge {
  int lo = 0;
  int hi = 0;

  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

Edge make_edge(int a, int b);

PredictedDistances predict_distances(const KernelSpec& spec, const ProjectionMatrix& B, const Eigen::MatrixXd& H,
                                     ClampCounter* counter = nullptr,
                                     RadicandPolicy policy = RadicandPolicy::clamp);

/// Minimum spanning tree by Prim's algorithm on the dense matrix. Among
/// equal-weight candidates the lexicographically smallest (lo, hi) wins.
/// Returns no edges for n < 2.
std::vector<Edge> prim_mst(const PredictedDistances& d);

struct AttachmentCount {
  int correct = 0;
  int total = 0;
};

/// Gold edges are (i, head_i) for head_i >= 1; with include_punct false,
/// edges touching a PUNCT token are dropped from the gold set.
std::vector<Edge> gold_edges(const Sentence& gold, bool include_punct = false);

AttachmentCount uuas(const std::vector<Edge>& predicted, const Sentence& gold, bool include_punct = false);

/// Spearman correlation with average ranks for ties. Returns 0 if either
/// side is constant.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

/// Spearman over the upper-triangle pairs of one sentence.
double sentence_spearman(const PredictedDistances& pred, const DistanceMatrix& gold);

enum class DsprMode {
  banded,  // mean per sentence length in [5, 50], then mean over lengths
  plain,   // mean over all sentences with n >= 3
};

DsprMode dspr_mode_from_string(std::string_view name);

struct DsprResult {
  double value = 0.0;
  std::map<int, double> per_length;  // length -> mean rho (banded mode)
  std::vector<double> per_sentence;  // NaN where the sentence was skipped
};

/// Throws std::runtime_error("empty evaluation band") when nothing qualifies.
DsprResult dspr(const std::vector<PredictedDistances>& pred, const std::vector<DistanceMatrix>& gold,
                DsprMode mode = DsprMode::banded);

/// Two-sided paired sign-flip permutation test on per-item scores.
/// p = (1 + #{resamples with |mean diff| >= |observed|}) / (samples + 1).
double paired_permutation_test(const std::vector<double>& scores_a, const std::vector<double>& scores_b,
                               int samples, std::uint64_t seed);

struct SentenceScore {
  std::string id;
  int length = 0;
  int correct = 0;
  int total = 0;
  double spearman = 0.0;  // NaN when not computed
};

struct EvalReport {
  double uuas = 0.0;
  double dspr = 0.0;
  int sentence_count = 0;
  std::map<int, double> per_length;
  std::vector<SentenceScore> per_sentence;
};

struct EvalOptions {
  bool include_punct = false;
  DsprMode dspr_mode = DsprMode::banded;
};

/// Decodes and scores a set of sentences. Sentences of length < 2 are left
/// out. Throws "empty evaluation band" when no sentence can be scored.
EvalReport evaluate(const std::vector<const Sentence*>& sentences, const std::vector<PredictedDistances>& pred,
                    const EvalOptions& options = {});

std::string eval_report_to_json(const EvalReport& report);
EvalReport eval_report_from_json(std::string_view text);
std::string eval_report_to_table(const EvalReport& report);

/// Per-sentence values of `metric` ("uuas" or "spearman") for sentences
/// present in both reports, paired by id in the order of `a`.
std::pair<std::vector<double>, std::vector<double>> paired_scores(const EvalReport& a, const EvalReport& b,
                                                                  std::string_view metric);

}  // namespace kprobe
