#include "kprobe/decode_eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "kprobe/random.hpp"

namespace kprobe {

Edge make_edge(int a, int b) { return a < b ? Edge{a, b} : Edge{b, a}; }

PredictedDistances predict_distances(const KernelSpec& spec, const ProjectionMatrix& B, const Eigen::MatrixXd& H,
                                     ClampCounter* counter, RadicandPolicy policy) {
  spec.validate();
  if (H.cols() != B.cols()) {
    throw std::invalid_argument("embedding width " + std::to_string(H.cols()) +
                                " does not match projection input width " + std::to_string(B.cols()));
  }
  const Eigen::Index n = H.rows();
  const Eigen::MatrixXd U = B * H.transpose();
  PredictedDistances d = PredictedDistances::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = detail::projected_distance(spec, U.col(i), U.col(j), counter, policy).distance;
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

std::vector<Edge> prim_mst(const PredictedDistances& d) {
  const int n = static_cast<int>(d.rows());
  if (n < 2) return {};
  auto weight = [&](int a, int b) { return a < b ? d(a, b) : d(b, a); };

  std::vector<char> in_tree(n, 0);
  std::vector<double> best_w(n);
  std::vector<Edge> best_edge(n);
  in_tree[0] = 1;
  for (int v = 1; v < n; ++v) {
    best_w[v] = weight(0, v);
    best_edge[v] = make_edge(1, v + 1);
  }

  std::vector<Edge> edges;
  edges.reserve(n - 1);
  for (int step = 1; step < n; ++step) {
    int pick = -1;
    for (int v = 0; v < n; ++v) {
      if (in_tree[v]) continue;
      if (pick < 0 || best_w[v] < best_w[pick] ||
          (best_w[v] == best_w[pick] && best_edge[v] < best_edge[pick])) {
        pick = v;
      }
    }
    in_tree[pick] = 1;
    edges.push_back(best_edge[pick]);
    for (int u = 0; u < n; ++u) {
      if (in_tree[u]) continue;
      const double w = weight(pick, u);
      const Edge e = make_edge(pick + 1, u + 1);
      if (w < best_w[u] || (w == best_w[u] && e < best_edge[u])) {
        best_w[u] = w;
        best_edge[u] = e;
      }
    }
  }
  std::sort(edges.begin(), edges.end());
  return edges;
}

std::vector<Edge> gold_edges(const Sentence& gold, bool include_punct) {
  std::vector<Edge> out;
  for (const auto& t : gold.tokens) {
    if (t.head < 1) continue;
    if (!include_punct) {
      const bool punct = t.upos == "PUNCT" || gold.tokens[t.head - 1].upos == "PUNCT";
      if (punct) continue;
    }
    out.push_back(make_edge(t.index, t.head));
  }
  std::sort(out.begin(), out.end());
  return out;
}

AttachmentCount uuas(const std::vector<Edge>& predicted, const Sentence& gold, bool include_punct) {
  const auto gold_set = gold_edges(gold, include_punct);
  std::vector<Edge> pred = predicted;
  for (auto& e : pred) e = make_edge(e.lo, e.hi);
  std::sort(pred.begin(), pred.end());
  pred.erase(std::unique(pred.begin(), pred.end()), pred.end());
  std::vector<Edge> common;
  std::set_intersection(pred.begin(), pred.end(), gold_set.begin(), gold_set.end(), std::back_inserter(common));
  return {static_cast<int>(common.size()), static_cast<int>(gold_set.size())};
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman: length mismatch");
  const std::size_t n = x.size();
  if (n < 2) return 0.0;
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double mean = 0.5 * static_cast<double>(n + 1);  // mean of ranks 1..n, ties included
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double a = rx[k] - mean, b = ry[k] - mean;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

double sentence_spearman(const PredictedDistances& pred, const DistanceMatrix& gold) {
  if (pred.rows() != gold.rows() || pred.cols() != gold.cols()) {
    throw std::invalid_argument("predicted and gold distance matrices differ in shape");
  }
  std::vector<double> p, g;
  const Eigen::Index n = gold.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      p.push_back(pred(i, j));
      g.push_back(static_cast<double>(gold(i, j)));
    }
  }
  return spearman(p, g);
}

DsprMode dspr_mode_from_string(std::string_view name) {
  if (name == "banded") return DsprMode::banded;
  if (name == "plain") return DsprMode::plain;
  throw std::invalid_argument("unknown dspr mode '" + std::string(name) + "'");
}

namespace {

constexpr int kBandLo = 5;
constexpr int kBandHi = 50;

bool dspr_eligible(int n, DsprMode mode) {
  // n = 2 has a single pair, so its gold side is constant.
  return mode == DsprMode::banded ? (n >= kBandLo && n <= kBandHi) : n >= 3;
}

}  // namespace

DsprResult dspr(const std::vector<PredictedDistances>& pred, const std::vector<DistanceMatrix>& gold, DsprMode mode) {
  if (pred.size() != gold.size()) throw std::invalid_argument("dspr: sentence count mismatch");
  DsprResult out;
  out.per_sentence.assign(pred.size(), std::numeric_limits<double>::quiet_NaN());
  std::map<int, std::pair<double, int>> by_length;
  double sum = 0.0;
  int count = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const int n = static_cast<int>(gold[k].rows());
    if (!dspr_eligible(n, mode)) continue;
    const double rho = sentence_spearman(pred[k], gold[k]);
    out.per_sentence[k] = rho;
    auto& slot = by_length[n];
    slot.first += rho;
    slot.second += 1;
    sum += rho;
    ++count;
  }
  if (count == 0) throw std::runtime_error("empty evaluation band");
  for (const auto& [n, acc] : by_length) out.per_length[n] = acc.first / acc.second;
  if (mode == DsprMode::plain) {
    out.value = sum / count;
  } else {
    double macro = 0.0;
    for (const auto& [n, v] : out.per_length) macro += v;
    out.value = macro / static_cast<double>(out.per_length.size());
  }
  return out;
}

double paired_permutation_test(const std::vector<double>& scores_a, const std::vector<double>& scores_b,
                               int samples, std::uint64_t seed) {
  if (scores_a.size() != scores_b.size()) throw std::invalid_argument("permutation test: length mismatch");
  if (scores_a.empty()) throw std::invalid_argument("permutation test: no paired scores");
  if (samples < 1) throw std::invalid_argument("permutation test: samples must be >= 1");
  const std::size_t n = scores_a.size();
  std::vector<double> diff(n);
  double observed = 0.0, scale = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    diff[k] = scores_a[k] - scores_b[k];
    observed += diff[k];
    scale += std::abs(diff[k]);
  }
  // Sums stand in for means (same n); the slack absorbs reassociation error.
  const double threshold = std::abs(observed) - 1e-12 * scale;

  Rng rng(seed);
  long long extreme = 0;
  for (int s = 0; s < samples; ++s) {
    double total = 0.0;
    std::uint64_t bits = 0;
    for (std::size_t k = 0; k < n; ++k) {
      if (k % 64 == 0) bits = rng.bits();
      total += (bits & 1u) ? -diff[k] : diff[k];
      bits >>= 1;
    }
    if (std::abs(total) >= threshold) ++extreme;
  }
  return static_cast<double>(extreme + 1) / static_cast<double>(samples + 1);
}

EvalReport evaluate(const std::vector<const Sentence*>& sentences, const std::vector<PredictedDistances>& pred,
                    const EvalOptions& options) {
  if (sentences.size() != pred.size()) throw std::invalid_argument("evaluate: sentence/prediction count mismatch");
  EvalReport report;
  std::vector<PredictedDistances> kept_pred;
  std::vector<DistanceMatrix> kept_gold;
  std::vector<std::size_t> kept_index;
  long long correct = 0, total = 0;
  for (std::size_t k = 0; k < sentences.size(); ++k) {
    const Sentence& s = *sentences[k];
    const int n = static_cast<int>(s.size());
    if (pred[k].rows() != n || pred[k].cols() != n) {
      throw std::invalid_argument("prediction for sentence '" + s.id + "' has the wrong shape");
    }
    if (n < 2) continue;
    const auto counts = uuas(prim_mst(pred[k]), s, options.include_punct);
    correct += counts.correct;
    total += counts.total;
    report.per_sentence.push_back(
        {s.id, n, counts.correct, counts.total, std::numeric_limits<double>::quiet_NaN()});
    kept_pred.push_back(pred[k]);
    kept_gold.push_back(tree_distances(s));
    kept_index.push_back(report.per_sentence.size() - 1);
  }
  if (report.per_sentence.empty()) throw std::runtime_error("empty evaluation band");
  report.sentence_count = static_cast<int>(report.per_sentence.size());
  report.uuas = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;

  const auto rho = dspr(kept_pred, kept_gold, options.dspr_mode);
  report.dspr = rho.value;
  report.per_length = rho.per_length;
  for (std::size_t k = 0; k < kept_index.size(); ++k) report.per_sentence[kept_index[k]].spearman = rho.per_sentence[k];
  return report;
}

namespace {

nlohmann::ordered_json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

std::string eval_report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["uuas"] = report.uuas;
  j["dspr"] = report.dspr;
  j["sentence_count"] = report.sentence_count;
  nlohmann::ordered_json per_length = nlohmann::ordered_json::object();
  for (const auto& [n, v] : report.per_length) per_length[std::to_string(n)] = v;
  j["per_length"] = per_length;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& s : report.per_sentence) {
    rows.push_back({{"id", s.id},
                    {"length", s.length},
                    {"correct", s.correct},
                    {"total", s.total},
                    {"spearman", number_or_null(s.spearman)}});
  }
  j["per_sentence"] = rows;
  return j.dump(1) + "\n";
}

EvalReport eval_report_from_json(std::string_view text) {
  const auto j = nlohmann::json::parse(text);
  EvalReport r;
  r.uuas = j.at("uuas").get<double>();
  r.dspr = j.at("dspr").get<double>();
  r.sentence_count = j.at("sentence_count").get<int>();
  if (j.contains("per_length")) {
    for (const auto& [k, v] : j.at("per_length").items()) r.per_length[std::stoi(k)] = v.get<double>();
  }
  for (const auto& row : j.at("per_sentence")) {
    SentenceScore s;
    s.id = row.at("id").get<std::string>();
    s.length = row.value("length", 0);
    s.correct = row.at("correct").get<int>();
    s.total = row.at("total").get<int>();
    const auto& rho = row.at("spearman");
    s.spearman = rho.is_null() ? std::numeric_limits<double>::quiet_NaN() : rho.get<double>();
    r.per_sentence.push_back(std::move(s));
  }
  return r;
}

std::string eval_report_to_table(const EvalReport& report) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "sentences  " << report.sentence_count << "\n";
  out << "UUAS       " << report.uuas << "\n";
  out << "DSpr       " << report.dspr << "\n";
  if (!report.per_length.empty()) {
    out << "\nlength  spearman\n";
    for (const auto& [n, v] : report.per_length) out << std::setw(6) << n << "  " << std::setw(8) << v << "\n";
  }
  return out.str();
}

std::pair<std::vector<double>, std::vector<double>> paired_scores(const EvalReport& a, const EvalReport& b,
                                                                  std::string_view metric) {
  const bool use_uuas = metric == "uuas";
  if (!use_uuas && metric != "spearman") throw std::invalid_argument("unknown metric '" + std::string(metric) + "'");
  auto score = [&](const SentenceScore& s) {
    if (use_uuas) {
      return s.total > 0 ? static_cast<double>(s.correct) / s.total : std::numeric_limits<double>::quiet_NaN();
    }
    return s.spearman;
  };
  std::unordered_map<std::string_view, const SentenceScore*> in_b;
  for (const auto& s : b.per_sentence) in_b.emplace(s.id, &s);
  std::pair<std::vector<double>, std::vector<double>> out;
  for (const auto& s : a.per_sentence) {
    auto it = in_b.find(s.id);
    if (it == in_b.end()) continue;
    const double va = score(s), vb = score(*it->second);
    if (std::isnan(va) || std::isnan(vb)) continue;
    out.first.push_back(va);
    out.second.push_back(vb);
  }
  return out;
}

}  // namespace kprobe
