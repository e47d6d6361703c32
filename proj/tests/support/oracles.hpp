#pragma once

// Test-only reference implementations. None of these call into the code
// paths they are used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <queue>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "kprobe/decode_eval.hpp"
#include "kprobe/treebank.hpp"

namespace oracle {

/// Random labeled tree from a uniformly drawn Pruefer sequence; a random
/// token becomes the root and heads point toward it.
inline kprobe::Sentence pruefer_tree(std::mt19937_64& gen, int n, const std::string& id = "t") {
  kprobe::Sentence s;
  s.id = id;
  for (int k = 1; k <= n; ++k) s.tokens.push_back({k, "w" + std::to_string(k), "NOUN", 0});
  if (n == 1) return s;
  std::vector<std::vector<int>> adj(n + 1);
  if (n == 2) {
    adj[1].push_back(2);
    adj[2].push_back(1);
  } else {
    std::uniform_int_distribution<int> pick(1, n);
    std::vector<int> seq(n - 2);
    for (auto& x : seq) x = pick(gen);
    std::vector<int> degree(n + 1, 1);
    for (int x : seq) ++degree[x];
    for (int x : seq) {
      for (int leaf = 1; leaf <= n; ++leaf) {
        if (degree[leaf] == 1) {
          adj[leaf].push_back(x);
          adj[x].push_back(leaf);
          --degree[leaf];
          --degree[x];
          break;
        }
      }
    }
    int u = -1, v = -1;
    for (int k = 1; k <= n; ++k) {
      if (degree[k] == 1) (u < 0 ? u : v) = k;
    }
    adj[u].push_back(v);
    adj[v].push_back(u);
  }
  const int root = std::uniform_int_distribution<int>(1, n)(gen);
  std::vector<char> seen(n + 1, 0);
  std::queue<int> q;
  q.push(root);
  seen[root] = 1;
  while (!q.empty()) {
    const int x = q.front();
    q.pop();
    for (int y : adj[x]) {
      if (seen[y]) continue;
      seen[y] = 1;
      s.tokens[y - 1].head = x;
      q.push(y);
    }
  }
  return s;
}

/// All-pairs distances by one breadth-first search per source.
inline std::vector<std::vector<int>> bfs_distances(const kprobe::Sentence& s) {
  const int n = static_cast<int>(s.size());
  std::vector<std::vector<int>> adj(n);
  for (const auto& t : s.tokens) {
    if (t.head >= 1) {
      adj[t.index - 1].push_back(t.head - 1);
      adj[t.head - 1].push_back(t.index - 1);
    }
  }
  std::vector<std::vector<int>> dist(n, std::vector<int>(n, -1));
  for (int src = 0; src < n; ++src) {
    std::queue<int> q;
    q.push(src);
    dist[src][src] = 0;
    while (!q.empty()) {
      const int x = q.front();
      q.pop();
      for (int y : adj[x]) {
        if (dist[src][y] < 0) {
          dist[src][y] = dist[src][x] + 1;
          q.push(y);
        }
      }
    }
  }
  return dist;
}

/// Central differences of f at X, one entry at a time.
inline Eigen::MatrixXd central_difference(const std::function<double(const Eigen::MatrixXd&)>& f,
                                          const Eigen::MatrixXd& X, double step) {
  Eigen::MatrixXd g(X.rows(), X.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      Eigen::MatrixXd p = X, m = X;
      p(i, j) += step;
      m(i, j) -= step;
      g(i, j) = (f(p) - f(m)) / (2.0 * step);
    }
  }
  return g;
}

inline double relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double denom = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / denom;
}

/// Minimum spanning tree by trying every (n-1)-edge subset of the complete
/// graph. Returns the edge list (1-based, sorted) and its weight.
inline std::pair<std::vector<kprobe::Edge>, double> exhaustive_mst(const Eigen::MatrixXd& d) {
  const int n = static_cast<int>(d.rows());
  std::vector<kprobe::Edge> all;
  for (int i = 1; i <= n; ++i)
    for (int j = i + 1; j <= n; ++j) all.push_back({i, j});
  const int m = static_cast<int>(all.size());
  std::vector<kprobe::Edge> best;
  double best_w = std::numeric_limits<double>::infinity();
  std::vector<int> pick(n - 1);
  std::function<void(int, int)> rec = [&](int start, int depth) {
    if (depth == n - 1) {
      std::vector<int> parent(n + 1);
      std::iota(parent.begin(), parent.end(), 0);
      std::function<int(int)> find = [&](int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); };
      double w = 0.0;
      for (int k : pick) {
        const int a = find(all[k].lo), b = find(all[k].hi);
        if (a == b) return;  // cycle
        parent[a] = b;
        w += d(all[k].lo - 1, all[k].hi - 1);
      }
      if (w < best_w) {
        best_w = w;
        best.clear();
        for (int k : pick) best.push_back(all[k]);
      }
      return;
    }
    for (int k = start; k < m; ++k) {
      pick[depth] = k;
      rec(k + 1, depth + 1);
    }
  };
  rec(0, 0);
  std::sort(best.begin(), best.end());
  return {best, best_w};
}

/// Spearman rho from ranks computed by counting (rank = 1 + #smaller +
/// (#equal - 1) / 2), then the Pearson formula.
inline double spearman_by_counting(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  auto ranks = [n](const std::vector<double>& v) {
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) {
      double less = 0, equal = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (v[j] < v[i]) ++less;
        if (v[j] == v[i]) ++equal;
      }
      r[i] = 1.0 + less + (equal - 1.0) / 2.0;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

/// Pairwise kernel distances by the textbook formula on kernel values,
/// evaluated through explicit projections.
inline double kernel_value(const kprobe::KernelSpec& spec, const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  switch (spec.kind) {
    case kprobe::KernelKind::linear: return u.dot(v);
    case kprobe::KernelKind::polynomial: return std::pow(u.dot(v) + spec.c, spec.degree);
    case kprobe::KernelKind::sigmoid: return std::tanh(*spec.a * u.dot(v) + spec.b);
    case kprobe::KernelKind::rbf: return std::exp(-(u - v).squaredNorm() / (2.0 * *spec.sigma2));
  }
  return 0.0;
}

inline double naive_distance(const kprobe::KernelSpec& spec, const Eigen::MatrixXd& B, const Eigen::VectorXd& x,
                             const Eigen::VectorXd& y) {
  const Eigen::VectorXd u = B * x, v = B * y;
  const double r = kernel_value(spec, u, u) - 2.0 * kernel_value(spec, u, v) + kernel_value(spec, v, v);
  return std::sqrt(std::max(r, 0.0));
}

}  // namespace oracle
