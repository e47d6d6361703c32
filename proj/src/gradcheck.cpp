#include "kprobe/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "kprobe/random.hpp"
#include "kprobe/treebank.hpp"

namespace kprobe {

KernelSpec gradcheck_kernel(KernelKind kind, int d2) {
  switch (kind) {
    case KernelKind::linear: return KernelSpec::linear();
    case KernelKind::polynomial: return KernelSpec::polynomial(1.0, 2);
    case KernelKind::sigmoid: return KernelSpec::sigmoid(0.1, 0.5);
    case KernelKind::rbf: return KernelSpec::rbf(std::sqrt(static_cast<double>(d2)));
  }
  return {};
}

namespace {

/// True if every pair sits at least `margin` away from the loss kinks and
/// from a vanishing radicand.
bool clear_of_kinks(const KernelSpec& spec, const ProjectionMatrix& B, const Eigen::MatrixXd& H,
                    const DistanceMatrix& D, double margin) {
  const Eigen::MatrixXd U = B * H.transpose();
  for (Eigen::Index i = 0; i < H.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < H.rows(); ++j) {
      ClampCounter c;
      const auto pd = detail::projected_distance(spec, U.col(i), U.col(j), &c, RadicandPolicy::clamp);
      if (c.total() > 0 || pd.radicand < margin || pd.distance < margin) return false;
      if (std::abs(D(i, j) - pd.distance) < margin) return false;
    }
  }
  return true;
}

}  // namespace

GradCheckResult run_gradcheck(const GradCheckOptions& o) {
  GradCheckResult result;
  result.kind = o.kind;
  result.regularizer = o.regularizer;

  ProbeConfig config;
  config.kernel = gradcheck_kernel(o.kind, o.d2);
  config.d2 = o.d2;
  config.regularizer = o.regularizer;
  config.lambda = o.regularizer == Regularizer::none ? 0.0 : o.lambda;
  const KernelSpec spec = config.kernel.resolved(o.d2);

  Rng rng(o.seed);
  ClampCounter clamps;
  int kept = 0;
  const int max_redraws = 1000 * std::max(o.trials, 1);
  while (kept < o.trials) {
    if (result.redrawn > max_redraws) {
      throw std::runtime_error("gradient check: too many draws landed near a kink");
    }
    const int n = 2 + static_cast<int>(rng.index(static_cast<std::uint64_t>(o.max_n - 1)));
    const Sentence tree = random_tree(rng, n, "gc");
    const DistanceMatrix D = tree_distances(tree);
    FloatMatrix Hf(n, o.d1);
    for (Eigen::Index k = 0; k < Hf.size(); ++k) Hf.data()[k] = static_cast<float>(rng.normal());
    ProjectionMatrix B(o.d2, o.d1);
    const double scale = 1.0 / std::sqrt(static_cast<double>(o.d1));
    for (Eigen::Index k = 0; k < B.size(); ++k) B.data()[k] = scale * rng.normal();

    const Eigen::MatrixXd H = Hf.cast<double>();
    if (!clear_of_kinks(spec, B, H, D, o.kink_margin)) {
      ++result.redrawn;
      continue;
    }
    ++kept;

    const ProbeExample example(Hf, D);
    const std::vector<const ProbeExample*> batch{&example};
    Eigen::MatrixXd analytic = objective(config, B, batch, &clamps, RadicandPolicy::strict).gradient;
    if (o.perturb) analytic *= 1.01;

    Eigen::MatrixXd numeric(B.rows(), B.cols());
    for (Eigen::Index k = 0; k < B.size(); ++k) {
      ProjectionMatrix plus = B, minus = B;
      plus.data()[k] += o.step;
      minus.data()[k] -= o.step;
      const double fp = objective(config, plus, batch, &clamps, RadicandPolicy::strict).value;
      const double fm = objective(config, minus, batch, &clamps, RadicandPolicy::strict).value;
      numeric.data()[k] = (fp - fm) / (2.0 * o.step);
    }
    const double denom = std::max({analytic.norm(), numeric.norm(), 1e-8});
    result.max_rel_error = std::max(result.max_rel_error, (analytic - numeric).norm() / denom);
  }
  result.trials = kept;
  result.clamp_events = clamps.total();
  result.passed = result.max_rel_error < o.tolerance;
  return result;
}

}  // namespace kprobe
