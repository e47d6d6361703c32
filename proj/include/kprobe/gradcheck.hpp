#pragma once

#include <cstdint>
#include <vector>

#include "kprobe/kernels.hpp"
#include "kprobe/probe.hpp"

namespace kprobe {

/// Kernel settings exercised by the gradient check: polynomial c=1 d=2,
/// sigmoid a=0.1 b=0.5, rbf sigma2=sqrt(d2).
KernelSpec gradcheck_kernel(KernelKind kind, int d2);

struct GradCheckOptions {
  KernelKind kind = KernelKind::linear;
  Regularizer regularizer = Regularizer::none;
  double lambda = 0.05;  // only used with a regularizer
  int trials = 50;
  std::uint64_t seed = 0;
  int d1 = 8;
  int d2 = 4;
  int max_n = 6;
  double step = 1e-4;
  double tolerance = 1e-4;
  /// Minimum |target - distance|, distance and radicand for a draw to be
  /// kept; draws closer to a kink are redrawn.
  double kink_margin = 1e-3;
  bool perturb = false;  // corrupts the analytic gradient, for self-testing
};

struct GradCheckResult {
  KernelKind kind = KernelKind::linear;
  Regularizer regularizer = Regularizer::none;
  int trials = 0;
  int redrawn = 0;
  double max_rel_error = 0.0;
  std::uint64_t clamp_events = 0;
  bool passed = false;
};

/// Compares the analytic objective gradient against central differences on
/// random single-sentence instances.
GradCheckResult run_gradcheck(const GradCheckOptions& options);

}  // namespace kprobe
