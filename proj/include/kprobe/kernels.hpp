#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Core>

namespace kprobe {

/// d2 x d1 projection; the only learned parameter of a probe.
using ProjectionMatrix = Eigen::MatrixXd;

enum class KernelKind { linear, polynomial, sigmoid, rbf };

std::string_view to_string(KernelKind kind);
KernelKind kernel_kind_from_string(std::string_view name);

/// Kernel choice and its fixed hyperparameters. `a` and `sigma2` default to
/// values that depend on the projection rank (1/d2 and sqrt(d2)); leave them
/// unset and call resolved(d2) to fill them in.
struct KernelSpec {
  KernelKind kind = KernelKind::linear;
  double c = 1.0;   // polynomial offset
  int degree = 2;   // polynomial degree
  std::optional<double> a;  // sigmoid slope
  double b = 1.0;           // sigmoid offset
  std::optional<double> sigma2;  // RBF bandwidth

  static KernelSpec linear() { return {}; }
  static KernelSpec polynomial(double c, int degree);
  static KernelSpec sigmoid(double a, double b);
  static KernelSpec rbf(double sigma2);

  KernelSpec resolved(int d2) const;

  /// Throws std::invalid_argument when a hyperparameter is outside its
  /// admissible range or still unresolved.
  void validate() const;
};

std::string kernel_spec_to_json(const KernelSpec& spec);
KernelSpec kernel_spec_from_json(std::string_view text);

/// Counts radicands in [-1e-9, 0) that were clamped to zero, plus the
/// genuinely negative ones tolerated under RadicandPolicy::clamp.
struct ClampCounter {
  std::atomic<std::uint64_t> within_tolerance{0};
  std::atomic<std::uint64_t> beyond_tolerance{0};

  std::uint64_t total() const { return within_tolerance.load() + beyond_tolerance.load(); }
};

/// What to do with a kernel distance radicand below -1e-9. The sigmoid
/// kernel is not PSD in general, so such values are reachable with it.
enum class RadicandPolicy {
  strict,  // throw NegativeRadicand
  clamp,   // clamp to 0 and count
};

class NegativeRadicand : public std::domain_error {
 public:
  explicit NegativeRadicand(double radicand);
  double radicand() const { return radicand_; }

 private:
  double radicand_;
};

inline constexpr double kRadicandTolerance = 1e-9;

double kernel_eval(const KernelSpec& spec, const ProjectionMatrix& B, const Eigen::VectorXd& hi,
                   const Eigen::VectorXd& hj);

/// sqrt(k(x,x) - 2 k(x,y) + k(y,y)).
double kernel_distance(const KernelSpec& spec, const ProjectionMatrix& B, const Eigen::VectorXd& hi,
                       const Eigen::VectorXd& hj, ClampCounter* counter = nullptr,
                       RadicandPolicy policy = RadicandPolicy::strict);

/// Analytic d(distance)/dB. Throws std::domain_error at distance 0.
Eigen::MatrixXd distance_gradient(const KernelSpec& spec, const ProjectionMatrix& B,
                                  const Eigen::VectorXd& hi, const Eigen::VectorXd& hj);

namespace detail {

/// Kernel distance between already-projected points u = B hi, v = B hj.
/// When the distance is positive, its gradient w.r.t. B is
/// dir_i * hi^T + dir_j * hj^T; dir_i and dir_j are written only if given.
struct ProjectedDistance {
  double distance = 0.0;
  double radicand = 0.0;
};

ProjectedDistance projected_distance(const KernelSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& u,
                                     const Eigen::Ref<const Eigen::VectorXd>& v, ClampCounter* counter,
                                     RadicandPolicy policy, Eigen::VectorXd* dir_i = nullptr,
                                     Eigen::VectorXd* dir_j = nullptr);

}  // namespace detail

}  // namespace kprobe
