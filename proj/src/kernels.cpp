#include "kprobe/kernels.hpp"

#include <cmath>

#include <json.hpp>

namespace kprobe {

std::string_view to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::linear: return "linear";
    case KernelKind::polynomial: return "polynomial";
    case KernelKind::sigmoid: return "sigmoid";
    case KernelKind::rbf: return "rbf";
  }
  return "unknown";
}

KernelKind kernel_kind_from_string(std::string_view name) {
  if (name == "linear" || name == "none") return KernelKind::linear;
  if (name == "polynomial" || name == "poly") return KernelKind::polynomial;
  if (name == "sigmoid") return KernelKind::sigmoid;
  if (name == "rbf") return KernelKind::rbf;
  throw std::invalid_argument("unknown kernel '" + std::string(name) + "'");
}

KernelSpec KernelSpec::polynomial(double c, int degree) {
  KernelSpec s;
  s.kind = KernelKind::polynomial;
  s.c = c;
  s.degree = degree;
  return s;
}

KernelSpec KernelSpec::sigmoid(double a, double b) {
  KernelSpec s;
  s.kind = KernelKind::sigmoid;
  s.a = a;
  s.b = b;
  return s;
}

KernelSpec KernelSpec::rbf(double sigma2) {
  KernelSpec s;
  s.kind = KernelKind::rbf;
  s.sigma2 = sigma2;
  return s;
}

KernelSpec KernelSpec::resolved(int d2) const {
  if (d2 < 1) throw std::invalid_argument("projection rank must be positive");
  KernelSpec s = *this;
  if (!s.a) s.a = 1.0 / d2;
  if (!s.sigma2) s.sigma2 = std::sqrt(static_cast<double>(d2));
  return s;
}

void KernelSpec::validate() const {
  switch (kind) {
    case KernelKind::linear:
      return;
    case KernelKind::polynomial:
      if (degree < 1) throw std::invalid_argument("polynomial degree must be >= 1");
      if (!(c >= 0.0)) throw std::invalid_argument("polynomial offset c must be >= 0");
      return;
    case KernelKind::sigmoid:
      if (!a) throw std::invalid_argument("sigmoid slope a is unresolved");
      if (!(*a > 0.0) || !(b > 0.0)) throw std::invalid_argument("sigmoid kernel needs a > 0 and b > 0");
      return;
    case KernelKind::rbf:
      if (!sigma2) throw std::invalid_argument("rbf sigma2 is unresolved");
      if (!(*sigma2 > 0.0)) throw std::invalid_argument("rbf sigma2 must be > 0");
      return;
  }
}

std::string kernel_spec_to_json(const KernelSpec& spec) {
  nlohmann::ordered_json j;
  j["kind"] = std::string(to_string(spec.kind));
  j["c"] = spec.c;
  j["degree"] = spec.degree;
  j["a"] = spec.a ? nlohmann::ordered_json(*spec.a) : nlohmann::ordered_json(nullptr);
  j["b"] = spec.b;
  j["sigma2"] = spec.sigma2 ? nlohmann::ordered_json(*spec.sigma2) : nlohmann::ordered_json(nullptr);
  return j.dump();
}

KernelSpec kernel_spec_from_json(std::string_view text) {
  const auto j = nlohmann::json::parse(text);
  KernelSpec s;
  if (j.contains("kind")) s.kind = kernel_kind_from_string(j.at("kind").get<std::string>());
  s.c = j.value("c", s.c);
  s.degree = j.value("degree", s.degree);
  s.b = j.value("b", s.b);
  if (j.contains("a") && !j.at("a").is_null()) s.a = j.at("a").get<double>();
  if (j.contains("sigma2") && !j.at("sigma2").is_null()) s.sigma2 = j.at("sigma2").get<double>();
  return s;
}

NegativeRadicand::NegativeRadicand(double radicand)
    : std::domain_error("kernel distance radicand " + std::to_string(radicand) +
                        " is below -1e-9; the kernel is not PSD on these inputs"),
      radicand_(radicand) {}

namespace {

bool is_squared_euclidean(const KernelSpec& spec) {
  return spec.kind == KernelKind::linear || (spec.kind == KernelKind::polynomial && spec.degree == 1);
}

/// Value and derivative of the scalar map applied to inner products by the
/// dot-product kernels (polynomial, sigmoid).
struct DotMap {
  const KernelSpec& spec;

  double value(double t) const {
    if (spec.kind == KernelKind::polynomial) return std::pow(t + spec.c, spec.degree);
    return std::tanh(*spec.a * t + spec.b);
  }

  double derivative(double t) const {
    if (spec.kind == KernelKind::polynomial) return spec.degree * std::pow(t + spec.c, spec.degree - 1);
    const double th = std::tanh(*spec.a * t + spec.b);
    return *spec.a * (1.0 - th * th);
  }
};

}  // namespace

namespace detail {

ProjectedDistance projected_distance(const KernelSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& u,
                                     const Eigen::Ref<const Eigen::VectorXd>& v, ClampCounter* counter,
                                     RadicandPolicy policy, Eigen::VectorXd* dir_i, Eigen::VectorXd* dir_j) {
  // Every kernel's radicand R has dR/dB = P_i hi^T + P_j hj^T; the distance
  // gradient is that divided by 2 sqrt(R).
  double radicand = 0.0;
  Eigen::VectorXd p_i, p_j;
  const bool want_dirs = dir_i != nullptr || dir_j != nullptr;

  if (is_squared_euclidean(spec) || spec.kind == KernelKind::rbf) {
    const Eigen::VectorXd diff = u - v;
    const double sq = diff.squaredNorm();
    double scale = 2.0;
    if (spec.kind == KernelKind::rbf) {
      const double k = std::exp(-sq / (2.0 * *spec.sigma2));
      radicand = 2.0 - 2.0 * k;
      scale = 2.0 * k / *spec.sigma2;
    } else {
      radicand = sq;
    }
    if (want_dirs) {
      p_i = scale * diff;
      p_j = -p_i;
    }
  } else {
    const DotMap f{spec};
    const double x = u.squaredNorm();
    const double y = v.squaredNorm();
    const double t = u.dot(v);
    radicand = f.value(x) - 2.0 * f.value(t) + f.value(y);
    if (want_dirs) {
      const double fx = f.derivative(x), fy = f.derivative(y), ft = f.derivative(t);
      p_i = 2.0 * (fx * u - ft * v);
      p_j = 2.0 * (fy * v - ft * u);
    }
  }

  if (radicand < 0.0) {
    if (radicand >= -kRadicandTolerance) {
      if (counter) ++counter->within_tolerance;
    } else if (policy == RadicandPolicy::strict) {
      throw NegativeRadicand(radicand);
    } else if (counter) {
      ++counter->beyond_tolerance;
    }
    radicand = 0.0;
  }

  ProjectedDistance out{std::sqrt(radicand), radicand};
  if (want_dirs) {
    const double inv = out.distance > 0.0 ? 0.5 / out.distance : 0.0;
    if (dir_i) *dir_i = inv * p_i;
    if (dir_j) *dir_j = inv * p_j;
  }
  return out;
}

}  // namespace detail

namespace {

void check_dims(const ProjectionMatrix& B, const Eigen::VectorXd& hi, const Eigen::VectorXd& hj) {
  if (hi.size() != B.cols() || hj.size() != B.cols()) {
    throw std::invalid_argument("vector width does not match projection input width " +
                                std::to_string(B.cols()));
  }
}

}  // namespace

double kernel_eval(const KernelSpec& spec, const ProjectionMatrix& B, const Eigen::VectorXd& hi,
                   const Eigen::VectorXd& hj) {
  spec.validate();
  check_dims(B, hi, hj);
  const Eigen::VectorXd u = B * hi;
  const Eigen::VectorXd v = B * hj;
  switch (spec.kind) {
    case KernelKind::linear: return u.dot(v);
    case KernelKind::polynomial: return std::pow(u.dot(v) + spec.c, spec.degree);
    case KernelKind::sigmoid: return std::tanh(*spec.a * u.dot(v) + spec.b);
    case KernelKind::rbf: return std::exp(-(u - v).squaredNorm() / (2.0 * *spec.sigma2));
  }
  return 0.0;
}

double kernel_distance(const KernelSpec& spec, const ProjectionMatrix& B, const Eigen::VectorXd& hi,
                       const Eigen::VectorXd& hj, ClampCounter* counter, RadicandPolicy policy) {
  spec.validate();
  check_dims(B, hi, hj);
  return detail::projected_distance(spec, B * hi, B * hj, counter, policy).distance;
}

Eigen::MatrixXd distance_gradient(const KernelSpec& spec, const ProjectionMatrix& B, const Eigen::VectorXd& hi,
                                  const Eigen::VectorXd& hj) {
  spec.validate();
  check_dims(B, hi, hj);
  Eigen::VectorXd dir_i, dir_j;
  const auto pd = detail::projected_distance(spec, B * hi, B * hj, nullptr, RadicandPolicy::strict, &dir_i, &dir_j);
  if (pd.distance == 0.0) throw std::domain_error("distance gradient undefined at distance 0");
  return dir_i * hi.transpose() + dir_j * hj.transpose();
}

}  // namespace kprobe
