#include "kprobe/probe.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "kprobe/parallel.hpp"
#include "kprobe/random.hpp"

namespace kprobe {

std::string_view to_string(Regularizer r) {
  switch (r) {
    case Regularizer::none: return "none";
    case Regularizer::frobenius: return "frobenius";
    case Regularizer::trace: return "trace";
  }
  return "unknown";
}

Regularizer regularizer_from_string(std::string_view name) {
  if (name == "none") return Regularizer::none;
  if (name == "frobenius") return Regularizer::frobenius;
  if (name == "trace") return Regularizer::trace;
  throw std::invalid_argument("unknown regularizer '" + std::string(name) + "'");
}

std::string_view to_string(Optimizer o) { return o == Optimizer::sgd ? "sgd" : "adaptive"; }

Optimizer optimizer_from_string(std::string_view name) {
  if (name == "sgd") return Optimizer::sgd;
  if (name == "adaptive" || name == "adam") return Optimizer::adaptive;
  throw std::invalid_argument("unknown optimizer '" + std::string(name) + "'");
}

void ProbeConfig::validate() const {
  if (d2 < 1) throw std::invalid_argument("d2 must be >= 1");
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (patience < 1) throw std::invalid_argument("patience must be >= 1");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw std::invalid_argument("lr_decay must be in (0, 1]");
  kernel.resolved(d2).validate();
}

std::string probe_config_to_json(const ProbeConfig& config) {
  nlohmann::ordered_json j;
  j["kernel"] = nlohmann::ordered_json::parse(kernel_spec_to_json(config.kernel));
  j["d2"] = config.d2;
  j["regularizer"] = std::string(to_string(config.regularizer));
  j["lambda"] = config.lambda;
  j["learning_rate"] = config.learning_rate;
  j["max_epochs"] = config.max_epochs;
  j["batch_size"] = config.batch_size;
  j["patience"] = config.patience;
  j["seed"] = config.seed;
  j["optimizer"] = std::string(to_string(config.optimizer));
  j["lr_decay"] = config.lr_decay;
  return j.dump(2) + "\n";
}

namespace {

constexpr std::array<std::string_view, 6> kKernelKeys = {"kind", "c", "degree", "a", "b", "sigma2"};

nlohmann::json scalar_from_text(std::string_view value) {
  const std::string s(value);
  try {
    std::size_t used = 0;
    const long long i = std::stoll(s, &used);
    if (used == s.size()) return i;
  } catch (const std::exception&) {
  }
  try {
    std::size_t used = 0;
    const double d = std::stod(s, &used);
    if (used == s.size()) return d;
  } catch (const std::exception&) {
  }
  return s;
}

nlohmann::json key_value_to_json(std::string_view text) {
  nlohmann::json j = nlohmann::json::object();
  nlohmann::json kernel = nlohmann::json::object();
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return std::string{};
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "kernel") key = "kind";
    if (key == "lr") key = "learning_rate";
    const bool kernel_key = std::find(kKernelKeys.begin(), kKernelKeys.end(), key) != kKernelKeys.end();
    (kernel_key ? kernel : j)[key] = scalar_from_text(value);
  }
  if (!kernel.empty()) j["kernel"] = kernel;
  return j;
}

}  // namespace

ProbeConfig parse_probe_config(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  const bool is_json = first != std::string_view::npos && text[first] == '{';
  const nlohmann::json j = is_json ? nlohmann::json::parse(text) : key_value_to_json(text);

  ProbeConfig c;
  if (j.contains("kernel")) {
    const auto& k = j.at("kernel");
    c.kernel = k.is_string() ? kernel_spec_from_json(nlohmann::json{{"kind", k}}.dump())
                             : kernel_spec_from_json(k.dump());
  }
  c.d2 = j.value("d2", c.d2);
  if (j.contains("regularizer")) c.regularizer = regularizer_from_string(j.at("regularizer").get<std::string>());
  c.lambda = j.value("lambda", c.lambda);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  if (j.contains("optimizer")) c.optimizer = optimizer_from_string(j.at("optimizer").get<std::string>());
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.validate();
  return c;
}

namespace {

void check_shapes(const ProjectionMatrix& B, const Eigen::MatrixXd& H, const DistanceMatrix& D) {
  if (H.rows() != D.rows() || D.rows() != D.cols()) {
    throw std::invalid_argument("embedding has " + std::to_string(H.rows()) +
                                " rows but distance matrix is " + std::to_string(D.rows()) + "x" +
                                std::to_string(D.cols()));
  }
  if (H.cols() != B.cols()) {
    throw std::invalid_argument("embedding width " + std::to_string(H.cols()) +
                                " does not match projection input width " + std::to_string(B.cols()));
  }
}

/// Shared pass for loss and gradient. `grad` may be null.
double loss_pass(const KernelSpec& spec, const ProjectionMatrix& B, const Eigen::MatrixXd& H,
                 const DistanceMatrix& D, ClampCounter* counter, RadicandPolicy policy, Eigen::MatrixXd* grad) {
  spec.validate();
  check_shapes(B, H, D);
  const Eigen::Index n = H.rows();
  if (grad) grad->setZero(B.rows(), B.cols());
  if (n < 2) return 0.0;

  const Eigen::MatrixXd U = B * H.transpose();  // column i is B h_i
  Eigen::MatrixXd coeff;                         // dLoss/dB = coeff * H
  if (grad) coeff.setZero(B.rows(), n);
  Eigen::VectorXd dir_i, dir_j;
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double target = D(i, j);
      const auto pd = detail::projected_distance(spec, U.col(i), U.col(j), counter, policy,
                                                 grad ? &dir_i : nullptr, grad ? &dir_j : nullptr);
      const double residual = target - pd.distance;
      total += std::abs(residual);
      if (grad && pd.distance > 0.0 && residual != 0.0) {
        const double w = residual > 0.0 ? -1.0 : 1.0;
        coeff.col(i) += w * dir_i;
        coeff.col(j) += w * dir_j;
      }
    }
  }
  const double norm = 1.0 / static_cast<double>(n * n);
  if (grad) *grad = norm * (coeff * H);
  return norm * total;
}

}  // namespace

double sentence_loss(const KernelSpec& spec, const ProjectionMatrix& B, const Eigen::MatrixXd& H,
                     const DistanceMatrix& D, ClampCounter* counter, RadicandPolicy policy) {
  return loss_pass(spec, B, H, D, counter, policy, nullptr);
}

Eigen::MatrixXd loss_gradient(const KernelSpec& spec, const ProjectionMatrix& B, const Eigen::MatrixXd& H,
                              const DistanceMatrix& D, ClampCounter* counter, RadicandPolicy policy) {
  Eigen::MatrixXd g;
  loss_pass(spec, B, H, D, counter, policy, &g);
  return g;
}

RegularizerValue regularizer(Regularizer kind, const ProjectionMatrix& B) {
  switch (kind) {
    case Regularizer::none:
      return {0.0, Eigen::MatrixXd::Zero(B.rows(), B.cols())};
    case Regularizer::trace:
      // tr(B^T B) = ||B||_F^2
      return {B.squaredNorm(), 2.0 * B};
    case Regularizer::frobenius: {
      // ||B^T B||_F^2 = ||B B^T||_F^2, and 4 B B^T B keeps products at d2 x d2.
      const Eigen::MatrixXd G = B * B.transpose();
      return {G.squaredNorm(), 4.0 * G * B};
    }
  }
  throw std::invalid_argument("unknown regularizer");
}

ObjectiveValue objective(const ProbeConfig& config, const ProjectionMatrix& B,
                         const std::vector<const ProbeExample*>& batch, ClampCounter* counter,
                         RadicandPolicy policy) {
  const KernelSpec spec = config.kernel.resolved(config.d2);
  const std::size_t m = batch.size();
  std::vector<double> losses(m);
  std::vector<Eigen::MatrixXd> grads(m);
  parallel_for(m, [&](std::size_t k) {
    const Eigen::MatrixXd H = batch[k]->embedding.cast<double>();
    losses[k] = loss_pass(spec, B, H, batch[k]->distances, counter, policy, &grads[k]);
  });
  ObjectiveValue out{0.0, Eigen::MatrixXd::Zero(B.rows(), B.cols())};
  for (std::size_t k = 0; k < m; ++k) {
    out.value += losses[k];
    out.gradient += grads[k];
  }
  if (m > 0) {
    out.value /= static_cast<double>(m);
    out.gradient /= static_cast<double>(m);
  }
  if (config.regularizer != Regularizer::none && config.lambda > 0.0) {
    const auto reg = regularizer(config.regularizer, B);
    out.value += config.lambda * reg.value;
    out.gradient += config.lambda * reg.gradient;
  }
  return out;
}

double mean_loss(const KernelSpec& spec, const ProjectionMatrix& B, const std::vector<ProbeExample>& data,
                 ClampCounter* counter, RadicandPolicy policy) {
  if (data.empty()) return 0.0;
  std::vector<double> losses(data.size());
  parallel_for(data.size(), [&](std::size_t k) {
    const Eigen::MatrixXd H = data[k].embedding.cast<double>();
    losses[k] = loss_pass(spec, B, H, data[k].distances, counter, policy, nullptr);
  });
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(data.size());
}

std::string train_report_to_json(const TrainReport& report) {
  nlohmann::ordered_json j;
  j["epochs_run"] = report.epochs_run;
  j["train_loss_per_epoch"] = report.train_loss_per_epoch;
  j["dev_loss_per_epoch"] = report.dev_loss_per_epoch;
  j["best_epoch"] = report.best_epoch;
  j["clamp_counter"] = report.clamp_counter;
  j["wall_time"] = report.wall_time;
  return j.dump(2) + "\n";
}

TrainingDiverged::TrainingDiverged(int epoch, double learning_rate)
    : std::runtime_error("training diverged (non-finite loss) in epoch " + std::to_string(epoch) +
                         " at learning rate " + std::to_string(learning_rate)),
      epoch_(epoch),
      learning_rate_(learning_rate) {}

TrainResult train(const ProbeConfig& config, const std::vector<ProbeExample>& train_set,
                  const std::vector<ProbeExample>& dev_set) {
  config.validate();
  if (train_set.empty() || dev_set.empty()) throw std::invalid_argument("train and dev sets must be nonempty");
  const auto started = std::chrono::steady_clock::now();
  const KernelSpec spec = config.kernel.resolved(config.d2);
  const Eigen::Index d1 = train_set.front().embedding.cols();

  Rng rng(config.seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d1));
  ProjectionMatrix B(config.d2, d1);
  for (Eigen::Index i = 0; i < B.rows(); ++i)
    for (Eigen::Index j = 0; j < B.cols(); ++j) B(i, j) = rng.uniform(-bound, bound);

  // Adam moments, used only by the adaptive optimizer.
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  Eigen::MatrixXd m1 = Eigen::MatrixXd::Zero(B.rows(), B.cols());
  Eigen::MatrixXd m2 = Eigen::MatrixXd::Zero(B.rows(), B.cols());
  long long step = 0;

  ClampCounter clamps;
  TrainResult result{B, {}};
  TrainReport& report = result.report;
  double lr = config.learning_rate;
  double best_dev = std::numeric_limits<double>::infinity();
  int stale = 0;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<const ProbeExample*> batch;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double epoch_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      for (std::size_t k = start; k < stop; ++k) batch.push_back(&train_set[order[k]]);
      const auto obj = objective(config, B, batch, &clamps, RadicandPolicy::clamp);
      if (!std::isfinite(obj.value) || !obj.gradient.allFinite()) throw TrainingDiverged(epoch, lr);
      epoch_total += obj.value * static_cast<double>(batch.size());
      if (config.optimizer == Optimizer::sgd) {
        B -= lr * obj.gradient;
      } else {
        ++step;
        m1 = beta1 * m1 + (1.0 - beta1) * obj.gradient;
        m2 = beta2 * m2 + (1.0 - beta2) * obj.gradient.cwiseAbs2();
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        B.array() -= lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
      }
    }
    const double train_loss = epoch_total / static_cast<double>(train_set.size());
    const double dev_loss = mean_loss(spec, B, dev_set, &clamps, RadicandPolicy::clamp);
    if (!std::isfinite(train_loss) || !std::isfinite(dev_loss) || !B.allFinite()) {
      throw TrainingDiverged(epoch, lr);
    }
    report.train_loss_per_epoch.push_back(train_loss);
    report.dev_loss_per_epoch.push_back(dev_loss);
    report.epochs_run = epoch + 1;

    if (dev_loss < best_dev) {
      best_dev = dev_loss;
      report.best_epoch = epoch;
      result.B = B;
      stale = 0;
    } else {
      lr *= config.lr_decay;
      if (++stale >= config.patience) break;
    }
  }
  report.clamp_counter = clamps.total();
  report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

namespace {

constexpr std::array<char, 4> kProbeMagic = {'K', 'P', 'R', 'B'};
constexpr std::uint32_t kProbeVersion = 1;

template <typename T>
T little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

template <typename T>
void put(std::ostream& out, T v) {
  const T le = little(v);
  out.write(reinterpret_cast<const char*>(&le), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& path) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error("truncated probe file '" + path + "'");
  return little(v);
}

}  // namespace

void save_probe(const ProjectionMatrix& B, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write(kProbeMagic.data(), kProbeMagic.size());
  put<std::uint32_t>(out, kProbeVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(B.rows()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(B.cols()));
  for (Eigen::Index i = 0; i < B.rows(); ++i)
    for (Eigen::Index j = 0; j < B.cols(); ++j) put<float>(out, static_cast<float>(B(i, j)));
  if (!out) throw std::runtime_error("failed writing probe '" + path + "'");
}

ProjectionMatrix load_probe(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open probe '" + path + "'");
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kProbeMagic) throw std::runtime_error("'" + path + "' is not a KPRB probe file");
  if (get<std::uint32_t>(in, path) != kProbeVersion) throw std::runtime_error("unsupported KPRB version in '" + path + "'");
  const auto d2 = get<std::uint32_t>(in, path);
  const auto d1 = get<std::uint32_t>(in, path);
  ProjectionMatrix B(d2, d1);
  for (Eigen::Index i = 0; i < B.rows(); ++i)
    for (Eigen::Index j = 0; j < B.cols(); ++j) B(i, j) = get<float>(in, path);
  return B;
}

}  // namespace kprobe
