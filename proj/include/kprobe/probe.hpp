#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "kprobe/embeddings.hpp"
#include "kprobe/kernels.hpp"
#include "kprobe/treebank.hpp"

namespace kprobe {

enum class Regularizer { none, frobenius, trace };
enum class Optimizer { sgd, adaptive };

std::string_view to_string(Regularizer r);
Regularizer regularizer_from_string(std::string_view name);
std::string_view to_string(Optimizer o);
Optimizer optimizer_from_string(std::string_view name);

struct ProbeConfig {
  KernelSpec kernel;
  int d2 = 128;
  Regularizer regularizer = Regularizer::none;
  double lambda = 0.0;
  double learning_rate = 0.1;
  int max_epochs = 40;
  int batch_size = 20;
  int patience = 4;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::sgd;
  double lr_decay = 0.5;  // applied after every epoch without dev improvement

  void validate() const;
};

std::string probe_config_to_json(const ProbeConfig& config);

/// Accepts either a JSON object or `key = value` lines (`#` starts a
/// comment). Kernel keys (kind, c, degree, a, b, sigma2) may be nested under
/// "kernel" in JSON; in key=value form `kernel = rbf` names the kind.
ProbeConfig parse_probe_config(std::string_view text);

/// One training sentence: its embedding rows and gold tree distances.
/// The embedding is referenced, not copied, and must outlive the example.
struct ProbeExample {
  ProbeExample(const FloatMatrix& embedding, DistanceMatrix distances)
      : embedding(embedding.data(), embedding.rows(), embedding.cols()), distances(std::move(distances)) {}

  Eigen::Map<const FloatMatrix> embedding;
  DistanceMatrix distances;
};

/// (1/n^2) * sum_{i<j} |D_ij - d(h_i, h_j)|; 0 for n = 1.
double sentence_loss(const KernelSpec& spec, const ProjectionMatrix& B, const Eigen::MatrixXd& H,
                     const DistanceMatrix& D, ClampCounter* counter = nullptr,
                     RadicandPolicy policy = RadicandPolicy::strict);

/// Subgradient of sentence_loss w.r.t. B; pairs at d = D_ij or d = 0
/// contribute nothing.
Eigen::MatrixXd loss_gradient(const KernelSpec& spec, const ProjectionMatrix& B, const Eigen::MatrixXd& H,
                              const DistanceMatrix& D, ClampCounter* counter = nullptr,
                              RadicandPolicy policy = RadicandPolicy::strict);

struct RegularizerValue {
  double value = 0.0;
  Eigen::MatrixXd gradient;
};

/// Penalty on A = B^T B: frobenius is ||A||_F^2, trace is tr(A).
RegularizerValue regularizer(Regularizer kind, const ProjectionMatrix& B);

/// Mean sentence loss over `batch` plus lambda * regularizer, and its gradient.
struct ObjectiveValue {
  double value = 0.0;
  Eigen::MatrixXd gradient;
};

ObjectiveValue objective(const ProbeConfig& config, const ProjectionMatrix& B,
                         const std::vector<const ProbeExample*>& batch, ClampCounter* counter = nullptr,
                         RadicandPolicy policy = RadicandPolicy::strict);

double mean_loss(const KernelSpec& spec, const ProjectionMatrix& B, const std::vector<ProbeExample>& data,
                 ClampCounter* counter = nullptr, RadicandPolicy policy = RadicandPolicy::clamp);

struct TrainReport {
  int epochs_run = 0;
  std::vector<double> train_loss_per_epoch;
  std::vector<double> dev_loss_per_epoch;
  int best_epoch = 0;
  std::uint64_t clamp_counter = 0;
  double wall_time = 0.0;  // seconds
};

std::string train_report_to_json(const TrainReport& report);

struct TrainResult {
  ProjectionMatrix B;
  TrainReport report;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int epoch, double learning_rate);
  int epoch() const { return epoch_; }
  double learning_rate() const { return learning_rate_; }

 private:
  int epoch_;
  double learning_rate_;
};

/// Minibatch training of B. Returns the snapshot with the lowest dev loss.
/// Radicands below tolerance are clamped and counted, not thrown.
TrainResult train(const ProbeConfig& config, const std::vector<ProbeExample>& train_set,
                  const std::vector<ProbeExample>& dev_set);

/// B as "KPRB" | u32 version | u32 d2 | u32 d1 | f32 row-major, little-endian.
void save_probe(const ProjectionMatrix& B, const std::string& path);
ProjectionMatrix load_probe(const std::string& path);

}  // namespace kprobe
