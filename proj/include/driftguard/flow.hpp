#pragma once

// Real-NVP normalizing flow. Each block applies, in order, a fixed column
// permutation, an invertible batch normalisation and an affine coupling layer
// that passes the first ceil(d/2) coordinates through and transforms the rest:
//
//   y1 = x1,   y2 = x2 * exp(s(x1)) + t(x1),   s = cap * tanh(s_raw / cap)
//
// log|det J| is the sum of the s outputs plus -1/2 sum log(var + eps) from
// each normalisation. Densities are taken against a standard normal base.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "driftguard/autodiff.hpp"
#include "driftguard/features.hpp"
#include "driftguard/model_io.hpp"

namespace driftguard {

using ad::Matrix;

struct Dense {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out
};

// in -> hidden[0] -> hidden[1] -> out, ReLU between layers.
struct Mlp {
  std::vector<Dense> layers;
  bool frozen = false;
};

struct BatchNormLayer {
  Matrix running_mean;  // 1 x d
  Matrix running_var;   // 1 x d
  double momentum = 0.1;
  double eps = 1e-5;
};

struct CouplingLayer {
  std::size_t pass_count = 0;  // leading coordinates passed through
  Mlp scale_net;
  Mlp shift_net;
  double scale_cap = 5.0;

  std::size_t transform_count(std::size_t d) const { return d - pass_count; }
};

struct FlowBlock {
  std::vector<std::size_t> permutation;  // output column j reads input column permutation[j]
  BatchNormLayer norm;
  CouplingLayer coupling;
};

struct FlowModel {
  std::size_t dimension = 0;
  std::vector<std::size_t> hidden;
  std::uint64_t seed = 0;
  std::vector<FlowBlock> blocks;
};

// Fresh flow at the identity map: zeroed output layers, unit batch norm.
// Hidden layers use fan-in scaled uniform initialisation.
FlowModel make_flow(std::size_t dimension, std::vector<std::size_t> hidden, std::size_t steps,
                    std::uint64_t seed);

// Fills every weight (output layers included) with uniform noise of the given
// amplitude; handy for tests that need a non-trivial map.
void randomize_flow(FlowModel& model, double amplitude, std::uint64_t seed);

struct FlowOutput {
  std::vector<double> z;
  double log_det = 0.0;
};

// Inference-mode transforms (batch norm uses running statistics).
FlowOutput forward(const FlowModel& model, std::span<const double> x);
std::vector<double> inverse(const FlowModel& model, std::span<const double> z);
double log_prob(const FlowModel& model, std::span<const double> x);

// Batched inference: z rows and per-row log-determinants.
void forward_batch(const FlowModel& model, const Matrix& x, Matrix& z, Eigen::VectorXd& log_det);
Eigen::VectorXd log_prob_batch(const FlowModel& model, const Matrix& x);

ScoreSet score_flow(const FlowModel& model, const FeatureMatrix& query);

enum class BatchNormMode { Batch, Running };

// Mean negative log-likelihood recorded on a tape. Parameter gradients are
// accumulated into `grads` (same layout as flow_parameters) on backward().
struct FlowParameter {
  std::string name;
  Matrix* value = nullptr;
  bool frozen = false;
};

std::vector<FlowParameter> flow_parameters(FlowModel& model);

ad::Var mean_nll_on_tape(ad::Tape& tape, const FlowModel& model, const Matrix& batch,
                         BatchNormMode mode, std::vector<Matrix>* grads,
                         std::vector<Matrix>* batch_means = nullptr,
                         std::vector<Matrix>* batch_vars = nullptr);

double mean_nll(const FlowModel& model, const Matrix& batch, BatchNormMode mode);

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // entries of frozen parameters
};

// Analytic gradients of the batch-statistics mean NLL against central finite
// differences with step 1e-5 * max(1, |theta|). Relative error uses a floor of
// 1e-6 on the denominator.
GradientCheckReport gradient_check(const FlowModel& model, const FeatureMatrix& batch);

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 32;
  std::size_t epochs = 100;
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
};

struct FlowGrid {
  std::vector<std::vector<std::size_t>> hidden;
  std::vector<std::size_t> steps;
  std::vector<std::size_t> batch_sizes;
  std::vector<std::size_t> epochs;

  // [64, 64], 2 steps, batch 32, 100 epochs.
  static FlowGrid minimal();
  // Hidden {64, 128, 256} x steps {2, 4, 6} x batch {16, 32} x epochs {100, 200}.
  static FlowGrid full();
  std::size_t size() const;
};

struct FlowTrial {
  std::vector<std::size_t> hidden;
  std::size_t steps = 0;
  std::size_t batch_size = 0;
  std::size_t epochs = 0;
  std::vector<double> train_nll;       // per epoch
  std::vector<double> validation_nll;  // per epoch
  double best_validation_nll = 0.0;
  std::optional<std::string> failure;
};

struct FlowFit {
  FlowModel model;
  std::vector<FlowTrial> trials;
  std::size_t best_index = 0;
};

// Trains one model per grid point on a shuffled 80-20 split and keeps the one
// with the lowest validation NLL. Within a trial the best epoch is kept.
FlowFit fit_flow(const FeatureMatrix& train, const TrainConfig& config,
                 const FlowGrid& grid = FlowGrid::minimal());

void to_archive(const FlowModel& model, ModelArchive& archive);
FlowModel flow_from_archive(const ModelArchive& archive);

}  // namespace driftguard
