#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "driftguard/error.hpp"
#include "driftguard/features.hpp"
#include "driftguard/kernels.hpp"
#include "driftguard/model_io.hpp"

namespace driftguard {

enum class GammaMode { Scale, Auto, Value };

struct KernelSpec {
  KernelKind kind = KernelKind::Rbf;
  GammaMode gamma_mode = GammaMode::Scale;
  double gamma_value = 0.0;  // used when gamma_mode == Value
  int degree = 3;            // polynomial only
  double coef0 = 1.0;        // polynomial only

  static KernelSpec rbf(GammaMode mode, double value = 0.0);
  static KernelSpec linear();
  static KernelSpec polynomial(int degree, double coef0 = 1.0);
};

std::string describe(const KernelSpec& spec);

// Scale -> 1 / (d * mean per-coordinate variance); Auto -> 1 / d.
double resolve_gamma(const KernelSpec& spec, const FeatureMatrix& train);
ResolvedKernel resolve(const KernelSpec& spec, const FeatureMatrix& train);

double kernel_eval(const ResolvedKernel& kernel, std::span<const double> a,
                   std::span<const double> b);

struct OcSvmConfig {
  double tolerance = 1e-4;
  std::size_t max_iterations = 100000;
  // Above this many training rows the kernel matrix is cached row by row.
  std::size_t full_matrix_limit = 8192;
  std::size_t cache_rows = 2048;
};

struct OcSvmModel {
  FeatureMatrix support_vectors;
  std::vector<double> alphas;
  double rho = 0.0;
  KernelSpec kernel;
  ResolvedKernel resolved;
  double nu = 0.5;
  std::size_t n_train = 0;
  // Solver diagnostics.
  std::size_t iterations = 0;
  double kkt_gap = 0.0;
  double mean_training_score = 0.0;
  // Training rows whose decision value is below -tolerance. Margin vectors
  // land within the solver tolerance of zero on either side and do not count.
  double training_outlier_fraction = 0.0;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& message, OcSvmModel best)
      : Error(ErrorKind::Convergence, message), best_(std::move(best)) {}
  const OcSvmModel& best_iterate() const noexcept { return best_; }

 private:
  OcSvmModel best_;
};

// Solves min 1/2 a'Qa s.t. 0 <= a_i <= 1/(nu n), sum a = 1 with SMO on the
// maximal violating pair.
OcSvmModel fit_ocsvm(const FeatureMatrix& train, double nu, const KernelSpec& kernel,
                     const OcSvmConfig& config = {});

// Decision value sum_i a_i K(sv_i, x) - rho; lower means more likely OOD.
ScoreSet score_ocsvm(const OcSvmModel& model, const FeatureMatrix& query);

enum class GridSelection {
  MeanTrainingScore,  // highest mean decision value on the training set
  HeldOutQuantile,    // held-out outlier fraction closest to nu
};

struct GridTrial {
  KernelSpec kernel;
  double nu = 0.0;
  double mean_score = 0.0;
  double criterion = 0.0;
  std::optional<std::string> failure;
};

struct GridSearchResult {
  OcSvmModel best;
  double best_mean_score = 0.0;
  std::size_t best_index = 0;
  std::vector<GridTrial> trials;
};

struct GridPoint {
  KernelSpec kernel;
  double nu;
};

// RBF (5 gammas x 3 nus), linear (3 nus), polynomial (2 degrees x 3 nus).
std::vector<GridPoint> ocsvm_grid();

GridSearchResult grid_search_ocsvm(const FeatureMatrix& train, const OcSvmConfig& config = {},
                                   GridSelection selection = GridSelection::MeanTrainingScore);

GridSearchResult grid_search_ocsvm(const FeatureMatrix& train, std::span<const GridPoint> grid,
                                   const OcSvmConfig& config = {},
                                   GridSelection selection = GridSelection::MeanTrainingScore);

void to_archive(const OcSvmModel& model, ModelArchive& archive);
OcSvmModel ocsvm_from_archive(const ModelArchive& archive);

}  // namespace driftguard
