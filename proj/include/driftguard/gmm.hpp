#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "driftguard/features.hpp"
#include "driftguard/kernels.hpp"
#include "driftguard/model_io.hpp"

namespace driftguard {

enum class CovarianceStructure { Full, Diagonal };

// Gaussian mixture with cached Cholesky factors. `covariances[k]` is d x d
// row-major for Full and the d variances for Diagonal.
struct GmmModel {
  std::size_t dimension = 0;
  CovarianceStructure structure = CovarianceStructure::Full;
  std::vector<double> weights;
  std::vector<std::vector<double>> means;
  std::vector<std::vector<double>> covariances;
  std::vector<GaussianFactor> factors;

  // Fit diagnostics (empty for hand-built models).
  double log_likelihood = 0.0;  // total over the training set
  std::vector<double> log_likelihood_history;
  std::size_t iterations = 0;
  bool converged = false;

  std::size_t components() const noexcept { return weights.size(); }
};

// Builds a model from raw parameters, factoring every covariance.
// Throws NumericalError when a covariance is not positive definite.
GmmModel make_gmm(std::vector<double> weights, std::vector<std::vector<double>> means,
                  std::vector<std::vector<double>> covariances,
                  CovarianceStructure structure = CovarianceStructure::Full);

// log N(x | mu, sigma) through a Cholesky factorisation; sigma is d x d row-major.
double log_gaussian(std::span<const double> x, std::span<const double> mu,
                    std::span<const double> sigma);

struct EmConfig {
  std::size_t max_iterations = 200;
  double tolerance = 1e-6;  // relative log-likelihood improvement
  std::size_t restarts = 3;
  std::uint64_t seed = 0;
  CovarianceStructure structure = CovarianceStructure::Full;
  double ridge_scale = 1e-6;  // ridge = ridge_scale * trace(cov) / d
};

GmmModel fit_gmm(const FeatureMatrix& train, std::size_t components, const EmConfig& config = {});

ScoreSet score_gmm(const GmmModel& model, const FeatureMatrix& query);

// Free parameters: K (d + d(d+1)/2) - 1 for Full, K (2d) - 1 for Diagonal.
double parameter_count(std::size_t components, std::size_t dimension,
                       CovarianceStructure structure = CovarianceStructure::Full);

double aic(std::size_t components, std::size_t dimension, double log_likelihood,
           CovarianceStructure structure = CovarianceStructure::Full);

struct AicRow {
  std::size_t components = 0;
  double aic = 0.0;
  double log_likelihood = 0.0;
  std::optional<std::string> failure;
};

struct AicSelection {
  std::vector<AicRow> tested;
  std::size_t selected_components = 0;
  GmmModel model;  // the fit at the selected K
};

AicSelection select_components(const FeatureMatrix& train, std::span<const std::size_t> grid,
                               const EmConfig& config = {});

void to_archive(const GmmModel& model, ModelArchive& archive);
GmmModel gmm_from_archive(const ModelArchive& archive);

}  // namespace driftguard
