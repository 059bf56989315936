#include "driftguard/gmm.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "driftguard/error.hpp"
#include "driftguard/rng.hpp"

namespace driftguard {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

std::optional<GaussianFactor> factor_component(double weight, const std::vector<double>& mean,
                                               const std::vector<double>& cov,
                                               CovarianceStructure structure) {
  const std::size_t d = mean.size();
  GaussianFactor g;
  g.mean = mean;
  g.diagonal = structure == CovarianceStructure::Diagonal;
  double log_det = 0.0;
  if (g.diagonal) {
    g.factor.resize(d);
    for (std::size_t i = 0; i < d; ++i) {
      if (!(cov[i] > 0.0) || !std::isfinite(cov[i])) return std::nullopt;
      g.factor[i] = std::sqrt(cov[i]);
      log_det += std::log(cov[i]);
    }
  } else {
    Eigen::Map<const RowMatrix> sigma(cov.data(), d, d);
    Eigen::LLT<RowMatrix> llt(sigma);
    if (llt.info() != Eigen::Success) return std::nullopt;
    RowMatrix lower = llt.matrixL();
    g.factor.assign(lower.data(), lower.data() + d * d);
    for (std::size_t i = 0; i < d; ++i) {
      const double lii = lower(i, i);
      if (!(lii > 0.0) || !std::isfinite(lii)) return std::nullopt;
      log_det += 2.0 * std::log(lii);
    }
  }
  g.log_norm = std::log(weight) - 0.5 * (static_cast<double>(d) * kLog2Pi + log_det);
  return g;
}

void refresh_factors(GmmModel& model) {
  model.factors.clear();
  for (std::size_t k = 0; k < model.components(); ++k) {
    auto g = factor_component(model.weights[k], model.means[k], model.covariances[k],
                              model.structure);
    if (!g) {
      throw NumericalError("covariance of component " + std::to_string(k) +
                           " is not positive definite");
    }
    model.factors.push_back(std::move(*g));
  }
}

// k-means++ seeding.
std::vector<std::vector<double>> seed_means(const FeatureMatrix& x, std::size_t k, Rng& rng) {
  const std::size_t n = x.rows();
  std::vector<std::vector<double>> centers;
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::size_t next = rng.below(n);
  while (centers.size() < k) {
    const auto c = x.row(next);
    centers.emplace_back(c.begin(), c.end());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double sq = 0.0;
      const auto r = x.row(i);
      for (std::size_t j = 0; j < r.size(); ++j) sq += (r[j] - c[j]) * (r[j] - c[j]);
      dist[i] = std::min(dist[i], sq);
      total += dist[i];
    }
    if (centers.size() == k) break;
    if (total <= 0.0) {
      next = rng.below(n);
      continue;
    }
    double target = rng.uniform() * total;
    next = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      target -= dist[i];
      if (target < 0.0) {
        next = i;
        break;
      }
    }
  }
  return centers;
}

// Responsibilities are n x K row-major. Returns false when a component
// collapses: fewer than two responsible points and a covariance that stays
// singular after the ridge.
bool maximization_step(const FeatureMatrix& x, const std::vector<double>& resp, std::size_t k,
                       const EmConfig& config, GmmModel& model) {
  const std::size_t n = x.rows(), d = x.cols();
  Eigen::Map<const RowMatrix> data(x.values().data(), n, d);
  Eigen::Map<const RowMatrix> r(resp.data(), n, k);
  model.weights.assign(k, 0.0);
  model.means.assign(k, {});
  model.covariances.assign(k, {});
  for (std::size_t c = 0; c < k; ++c) {
    const Eigen::VectorXd w = r.col(c);
    const double nk = w.sum();
    if (!(nk > 0.0)) return false;
    const Eigen::RowVectorXd mu = (w.transpose() * data) / nk;
    const RowMatrix centered = data.rowwise() - mu;
    model.weights[c] = nk / static_cast<double>(n);
    model.means[c].assign(mu.data(), mu.data() + d);
    if (config.structure == CovarianceStructure::Full) {
      RowMatrix cov = (centered.transpose() * w.asDiagonal() * centered) / nk;
      const double ridge = config.ridge_scale * cov.trace() / static_cast<double>(d);
      cov.diagonal().array() += ridge;
      model.covariances[c].assign(cov.data(), cov.data() + d * d);
    } else {
      Eigen::RowVectorXd var = (w.transpose() * centered.array().square().matrix()) / nk;
      const double ridge = config.ridge_scale * var.sum() / static_cast<double>(d);
      var.array() += ridge;
      model.covariances[c].assign(var.data(), var.data() + d);
    }
    if (nk < 2.0 && !factor_component(model.weights[c], model.means[c], model.covariances[c],
                                      model.structure)) {
      return false;
    }
  }
  return true;
}

// Per-sample log-likelihoods and responsibilities under the current model.
double expectation_step(const FeatureMatrix& x, const GmmModel& model, std::vector<double>& resp) {
  const std::size_t n = x.rows(), k = model.components();
  resp.resize(n * k);
  kernels::omp::component_log_densities(model.factors, x, resp);
  std::vector<double> ll(n);
  kernels::omp::log_sum_exp_rows(resp, k, ll);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += ll[i];
    for (std::size_t c = 0; c < k; ++c) resp[i * k + c] = std::exp(resp[i * k + c] - ll[i]);
  }
  return total;
}

std::optional<GmmModel> run_em(const FeatureMatrix& x, std::size_t k, const EmConfig& config,
                               Rng& rng) {
  const std::size_t n = x.rows(), d = x.cols();
  GmmModel model;
  model.dimension = d;
  model.structure = config.structure;

  // Hard assignment to the nearest seeded mean.
  const auto centers = seed_means(x, k, rng);
  std::vector<double> resp(n * k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = x.row(i);
    std::size_t best = 0;
    double best_sq = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) sq += (r[j] - centers[c][j]) * (r[j] - centers[c][j]);
      if (sq < best_sq) {
        best_sq = sq;
        best = c;
      }
    }
    resp[i * k + best] = 1.0;
  }

  if (!maximization_step(x, resp, k, config, model)) return std::nullopt;
  for (std::size_t iter = 0; iter < config.max_iterations; ++iter) {
    try {
      refresh_factors(model);
    } catch (const NumericalError&) {
      return std::nullopt;
    }
    const double ll = expectation_step(x, model, resp);
    if (!std::isfinite(ll)) return std::nullopt;
    model.log_likelihood = ll;
    model.log_likelihood_history.push_back(ll);
    model.iterations = iter + 1;
    if (iter > 0) {
      const double prev = model.log_likelihood_history[iter - 1];
      if (ll - prev < config.tolerance * std::abs(prev)) {
        model.converged = true;
        break;
      }
    }
    if (iter + 1 == config.max_iterations) break;
    GmmModel next = model;
    if (!maximization_step(x, resp, k, config, next)) return std::nullopt;
    model = std::move(next);
  }
  return model;
}

}  // namespace

GmmModel make_gmm(std::vector<double> weights, std::vector<std::vector<double>> means,
                  std::vector<std::vector<double>> covariances, CovarianceStructure structure) {
  if (weights.empty() || weights.size() != means.size() || weights.size() != covariances.size()) {
    throw ShapeError("mixture parameter lists differ in length");
  }
  GmmModel model;
  model.dimension = means.front().size();
  model.structure = structure;
  const std::size_t d = model.dimension;
  const std::size_t cov_size = structure == CovarianceStructure::Full ? d * d : d;
  double total = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (means[k].size() != d || covariances[k].size() != cov_size) {
      throw ShapeError("component " + std::to_string(k) + " has inconsistent dimensions");
    }
    if (!(weights[k] >= 0.0)) throw ParameterError("mixture weights must be non-negative");
    total += weights[k];
  }
  if (std::abs(total - 1.0) > 1e-9) throw ParameterError("mixture weights must sum to 1");
  model.weights = std::move(weights);
  model.means = std::move(means);
  model.covariances = std::move(covariances);
  refresh_factors(model);
  return model;
}

double log_gaussian(std::span<const double> x, std::span<const double> mu,
                    std::span<const double> sigma) {
  const std::size_t d = x.size();
  if (mu.size() != d || sigma.size() != d * d) throw ShapeError("log_gaussian dimension mismatch");
  auto g = factor_component(1.0, {mu.begin(), mu.end()}, {sigma.begin(), sigma.end()},
                            CovarianceStructure::Full);
  if (!g) throw NumericalError("covariance is not positive definite");
  std::vector<double> scratch;
  return gaussian_factor_log_density(*g, x, scratch);
}

GmmModel fit_gmm(const FeatureMatrix& train, std::size_t components, const EmConfig& config) {
  if (components == 0) throw ParameterError("component count must be positive");
  if (train.rows() < components) {
    throw ParameterError("need at least as many samples as components");
  }
  std::optional<GmmModel> best;
  const std::size_t restarts = std::max<std::size_t>(1, config.restarts);
  for (std::size_t r = 0; r < restarts; ++r) {
    Rng rng(config.seed * 0x9E3779B97F4A7C15ull + r + 1);
    auto fit = run_em(train, components, config, rng);
    if (fit && (!best || fit->log_likelihood > best->log_likelihood)) best = std::move(fit);
  }
  if (!best) {
    throw DegenerateFitError("every EM restart collapsed for K = " + std::to_string(components));
  }
  return std::move(*best);
}

ScoreSet score_gmm(const GmmModel& model, const FeatureMatrix& query) {
  if (query.cols() != model.dimension) {
    throw ShapeError("query dimension " + std::to_string(query.cols()) +
                     " does not match model dimension " + std::to_string(model.dimension));
  }
  const std::size_t k = model.components();
  std::vector<double> log_dens(query.rows() * k);
  kernels::omp::component_log_densities(model.factors, query, log_dens);
  ScoreSet out;
  out.scores.resize(query.rows());
  kernels::omp::log_sum_exp_rows(log_dens, k, out.scores);
  return out;
}

double parameter_count(std::size_t components, std::size_t dimension,
                       CovarianceStructure structure) {
  const double k = static_cast<double>(components);
  const double d = static_cast<double>(dimension);
  if (structure == CovarianceStructure::Diagonal) return k * (2.0 * d) - 1.0;
  return k * (d + 0.5 * d * (d + 1.0)) - 1.0;
}

double aic(std::size_t components, std::size_t dimension, double log_likelihood,
           CovarianceStructure structure) {
  return 2.0 * parameter_count(components, dimension, structure) - 2.0 * log_likelihood;
}

AicSelection select_components(const FeatureMatrix& train, std::span<const std::size_t> grid,
                               const EmConfig& config) {
  if (grid.empty()) throw ParameterError("component grid is empty");
  for (auto k : grid) {
    if (k == 0 || k > train.rows()) {
      throw ParameterError("component count " + std::to_string(k) + " outside [1, n]");
    }
  }
  AicSelection sel;
  std::optional<GmmModel> best;
  double best_aic = std::numeric_limits<double>::infinity();
  for (auto k : grid) {
    AicRow row;
    row.components = k;
    try {
      GmmModel model = fit_gmm(train, k, config);
      row.log_likelihood = model.log_likelihood;
      row.aic = aic(k, train.cols(), model.log_likelihood, config.structure);
      if (row.aic < best_aic || (row.aic == best_aic && k < sel.selected_components)) {
        best_aic = row.aic;
        sel.selected_components = k;
        best = std::move(model);
      }
    } catch (const Error& e) {
      row.aic = std::numeric_limits<double>::quiet_NaN();
      row.log_likelihood = std::numeric_limits<double>::quiet_NaN();
      row.failure = std::string(error_kind_name(e.kind())) + ": " + e.what();
    }
    sel.tested.push_back(std::move(row));
  }
  if (!best) throw SelectionError("no component count in the grid could be fitted");
  sel.model = std::move(*best);
  return sel;
}

void to_archive(const GmmModel& model, ModelArchive& archive) {
  const std::size_t k = model.components(), d = model.dimension;
  const bool diag = model.structure == CovarianceStructure::Diagonal;
  archive.header["method"] = "gmm";
  archive.header["dimension"] = d;
  archive.header["components"] = k;
  archive.header["structure"] = diag ? "diagonal" : "full";
  archive.header["weights"] = model.weights;
  archive.header["log_likelihood"] = model.log_likelihood;
  std::vector<double> means, factors;
  for (std::size_t c = 0; c < k; ++c) {
    means.insert(means.end(), model.means[c].begin(), model.means[c].end());
    factors.insert(factors.end(), model.factors[c].factor.begin(), model.factors[c].factor.end());
  }
  archive.put("means", k, d, std::move(means));
  archive.put("cholesky", k, diag ? d : d * d, std::move(factors));
}

GmmModel gmm_from_archive(const ModelArchive& archive) {
  GmmModel model;
  const auto d = header_field<std::size_t>(archive, "dimension");
  const auto k = header_field<std::size_t>(archive, "components");
  const auto structure = header_field<std::string>(archive, "structure");
  if (structure != "full" && structure != "diagonal") {
    throw FormatError("unknown covariance structure '" + structure + "'");
  }
  const bool diag = structure == "diagonal";
  model.dimension = d;
  model.structure = diag ? CovarianceStructure::Diagonal : CovarianceStructure::Full;
  model.weights = header_field<std::vector<double>>(archive, "weights");
  model.log_likelihood = header_field<double>(archive, "log_likelihood");
  if (model.weights.size() != k) throw FormatError("weight count does not match components");
  const Block& means = archive.get("means", k, d);
  const Block& chol = archive.get("cholesky", k, diag ? d : d * d);
  const std::size_t width = diag ? d : d * d;
  for (std::size_t c = 0; c < k; ++c) {
    GaussianFactor g;
    g.diagonal = diag;
    g.mean.assign(means.values.begin() + c * d, means.values.begin() + (c + 1) * d);
    g.factor.assign(chol.values.begin() + c * width, chol.values.begin() + (c + 1) * width);
    double log_det = 0.0;
    std::vector<double> cov(width, 0.0);
    if (diag) {
      for (std::size_t i = 0; i < d; ++i) {
        log_det += 2.0 * std::log(g.factor[i]);
        cov[i] = g.factor[i] * g.factor[i];
      }
    } else {
      Eigen::Map<const RowMatrix> lower(g.factor.data(), d, d);
      Eigen::Map<RowMatrix>(cov.data(), d, d) = lower * lower.transpose();
      for (std::size_t i = 0; i < d; ++i) log_det += 2.0 * std::log(lower(i, i));
    }
    if (!std::isfinite(log_det)) throw FormatError("stored Cholesky factor is singular");
    g.log_norm = std::log(model.weights[c]) -
                 0.5 * (static_cast<double>(d) * kLog2Pi + log_det);
    model.means.push_back(g.mean);
    model.covariances.push_back(std::move(cov));
    model.factors.push_back(std::move(g));
  }
  return model;
}

}  // namespace driftguard
