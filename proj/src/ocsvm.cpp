#include "driftguard/ocsvm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <list>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace driftguard {

namespace {

// Kernel matrix access for the solver: fully materialised for small n,
// otherwise an LRU cache of rows.
class KernelRows {
 public:
  KernelRows(const ResolvedKernel& k, const FeatureMatrix& x, const OcSvmConfig& config)
      : kernel_(k), x_(x), n_(x.rows()), capacity_(std::max<std::size_t>(2, config.cache_rows)) {
    diag_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) diag_[i] = kernel_value(k, x.row(i), x.row(i));
    if (n_ <= config.full_matrix_limit) {
      full_.resize(n_ * n_);
      kernels::omp::gram_matrix(k, x, full_);
    }
  }

  double diag(std::size_t i) const { return diag_[i]; }

  std::span<const double> row(std::size_t i) {
    if (!full_.empty()) return {full_.data() + i * n_, n_};
    if (auto it = index_.find(i); it != index_.end()) {
      lru_.splice(lru_.begin(), lru_, it->second);
      return it->second->second;
    }
    if (lru_.size() >= capacity_) {
      index_.erase(lru_.back().first);
      lru_.pop_back();
    }
    std::vector<double> values(n_);
    const auto xi = x_.row(i);
#pragma omp parallel for schedule(static) num_threads(kernels::max_threads())
    for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(n_); ++j) {
      values[j] = kernel_value(kernel_, xi, x_.row(static_cast<std::size_t>(j)));
    }
    lru_.emplace_front(i, std::move(values));
    index_[i] = lru_.begin();
    return lru_.front().second;
  }

 private:
  using Entry = std::pair<std::size_t, std::vector<double>>;
  ResolvedKernel kernel_;
  const FeatureMatrix& x_;
  std::size_t n_;
  std::size_t capacity_;
  std::vector<double> diag_;
  std::vector<double> full_;
  std::list<Entry> lru_;
  std::unordered_map<std::size_t, std::list<Entry>::iterator> index_;
};

const char* kind_name(KernelKind k) {
  switch (k) {
    case KernelKind::Rbf: return "rbf";
    case KernelKind::Linear: return "linear";
    case KernelKind::Polynomial: return "polynomial";
  }
  return "?";
}

KernelKind parse_kind(const std::string& s) {
  if (s == "rbf") return KernelKind::Rbf;
  if (s == "linear") return KernelKind::Linear;
  if (s == "polynomial") return KernelKind::Polynomial;
  throw FormatError("unknown kernel kind '" + s + "'");
}

const char* gamma_mode_name(GammaMode m) {
  switch (m) {
    case GammaMode::Scale: return "scale";
    case GammaMode::Auto: return "auto";
    case GammaMode::Value: return "value";
  }
  return "?";
}

GammaMode parse_gamma_mode(const std::string& s) {
  if (s == "scale") return GammaMode::Scale;
  if (s == "auto") return GammaMode::Auto;
  if (s == "value") return GammaMode::Value;
  throw FormatError("unknown gamma mode '" + s + "'");
}

// rho from the KKT conditions: G_i = rho on free vectors, G_i <= rho at the
// upper bound, G_i >= rho at zero.
double compute_rho(std::span<const double> grad, std::span<const double> alpha, double upper) {
  double free_sum = 0.0;
  std::size_t free_count = 0;
  double lower_bound = -std::numeric_limits<double>::infinity();
  double upper_bound = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    if (alpha[i] >= upper) {
      lower_bound = std::max(lower_bound, grad[i]);
    } else if (alpha[i] <= 0.0) {
      upper_bound = std::min(upper_bound, grad[i]);
    } else {
      free_sum += grad[i];
      ++free_count;
    }
  }
  if (free_count > 0) return free_sum / static_cast<double>(free_count);
  if (std::isfinite(lower_bound) && std::isfinite(upper_bound)) {
    return 0.5 * (lower_bound + upper_bound);
  }
  return std::isfinite(lower_bound) ? lower_bound : upper_bound;
}

OcSvmModel assemble(const FeatureMatrix& train, double nu, const KernelSpec& spec,
                    const ResolvedKernel& resolved, std::span<const double> alpha,
                    std::span<const double> grad, double upper, std::size_t iterations,
                    double gap, double tolerance) {
  OcSvmModel model;
  model.rho = compute_rho(grad, alpha, upper);
  std::vector<std::size_t> sv;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    if (alpha[i] > 0.0) sv.push_back(i);
  }
  model.support_vectors = train.select_rows(sv);
  for (auto i : sv) model.alphas.push_back(alpha[i]);
  model.kernel = spec;
  model.resolved = resolved;
  model.nu = nu;
  model.n_train = train.rows();
  model.iterations = iterations;
  model.kkt_gap = gap;
  double total = 0.0;
  std::size_t negative = 0;
  for (double g : grad) {
    total += g - model.rho;
    if (g - model.rho < -tolerance) ++negative;
  }
  model.mean_training_score = total / static_cast<double>(grad.size());
  model.training_outlier_fraction =
      static_cast<double>(negative) / static_cast<double>(grad.size());
  return model;
}

}  // namespace

KernelSpec KernelSpec::rbf(GammaMode mode, double value) {
  return KernelSpec{KernelKind::Rbf, mode, value, 3, 1.0};
}

KernelSpec KernelSpec::linear() { return KernelSpec{KernelKind::Linear, GammaMode::Scale, 0.0, 1, 0.0}; }

KernelSpec KernelSpec::polynomial(int degree, double coef0) {
  return KernelSpec{KernelKind::Polynomial, GammaMode::Scale, 0.0, degree, coef0};
}

std::string describe(const KernelSpec& spec) {
  std::ostringstream os;
  os << kind_name(spec.kind);
  if (spec.kind != KernelKind::Linear) {
    os << " gamma=";
    if (spec.gamma_mode == GammaMode::Value) {
      os << spec.gamma_value;
    } else {
      os << gamma_mode_name(spec.gamma_mode);
    }
  }
  if (spec.kind == KernelKind::Polynomial) os << " degree=" << spec.degree << " coef0=" << spec.coef0;
  return os.str();
}

double resolve_gamma(const KernelSpec& spec, const FeatureMatrix& train) {
  const double d = static_cast<double>(train.cols());
  switch (spec.gamma_mode) {
    case GammaMode::Auto:
      return 1.0 / d;
    case GammaMode::Value:
      if (!(spec.gamma_value > 0.0)) throw ParameterError("kernel gamma must be positive");
      return spec.gamma_value;
    case GammaMode::Scale: {
      const double n = static_cast<double>(train.rows());
      double var_sum = 0.0;
      for (std::size_t j = 0; j < train.cols(); ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < train.rows(); ++i) mean += train(i, j);
        mean /= n;
        double var = 0.0;
        for (std::size_t i = 0; i < train.rows(); ++i) {
          const double c = train(i, j) - mean;
          var += c * c;
        }
        var_sum += var / n;
      }
      const double var = var_sum / d;
      return var > 0.0 ? 1.0 / (d * var) : 1.0;
    }
  }
  return 1.0;
}

ResolvedKernel resolve(const KernelSpec& spec, const FeatureMatrix& train) {
  ResolvedKernel k;
  k.kind = spec.kind;
  k.degree = spec.degree;
  k.coef0 = spec.coef0;
  k.gamma = spec.kind == KernelKind::Linear ? 1.0 : resolve_gamma(spec, train);
  if (spec.kind == KernelKind::Polynomial && spec.degree < 1) {
    throw ParameterError("polynomial degree must be positive");
  }
  return k;
}

double kernel_eval(const ResolvedKernel& kernel, std::span<const double> a,
                   std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("kernel arguments differ in dimension");
  if (kernel.kind != KernelKind::Linear && !(kernel.gamma > 0.0)) {
    throw ParameterError("kernel gamma must be positive");
  }
  return kernel_value(kernel, a, b);
}

OcSvmModel fit_ocsvm(const FeatureMatrix& train, double nu, const KernelSpec& kernel,
                     const OcSvmConfig& config) {
  if (!(nu > 0.0 && nu <= 1.0)) throw ParameterError("nu must lie in (0, 1]");
  const std::size_t n = train.rows();
  if (n < 2) throw ParameterError("one-class SVM needs at least 2 training samples");
  const ResolvedKernel resolved = resolve(kernel, train);
  KernelRows q(resolved, train, config);

  const double upper = 1.0 / (nu * static_cast<double>(n));
  // Uniform feasible start (1/n <= upper for every nu in (0, 1]); it treats
  // identical rows identically.
  std::vector<double> alpha(n, 1.0 / static_cast<double>(n));

  std::vector<double> grad(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (alpha[i] == 0.0) continue;
    const auto qi = q.row(i);
    for (std::size_t k = 0; k < n; ++k) grad[k] += alpha[i] * qi[k];
  }

  std::size_t iter = 0;
  double gap = std::numeric_limits<double>::infinity();
  for (; iter < config.max_iterations; ++iter) {
    // Maximal violating pair: raise the smallest gradient below the upper
    // bound, lower the largest gradient above zero.
    std::size_t up = n, down = n;
    double g_min = std::numeric_limits<double>::infinity();
    double g_max = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) {
      if (alpha[k] < upper && grad[k] < g_min) {
        g_min = grad[k];
        up = k;
      }
      if (alpha[k] > 0.0 && grad[k] > g_max) {
        g_max = grad[k];
        down = k;
      }
    }
    gap = (up == n || down == n) ? 0.0 : g_max - g_min;
    if (gap < config.tolerance) break;

    const auto q_up = q.row(up);
    const auto q_down = q.row(down);
    double curvature = q.diag(up) + q.diag(down) - 2.0 * q_up[down];
    if (curvature <= 0.0) curvature = 1e-12;
    double step = gap / curvature;
    const double room_up = upper - alpha[up];
    const double room_down = alpha[down];
    if (step >= room_up) step = room_up;
    if (step >= room_down) step = room_down;

    alpha[up] = step == room_up ? upper : alpha[up] + step;
    alpha[down] = step == room_down ? 0.0 : alpha[down] - step;
    for (std::size_t k = 0; k < n; ++k) grad[k] += step * (q_up[k] - q_down[k]);
  }

  OcSvmModel model = assemble(train, nu, kernel, resolved, alpha, grad, upper, iter, gap,
                              config.tolerance);
  if (gap >= config.tolerance) {
    std::ostringstream os;
    os << "one-class SVM did not converge after " << iter << " iterations (KKT gap " << gap << ")";
    throw ConvergenceError(os.str(), std::move(model));
  }
  return model;
}

ScoreSet score_ocsvm(const OcSvmModel& model, const FeatureMatrix& query) {
  if (query.cols() != model.support_vectors.cols()) {
    throw ShapeError("query dimension " + std::to_string(query.cols()) +
                     " does not match model dimension " +
                     std::to_string(model.support_vectors.cols()));
  }
  ScoreSet out;
  out.scores.resize(query.rows());
  kernels::omp::decision_values(model.resolved, model.support_vectors, model.alphas, model.rho,
                                query, out.scores);
  return out;
}

std::vector<GridPoint> ocsvm_grid() {
  const double nus[] = {0.01, 0.1, 0.5};
  std::vector<GridPoint> grid;
  const KernelSpec gammas[] = {
      KernelSpec::rbf(GammaMode::Scale), KernelSpec::rbf(GammaMode::Auto),
      KernelSpec::rbf(GammaMode::Value, 0.1), KernelSpec::rbf(GammaMode::Value, 1.0),
      KernelSpec::rbf(GammaMode::Value, 10.0)};
  for (const auto& k : gammas) {
    for (double nu : nus) grid.push_back({k, nu});
  }
  for (double nu : nus) grid.push_back({KernelSpec::linear(), nu});
  for (int degree : {2, 3}) {
    for (double nu : nus) grid.push_back({KernelSpec::polynomial(degree), nu});
  }
  return grid;
}

GridSearchResult grid_search_ocsvm(const FeatureMatrix& train, const OcSvmConfig& config,
                                   GridSelection selection) {
  const auto grid = ocsvm_grid();
  return grid_search_ocsvm(train, grid, config, selection);
}

GridSearchResult grid_search_ocsvm(const FeatureMatrix& train, std::span<const GridPoint> grid,
                                   const OcSvmConfig& config, GridSelection selection) {
  if (train.rows() < 2) throw ParameterError("grid search needs at least 2 training samples");

  // Held-out split for the alternative criterion: every fifth row.
  std::vector<std::size_t> fit_rows, held_rows;
  for (std::size_t i = 0; i < train.rows(); ++i) (i % 5 == 4 ? held_rows : fit_rows).push_back(i);
  const bool held_out = selection == GridSelection::HeldOutQuantile && held_rows.size() >= 1 &&
                        fit_rows.size() >= 2;

  GridSearchResult result;
  std::optional<OcSvmModel> best;
  double best_criterion = -std::numeric_limits<double>::infinity();
  for (const auto& point : grid) {
    GridTrial trial{point.kernel, point.nu, 0.0, 0.0, std::nullopt};
    try {
      OcSvmModel model = fit_ocsvm(train, point.nu, point.kernel, config);
      trial.mean_score = model.mean_training_score;
      trial.criterion = trial.mean_score;
      if (held_out) {
        const auto sub = fit_ocsvm(train.select_rows(fit_rows), point.nu, point.kernel, config);
        const auto scores = score_ocsvm(sub, train.select_rows(held_rows)).scores;
        const double outliers =
            static_cast<double>(std::count_if(scores.begin(), scores.end(),
                                              [](double s) { return s < 0.0; })) /
            static_cast<double>(scores.size());
        trial.criterion = -std::abs(outliers - point.nu);
      }
      if (!std::isfinite(trial.mean_score)) throw NumericalError("non-finite mean decision value");
      if (!best || trial.criterion > best_criterion) {
        best_criterion = trial.criterion;
        best = std::move(model);
        result.best_index = result.trials.size();
      }
    } catch (const Error& e) {
      trial.failure = std::string(error_kind_name(e.kind())) + ": " + e.what();
    }
    result.trials.push_back(std::move(trial));
  }
  if (!best) {
    std::ostringstream os;
    os << "every grid trial failed:";
    for (const auto& t : result.trials) {
      os << "\n  " << describe(t.kernel) << " nu=" << t.nu << ": " << *t.failure;
    }
    throw GridSearchError(os.str());
  }
  result.best = std::move(*best);
  result.best_mean_score = result.trials[result.best_index].mean_score;
  return result;
}

void to_archive(const OcSvmModel& model, ModelArchive& archive) {
  archive.header["method"] = "ocsvm";
  archive.header["dimension"] = model.support_vectors.cols();
  archive.header["kernel"] = {
      {"kind", kind_name(model.kernel.kind)},
      {"gamma_mode", gamma_mode_name(model.kernel.gamma_mode)},
      {"gamma_value", model.kernel.gamma_value},
      {"degree", model.kernel.degree},
      {"coef0", model.kernel.coef0},
  };
  archive.header["resolved_gamma"] = model.resolved.gamma;
  archive.header["nu"] = model.nu;
  archive.header["rho"] = model.rho;
  archive.header["n_train"] = model.n_train;
  archive.header["support_vector_count"] = model.support_vectors.rows();
  archive.put("support_vectors", model.support_vectors.rows(), model.support_vectors.cols(),
              {model.support_vectors.values().begin(), model.support_vectors.values().end()});
  archive.put("alphas", model.alphas.size(), 1, model.alphas);
}

OcSvmModel ocsvm_from_archive(const ModelArchive& archive) {
  OcSvmModel model;
  const auto d = header_field<std::size_t>(archive, "dimension");
  const auto m = header_field<std::size_t>(archive, "support_vector_count");
  try {
    const auto& k = archive.header.at("kernel");
    model.kernel.kind = parse_kind(k.at("kind").get<std::string>());
    model.kernel.gamma_mode = parse_gamma_mode(k.at("gamma_mode").get<std::string>());
    model.kernel.gamma_value = k.at("gamma_value").get<double>();
    model.kernel.degree = k.at("degree").get<int>();
    model.kernel.coef0 = k.at("coef0").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model kernel block: ") + e.what());
  }
  model.resolved = {model.kernel.kind, header_field<double>(archive, "resolved_gamma"),
                    model.kernel.degree, model.kernel.coef0};
  model.nu = header_field<double>(archive, "nu");
  model.rho = header_field<double>(archive, "rho");
  model.n_train = header_field<std::size_t>(archive, "n_train");
  model.support_vectors = FeatureMatrix(m, d, archive.get("support_vectors", m, d).values);
  model.alphas = archive.get("alphas", m, 1).values;
  return model;
}

}  // namespace driftguard
