#include "driftguard/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numbers>
#include <string>
#include <string_view>

#include "driftguard/error.hpp"

namespace driftguard {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double clamp_cosine(double c) { return std::clamp(c, -1.0, 1.0); }

std::ptrdiff_t as_index(std::size_t n) { return static_cast<std::ptrdiff_t>(n); }

}  // namespace

double kernel_value(const ResolvedKernel& k, std::span<const double> a,
                    std::span<const double> b) {
  switch (k.kind) {
    case KernelKind::Rbf: {
      double sq = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        sq += diff * diff;
      }
      return std::exp(-k.gamma * sq);
    }
    case KernelKind::Linear:
      return dot(a, b);
    case KernelKind::Polynomial:
      return std::pow(k.gamma * dot(a, b) + k.coef0, k.degree);
  }
  return 0.0;
}

double gaussian_factor_log_density(const GaussianFactor& g, std::span<const double> x,
                                   std::vector<double>& scratch) {
  const std::size_t d = g.mean.size();
  double maha = 0.0;
  if (g.diagonal) {
    for (std::size_t i = 0; i < d; ++i) {
      const double u = (x[i] - g.mean[i]) / g.factor[i];
      maha += u * u;
    }
  } else {
    // Forward substitution L y = x - mean; maha = |y|^2.
    scratch.resize(d);
    for (std::size_t i = 0; i < d; ++i) {
      const double* li = g.factor.data() + i * d;
      double acc = x[i] - g.mean[i];
      for (std::size_t j = 0; j < i; ++j) acc -= li[j] * scratch[j];
      scratch[i] = acc / li[i];
      maha += scratch[i] * scratch[i];
    }
  }
  return g.log_norm - 0.5 * maha;
}

namespace kernels {

namespace {

int g_thread_cap = 0;

int threads_for(std::size_t work_items) {
  const int cap = g_thread_cap > 0 ? g_thread_cap : omp_get_max_threads();
  return static_cast<int>(std::max<std::size_t>(1, std::min<std::size_t>(cap, work_items)));
}

template <bool Parallel>
void mean_cosine_impl(const FeatureMatrix& ref, std::span<const double> ref_norms,
                      const FeatureMatrix& query, std::span<double> out) {
  const std::ptrdiff_t m = as_index(query.rows());
  const double inv_n = 1.0 / static_cast<double>(ref.rows());
#pragma omp parallel for schedule(static) if (Parallel) num_threads(threads_for(query.rows()))
  for (std::ptrdiff_t j = 0; j < m; ++j) {
    const auto q = query.row(static_cast<std::size_t>(j));
    const double qn = norm(q);
    if (qn == 0.0) {
      out[j] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < ref.rows(); ++i) {
      acc += clamp_cosine(dot(q, ref.row(i)) / (qn * ref_norms[i]));
    }
    out[j] = acc * inv_n;
  }
}

template <bool Parallel>
void cosine_to_impl(std::span<const double> v, const FeatureMatrix& query,
                    std::span<double> out) {
  const std::ptrdiff_t m = as_index(query.rows());
  const double vn = norm(v);
#pragma omp parallel for schedule(static) if (Parallel) num_threads(threads_for(query.rows()))
  for (std::ptrdiff_t j = 0; j < m; ++j) {
    const auto q = query.row(static_cast<std::size_t>(j));
    const double qn = norm(q);
    out[j] = qn == 0.0 ? std::numeric_limits<double>::quiet_NaN()
                       : clamp_cosine(dot(q, v) / (qn * vn));
  }
}

template <bool Parallel>
void gram_matrix_impl(const ResolvedKernel& k, const FeatureMatrix& x, std::span<double> out) {
  const std::size_t n = x.rows();
#pragma omp parallel for schedule(dynamic, 16) if (Parallel) num_threads(threads_for(n))
  for (std::ptrdiff_t i = 0; i < as_index(n); ++i) {
    const auto xi = x.row(static_cast<std::size_t>(i));
    for (std::size_t j = 0; j < n; ++j) {
      out[static_cast<std::size_t>(i) * n + j] = kernel_value(k, xi, x.row(j));
    }
  }
}

template <bool Parallel>
void decision_values_impl(const ResolvedKernel& k, const FeatureMatrix& sv,
                          std::span<const double> alphas, double rho,
                          const FeatureMatrix& query, std::span<double> out) {
  const std::ptrdiff_t m = as_index(query.rows());
#pragma omp parallel for schedule(static) if (Parallel) num_threads(threads_for(query.rows()))
  for (std::ptrdiff_t j = 0; j < m; ++j) {
    const auto q = query.row(static_cast<std::size_t>(j));
    double acc = 0.0;
    for (std::size_t i = 0; i < sv.rows(); ++i) acc += alphas[i] * kernel_value(k, sv.row(i), q);
    out[j] = acc - rho;
  }
}

template <bool Parallel>
void component_log_densities_impl(std::span<const GaussianFactor> components,
                                  const FeatureMatrix& query, std::span<double> out) {
  const std::size_t kc = components.size();
  const std::ptrdiff_t m = as_index(query.rows());
#pragma omp parallel if (Parallel) num_threads(threads_for(query.rows()))
  {
    std::vector<double> scratch;
#pragma omp for schedule(static)
    for (std::ptrdiff_t j = 0; j < m; ++j) {
      const auto q = query.row(static_cast<std::size_t>(j));
      for (std::size_t c = 0; c < kc; ++c) {
        out[static_cast<std::size_t>(j) * kc + c] =
            gaussian_factor_log_density(components[c], q, scratch);
      }
    }
  }
}

template <bool Parallel>
void log_sum_exp_rows_impl(std::span<const double> in, std::size_t width,
                           std::span<double> out) {
  const std::ptrdiff_t m = as_index(out.size());
#pragma omp parallel for schedule(static) if (Parallel) num_threads(threads_for(out.size()))
  for (std::ptrdiff_t j = 0; j < m; ++j) {
    const double* row = in.data() + static_cast<std::size_t>(j) * width;
    const double top = *std::max_element(row, row + width);
    if (!std::isfinite(top)) {
      out[j] = top;
      continue;
    }
    double acc = 0.0;
    for (std::size_t c = 0; c < width; ++c) acc += std::exp(row[c] - top);
    out[j] = top + std::log(acc);
  }
}

}  // namespace

void set_max_threads(int n) { g_thread_cap = n; }

int max_threads() { return g_thread_cap > 0 ? g_thread_cap : omp_get_max_threads(); }

void apply_thread_env() {
  if (const char* env = std::getenv("DRIFTGUARD_THREADS")) {
    const std::string_view text(env);
    int n = 0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), n);
    if (ec != std::errc() || end != text.data() + text.size()) {
      throw ParameterError(std::string("DRIFTGUARD_THREADS is not an integer: ") + env);
    }
    if (n > 0) set_max_threads(n);
  }
}

#define DRIFTGUARD_KERNEL_DEFS(Parallel)                                                 \
  void mean_cosine(const FeatureMatrix& ref, std::span<const double> ref_norms,          \
                   const FeatureMatrix& query, std::span<double> out) {                  \
    mean_cosine_impl<Parallel>(ref, ref_norms, query, out);                              \
  }                                                                                      \
  void cosine_to(std::span<const double> v, const FeatureMatrix& query,                  \
                 std::span<double> out) {                                                \
    cosine_to_impl<Parallel>(v, query, out);                                             \
  }                                                                                      \
  void gram_matrix(const ResolvedKernel& k, const FeatureMatrix& x,                      \
                   std::span<double> out) {                                              \
    gram_matrix_impl<Parallel>(k, x, out);                                               \
  }                                                                                      \
  void decision_values(const ResolvedKernel& k, const FeatureMatrix& sv,                 \
                       std::span<const double> alphas, double rho,                       \
                       const FeatureMatrix& query, std::span<double> out) {              \
    decision_values_impl<Parallel>(k, sv, alphas, rho, query, out);                      \
  }                                                                                      \
  void component_log_densities(std::span<const GaussianFactor> components,               \
                               const FeatureMatrix& query, std::span<double> out) {      \
    component_log_densities_impl<Parallel>(components, query, out);                      \
  }                                                                                      \
  void log_sum_exp_rows(std::span<const double> in, std::size_t width,                   \
                        std::span<double> out) {                                         \
    log_sum_exp_rows_impl<Parallel>(in, width, out);                                     \
  }

namespace serial {
DRIFTGUARD_KERNEL_DEFS(false)
}  // namespace serial

namespace omp {
DRIFTGUARD_KERNEL_DEFS(true)
}  // namespace omp

#undef DRIFTGUARD_KERNEL_DEFS

}  // namespace kernels
}  // namespace driftguard
