#pragma once

// Row-parallel compute kernels shared by the scorers.
//
// Every kernel exists twice with identical signatures: `serial::` is the
// reference implementation used by tests, `omp::` parallelises the outer loop
// over rows with OpenMP. Each output element is computed by the same sequence
// of floating-point operations in both variants, so results are bit-identical.

#include <cstddef>
#include <span>
#include <vector>

#include "driftguard/features.hpp"

namespace driftguard {

enum class KernelKind { Rbf, Linear, Polynomial };

// Kernel with gamma already resolved against training data.
struct ResolvedKernel {
  KernelKind kind = KernelKind::Rbf;
  double gamma = 1.0;
  int degree = 3;
  double coef0 = 1.0;
};

double kernel_value(const ResolvedKernel& k, std::span<const double> a,
                    std::span<const double> b);

// One weighted Gaussian in factored form. `factor` is the lower Cholesky
// factor of the covariance (d x d, row-major) or, when `diagonal`, the d
// standard deviations. `log_norm` = log(weight) - (d log(2 pi) + log det) / 2.
struct GaussianFactor {
  std::vector<double> mean;
  std::vector<double> factor;
  bool diagonal = false;
  double log_norm = 0.0;
};

// log(weight * N(x | mean, cov)) for a single component.
double gaussian_factor_log_density(const GaussianFactor& g, std::span<const double> x,
                                   std::vector<double>& scratch);

namespace kernels {

// Upper bound on OpenMP worker threads; <= 0 restores the runtime default.
void set_max_threads(int n);
int max_threads();

// Reads DRIFTGUARD_THREADS and applies it when set to a positive integer;
// throws ParameterError when the variable is set to something else.
void apply_thread_env();

#define DRIFTGUARD_KERNEL_DECLS                                                   \
  /* out[j] = mean_i cos(query_j, ref_i); ref_norms are the row norms of ref. */  \
  void mean_cosine(const FeatureMatrix& ref, std::span<const double> ref_norms,   \
                   const FeatureMatrix& query, std::span<double> out);            \
  /* out[j] = cos(query_j, v). */                                                  \
  void cosine_to(std::span<const double> v, const FeatureMatrix& query,           \
                 std::span<double> out);                                           \
  /* Full n x n kernel matrix, row-major. */                                       \
  void gram_matrix(const ResolvedKernel& k, const FeatureMatrix& x,               \
                   std::span<double> out);                                         \
  /* out[j] = sum_i alpha_i K(sv_i, query_j) - rho. */                             \
  void decision_values(const ResolvedKernel& k, const FeatureMatrix& sv,          \
                       std::span<const double> alphas, double rho,                \
                       const FeatureMatrix& query, std::span<double> out);        \
  /* out[j * K + c] = log(pi_c N(query_j | c)). */                                  \
  void component_log_densities(std::span<const GaussianFactor> components,        \
                               const FeatureMatrix& query, std::span<double> out); \
  /* out[j] = log sum_c exp(in[j * width + c]). */                                 \
  void log_sum_exp_rows(std::span<const double> in, std::size_t width,            \
                        std::span<double> out);

namespace serial {
DRIFTGUARD_KERNEL_DECLS
}  // namespace serial

namespace omp {
DRIFTGUARD_KERNEL_DECLS
}  // namespace omp

#undef DRIFTGUARD_KERNEL_DECLS

}  // namespace kernels
}  // namespace driftguard
