#include <benchmark/benchmark.h>

#include <vector>

#include "driftguard/features.hpp"
#include "driftguard/gmm.hpp"
#include "driftguard/kernels.hpp"
#include "driftguard/rng.hpp"

namespace dg = driftguard;

namespace {

dg::FeatureMatrix random_matrix(std::size_t n, std::size_t d, std::uint64_t seed) {
  dg::Rng rng(seed);
  std::vector<double> v(n * d);
  for (auto& x : v) x = rng.normal();
  return dg::FeatureMatrix(n, d, std::move(v));
}

std::vector<double> row_norms(const dg::FeatureMatrix& m) {
  std::vector<double> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double s = 0.0;
    for (double x : m.row(i)) s += x * x;
    out[i] = std::sqrt(s);
  }
  return out;
}

template <bool Parallel>
void BM_MeanCosine(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto ref = random_matrix(n, 64, 1);
  const auto query = random_matrix(256, 64, 2);
  const auto norms = row_norms(ref);
  std::vector<double> out(query.rows());
  for (auto _ : state) {
    if constexpr (Parallel) {
      dg::kernels::omp::mean_cosine(ref, norms, query, out);
    } else {
      dg::kernels::serial::mean_cosine(ref, norms, query, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * query.rows()));
}

template <bool Parallel>
void BM_GramMatrix(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = random_matrix(n, 16, 3);
  const dg::ResolvedKernel k{dg::KernelKind::Rbf, 1.0 / 16.0, 3, 1.0};
  std::vector<double> out(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      dg::kernels::omp::gram_matrix(k, x, out);
    } else {
      dg::kernels::serial::gram_matrix(k, x, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_ComponentLogDensities(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t d = 16;
  const auto query = random_matrix(n, d, 4);
  std::vector<double> cov(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) cov[i * d + i] = 1.0;
  auto model = dg::make_gmm({0.5, 0.5}, {std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)},
                            {cov, cov});
  std::vector<double> out(n * 2);
  for (auto _ : state) {
    if constexpr (Parallel) {
      dg::kernels::omp::component_log_densities(model.factors, query, out);
    } else {
      dg::kernels::serial::component_log_densities(model.factors, query, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_MeanCosine<false>)->Name("mean_cosine/serial")->Arg(1000)->Arg(4000);
BENCHMARK(BM_MeanCosine<true>)->Name("mean_cosine/omp")->Arg(1000)->Arg(4000);
BENCHMARK(BM_GramMatrix<false>)->Name("gram_matrix/serial")->Arg(500)->Arg(2000);
BENCHMARK(BM_GramMatrix<true>)->Name("gram_matrix/omp")->Arg(500)->Arg(2000);
BENCHMARK(BM_ComponentLogDensities<false>)->Name("gmm_log_density/serial")->Arg(10000);
BENCHMARK(BM_ComponentLogDensities<true>)->Name("gmm_log_density/omp")->Arg(10000);

BENCHMARK_MAIN();
