#include <benchmark/benchmark.h>

#include "selfore/clustering.hpp"

using namespace selfore;

static void BM_SoftAssign(benchmark::State& state) {
  Rng rng(1);
  const auto n = state.range(0);
  const Dense2D z = gaussian_matrix(n, 200, 1.0, rng);
  const Dense2D mu = gaussian_matrix(10, 200, 1.0, rng);
  for (auto _ : state) benchmark::DoNotOptimize(soft_assign(z, mu));
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_SoftAssign)->Arg(256)->Arg(4096);

static void BM_KMeans(benchmark::State& state) {
  Rng rng(2);
  const Dense2D x = gaussian_matrix(state.range(0), 32, 1.0, rng);
  for (auto _ : state) benchmark::DoNotOptimize(kmeans(x, 10, 3, 100, 1));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_KMeans)->Arg(1000)->Arg(5000);
