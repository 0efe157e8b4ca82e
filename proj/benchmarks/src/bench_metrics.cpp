#include <benchmark/benchmark.h>

#include "selfore/metrics.hpp"
#include "selfore/numerics.hpp"

using namespace selfore;

namespace {

std::vector<int> random_labels(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<int> out(n);
  for (auto& v : out) v = static_cast<int>(uniform_index(rng, k));
  return out;
}

}  // namespace

static void BM_Metrics(benchmark::State& state) {
  Rng rng(3);
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto pred = random_labels(n, 10, rng);
  const auto gold = random_labels(n, 10, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(b_cubed(pred, gold));
    benchmark::DoNotOptimize(v_measure(pred, gold));
    benchmark::DoNotOptimize(adjusted_rand_index(pred, gold));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Metrics)->Arg(1000)->Arg(100000);
