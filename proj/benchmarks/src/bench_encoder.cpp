#include <benchmark/benchmark.h>

#include "selfore/encoder.hpp"
#include "selfore/synth.hpp"

using namespace selfore;

static void BM_EncoderForward(benchmark::State& state) {
  std::vector<MarkedSentence> sentences;
  for (const auto& raw : synthesize({.relations = 4, .per_relation = 64, .seed = 1})) {
    sentences.push_back(inject_markers(raw));
  }
  const BuiltinEncoder enc({.hidden = static_cast<std::size_t>(state.range(0))});
  for (auto _ : state) benchmark::DoNotOptimize(enc.encode(sentences));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(sentences.size()));
}
BENCHMARK(BM_EncoderForward)->Arg(64)->Arg(256);
