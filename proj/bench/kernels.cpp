// Serial reference vs OpenMP kernels on the pinned T=32, d=64 setup.

#include "cdnet/train.hpp"

#include <benchmark/benchmark.h>

using namespace cdnet;

namespace {

struct Fixture {
  RunConfig cfg;
  std::vector<CorpusSample> samples;
  ParamStore params;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture f;
    CorpusConfig cc;
    cc.num_samples = 64;
    f.samples = generate_corpus(cc);
    adopt_corpus_dims(f.cfg, f.samples);
    f.params = init_params(f.cfg.model, f.cfg.seed);
    return f;
  }();
  return f;
}

Exec mode(const benchmark::State& state) { return state.range(0) == 0 ? Exec::kSerial : Exec::kParallel; }

void BM_BatchGradients(benchmark::State& state) {
  const auto& f = fixture();
  std::vector<const CorpusSample*> batch;
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < f.cfg.batch_size; ++i) {
    batch.push_back(&f.samples[static_cast<std::size_t>(i)]);
    seeds.push_back(static_cast<std::uint64_t>(i));
  }
  for (auto _ : state) benchmark::DoNotOptimize(batch_gradients(f.params, f.cfg, batch, seeds, mode(state)).loss);
}

void BM_Evaluate(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(evaluate(f.params, f.cfg, f.samples, mode(state)).report.map_avg);
}

void BM_GenerateCorpus(benchmark::State& state) {
  CorpusConfig cc;
  cc.num_samples = 128;
  for (auto _ : state) benchmark::DoNotOptimize(generate_corpus(cc, mode(state)).size());
}

}  // namespace

BENCHMARK(BM_BatchGradients)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Evaluate)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GenerateCorpus)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
