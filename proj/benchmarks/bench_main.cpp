#include "cdlm/cd.hpp"
#include "cdlm/di.hpp"
#include "cdlm/model.hpp"
#include "cdlm/shapley.hpp"
#include "cdlm/synth.hpp"
#include "cdlm/trainer.hpp"

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

namespace {

using namespace cdlm;

std::vector<TokenId> tokens(std::size_t vocab, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<TokenId> pick(0, static_cast<TokenId>(vocab - 1));
  std::vector<TokenId> out(n);
  for (auto& t : out) t = pick(rng);
  return out;
}

void BM_Forward(benchmark::State& state) {
  const auto h = static_cast<std::size_t>(state.range(0));
  const ModelParams p = init_params(1, Dims{203, h, h});
  const auto seq = tokens(203, 35, 2);
  for (auto _ : state) benchmark::DoNotOptimize(forward(p, seq));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(seq.size()));
}
BENCHMARK(BM_Forward)->Arg(20)->Arg(100)->Arg(400);

void BM_Bptt(benchmark::State& state) {
  const auto h = static_cast<std::size_t>(state.range(0));
  const ModelParams p = init_params(1, Dims{203, h, h});
  const auto window = tokens(203, 35, 3);
  const LstmState zero = LstmState::zeros(static_cast<Eigen::Index>(h));
  for (auto _ : state) benchmark::DoNotOptimize(bptt_gradients(p, window, zero));
}
BENCHMARK(BM_Bptt)->Arg(20)->Arg(100);

void BM_BpttBatch(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const ModelParams p = init_params(1, Dims{203, 100, 100});
  std::vector<std::vector<TokenId>> windows;
  for (std::size_t b = 0; b < batch; ++b) windows.push_back(tokens(203, 35, 10 + b));
  const BatchState zero = BatchState::zeros(100, static_cast<Eigen::Index>(batch));
  for (auto _ : state) benchmark::DoNotOptimize(bptt_gradients_batch(p, windows, zero));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch * 34));
}
BENCHMARK(BM_BpttBatch)->Arg(5)->Arg(20);

void BM_Shapley(benchmark::State& state) {
  std::vector<double> y{0.3, -1.2, 0.7, 0.1};
  for (auto _ : state) benchmark::DoNotOptimize(shapley_linearize(Activation::sigmoid, y));
}
BENCHMARK(BM_Shapley);

void BM_ShapleyArrays(benchmark::State& state) {
  std::vector<Eigen::ArrayXd> y(4, Eigen::ArrayXd::Random(100));
  for (auto _ : state) benchmark::DoNotOptimize(shapley_linearize(Activation::tanh, y));
}
BENCHMARK(BM_ShapleyArrays);

void BM_ContextualDecomposition(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  const ModelParams p = init_params(1, Dims{203, 100, 100});
  const auto seq = tokens(203, len, 4);
  const FocusSpec focus = FocusSpec::range(1, 2);
  for (auto _ : state) benchmark::DoNotOptimize(contextual_decomposition(p, seq, focus));
}
BENCHMARK(BM_ContextualDecomposition)->Arg(12)->Arg(35);

void BM_Di(benchmark::State& state) {
  const ModelParams p = init_params(1, Dims{203, 100, 100});
  const auto seq = tokens(203, 12, 5);
  for (auto _ : state) benchmark::DoNotOptimize(di(p, seq, FocusSpec({2}), FocusSpec({3, 4})));
}
BENCHMARK(BM_Di);

void BM_SynthCorpus(benchmark::State& state) {
  SynthSpec spec = SynthSpec::desk_scale();
  spec.setting = ScaffoldSetting::familiar;
  spec.k = 4;
  for (auto _ : state) benchmark::DoNotOptimize(generate_training(spec));
}
BENCHMARK(BM_SynthCorpus)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
