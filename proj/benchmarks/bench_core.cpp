#include <benchmark/benchmark.h>

#include "casr/asr_model.hpp"
#include "casr/blocks.hpp"
#include "casr/objectives.hpp"
#include "casr/ops.hpp"

using namespace casr;

namespace {

Tensor randn(Shape shape, Rng& rng, bool grad = false) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  std::vector<double> v(n);
  for (double& x : v) x = sample_normal(rng);
  return Tensor(std::move(shape), std::move(v), grad);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = randn({n, n}, rng), b = randn({n, n}, rng);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(32)->Arg(64);

void BM_ConformerForward(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  ParameterStore store;
  Rng rng(2);
  const auto block = make_conformer_block(store, "b", BlockDims{}, rng);
  const Tensor x = randn({t, BlockDims{}.d}, rng);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(conformer_block_forward(x, block));
}
BENCHMARK(BM_ConformerForward)->Arg(20)->Arg(80);

void BM_ConformerBackward(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  ParameterStore store;
  Rng rng(3);
  const auto block = make_conformer_block(store, "b", BlockDims{}, rng);
  const Tensor x = randn({t, BlockDims{}.d}, rng, true);
  for (auto _ : state) {
    store.zero_grad();
    backward(sum(square(conformer_block_forward(x, block))));
  }
}
BENCHMARK(BM_ConformerBackward)->Arg(20)->Arg(80);

void BM_CtcLoss(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  Rng rng(4);
  const Tensor lp = log_softmax(randn({t, 40}, rng));
  std::vector<TokenId> label(t / 3);
  for (auto& l : label) l = static_cast<TokenId>(1 + sample_index(rng, 39));
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(ctc_loss(lp, label, 0));
}
BENCHMARK(BM_CtcLoss)->Arg(30)->Arg(120);

void BM_GreedyDecode(benchmark::State& state) {
  AsrConfig c;
  c.vocab = 40;
  c.context_mode = ContextMode::kCrm;
  c.fusion = state.range(0) ? FusionStrategy::kAttention : FusionStrategy::kLinear;
  const AsrModel m = build_asr_model(c, 5);
  Rng rng(5);
  const Tensor z = encode(m, randn({30, c.d_raw}, rng));
  const Tensor v = randn({60, c.d}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(greedy_decode(m, z, v, 12));
  state.SetLabel(state.range(0) ? "attention" : "linear");
}
BENCHMARK(BM_GreedyDecode)->Arg(0)->Arg(1);

}  // namespace

BENCHMARK_MAIN();
