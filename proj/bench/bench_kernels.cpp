// Parallel vs serial reference coordinate-MLP kernels on heatmap-sized grids.
// Thread count follows OMP_NUM_THREADS.
#include <benchmark/benchmark.h>

#include <random>

#include "pjat/kernels.hpp"

using namespace pjat;

namespace {

struct Setup {
  CoordMlp mlp;
  std::vector<double> cond;
  Matrix feats;
  std::vector<double> out, d_out, d_cond;

  Setup(int side, int hidden)
      : mlp("b", 64, 2, static_cast<std::size_t>(hidden)),
        cond(64),
        feats(static_cast<std::size_t>(side * side), 2),
        out(feats.rows),
        d_out(feats.rows),
        d_cond(64) {
    std::mt19937_64 rng(1);
    mlp.init(rng);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& v : cond) v = u(rng);
    for (auto& v : feats.data) v = u(rng);
    for (auto& v : d_out) v = u(rng);
  }
};

void BM_ForwardParallel(benchmark::State& state) {
  Setup s(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  for (auto _ : state) {
    kernels::coord_mlp_forward(s.mlp, s.cond, s.feats, s.out);
    benchmark::DoNotOptimize(s.out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(s.feats.rows));
}

void BM_ForwardReference(benchmark::State& state) {
  Setup s(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  for (auto _ : state) {
    kernels::reference::coord_mlp_forward(s.mlp, s.cond, s.feats, s.out);
    benchmark::DoNotOptimize(s.out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(s.feats.rows));
}

void BM_BackwardParallel(benchmark::State& state) {
  Setup s(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  for (auto _ : state) {
    kernels::coord_mlp_backward(s.mlp, s.cond, s.feats, s.d_out, s.d_cond);
    benchmark::DoNotOptimize(s.mlp.w1.grad.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(s.feats.rows));
}

void BM_BackwardReference(benchmark::State& state) {
  Setup s(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  for (auto _ : state) {
    kernels::reference::coord_mlp_backward(s.mlp, s.cond, s.feats, s.d_out, s.d_cond);
    benchmark::DoNotOptimize(s.mlp.w1.grad.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(s.feats.rows));
}

// {grid side, hidden width}: the 16x16 check grid and the 64x64 training grid
// at the pixelwise-head and scene-branch widths.
void Sizes(benchmark::internal::Benchmark* b) {
  for (int side : {16, 64}) {
    for (int hidden : {16, 64}) b->Args({side, hidden});
  }
}

}  // namespace

BENCHMARK(BM_ForwardParallel)->Apply(Sizes)->UseRealTime();
BENCHMARK(BM_ForwardReference)->Apply(Sizes)->UseRealTime();
BENCHMARK(BM_BackwardParallel)->Apply(Sizes)->UseRealTime();
BENCHMARK(BM_BackwardReference)->Apply(Sizes)->UseRealTime();

BENCHMARK_MAIN();
