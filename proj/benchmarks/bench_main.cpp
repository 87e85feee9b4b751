#include <benchmark/benchmark.h>

#include "advlab/attacks.hpp"
#include "advlab/graph.hpp"
#include "advlab/losses.hpp"
#include "advlab/model.hpp"
#include "advlab/rng.hpp"

using namespace advlab;

namespace {

Tensor uniform(Shape s, std::uint64_t seed) {
  Tensor t(std::move(s));
  Rng rng(seed);
  for (auto& v : t.values()) v = rng.uniform();
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = uniform({n, n}, 1), b = uniform({n, n}, 2);
  for (auto _ : state) {
    Graph g;
    benchmark::DoNotOptimize(g.value(g.matmul(g.constant(a), g.constant(b))));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(128);

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const Tensor x = uniform({32, 4, side, side}, 1), w = uniform({8, 4, 3, 3}, 2), b = uniform({8}, 3);
  for (auto _ : state) {
    Graph g;
    const Var wv = g.leaf(w);
    const Var y = g.conv2d(g.leaf(x), wv, g.leaf(b), 1);
    g.backward(g.sum(y));
    benchmark::DoNotOptimize(g.grad(wv));
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(12)->Arg(32);

void BM_PgdStep(benchmark::State& state) {
  const Model m = Model::create(ArchSpec::conv(1, 12, 12, {4, 8}, 10), 1);
  const Tensor x = uniform({32, 1, 12, 12}, 4);
  std::vector<int> y(32);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(i % 10);
  AttackConfig cfg = attack_by_name("pgd20", 0.05);
  cfg.steps = 1;
  for (auto _ : state) benchmark::DoNotOptimize(pgd(m, y, x, cfg));
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_PgdStep);

}  // namespace
BENCHMARK_MAIN();
