#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "tprl/mlp.hpp"
#include "tprl/ppo.hpp"

using namespace tprl;

namespace {

struct Fixture {
  Mlp net;
  std::vector<double> x, y, gy, grad;
  std::size_t batch;

  explicit Fixture(std::size_t b) : net(make_mlp({kObsSize, 64, 32, 3})), batch(b) {
    std::mt19937_64 rng(1);
    init_xavier(net, rng);
    std::normal_distribution<double> n(0.0, 1.0);
    x.resize(batch * kObsSize);
    for (double& v : x) v = n(rng);
    y.resize(batch * 3);
    gy.resize(batch * 3);
    for (double& v : gy) v = n(rng);
    grad.assign(net.param_count(), 0.0);
  }
};

void BM_ForwardSerial(benchmark::State& state) {
  Fixture f(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    forward_batch_serial(f.net, f.x, f.batch, f.y);
    benchmark::DoNotOptimize(f.y.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ForwardParallel(benchmark::State& state) {
  Fixture f(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    forward_batch_parallel(f.net, f.x, f.batch, f.y);
    benchmark::DoNotOptimize(f.y.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_BackwardSerial(benchmark::State& state) {
  Fixture f(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    backward_batch_serial(f.net, f.x, f.batch, f.gy, f.grad);
    benchmark::DoNotOptimize(f.grad.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_BackwardParallel(benchmark::State& state) {
  Fixture f(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    backward_batch_parallel(f.net, f.x, f.batch, f.gy, f.grad);
    benchmark::DoNotOptimize(f.grad.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_ForwardSerial)->Arg(46)->Arg(1024)->Arg(16384);
BENCHMARK(BM_ForwardParallel)->Arg(46)->Arg(1024)->Arg(16384);
BENCHMARK(BM_BackwardSerial)->Arg(46)->Arg(1024)->Arg(16384);
BENCHMARK(BM_BackwardParallel)->Arg(46)->Arg(1024)->Arg(16384);

BENCHMARK_MAIN();
