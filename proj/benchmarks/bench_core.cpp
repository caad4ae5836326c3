#include <benchmark/benchmark.h>

#include <vector>

#include "fedwarm/experiment.hpp"

using namespace fedwarm;

namespace {

Batch make_batch(std::size_t n, std::size_t dim, std::size_t classes) {
  auto rng = derive_stream(1, {0, 0, 0});
  Batch b;
  b.input_dim = dim;
  std::vector<double> x(dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (double& v : x) v = rng.normal();
    b.push_back(x, static_cast<std::uint32_t>(rng.index(classes)));
  }
  return b;
}

void BM_SoftmaxGrad(benchmark::State& state) {
  const ModelSpec spec{ModelKind::softmax_linear, 32, 10, 0};
  const auto batch = make_batch(static_cast<std::size_t>(state.range(0)), 32, 10);
  const ParamVector w(param_count(spec), 0.01);
  for (auto _ : state) benchmark::DoNotOptimize(grad(spec, w, batch));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SoftmaxGrad)->Arg(32)->Arg(256);

void BM_MlpGrad(benchmark::State& state) {
  const ModelSpec spec{ModelKind::mlp1, 32, 10, 64};
  const auto batch = make_batch(static_cast<std::size_t>(state.range(0)), 32, 10);
  ParamVector w(param_count(spec));
  auto rng = derive_stream(2, {0, 0, 0});
  for (double& v : w) v = 0.1 * rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(grad(spec, w, batch));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MlpGrad)->Arg(32)->Arg(256);

void BM_Aggregate(benchmark::State& state) {
  const auto clients = static_cast<std::size_t>(state.range(0));
  std::vector<WeightedUpdate> updates;
  for (std::size_t k = 0; k < clients; ++k) {
    updates.push_back({clients - k, ParamVector(10000, static_cast<double>(k)), 1.0 + static_cast<double>(k)});
  }
  for (auto _ : state) benchmark::DoNotOptimize(aggregate(updates));
}
BENCHMARK(BM_Aggregate)->Arg(10)->Arg(100);

void BM_LocalTrain(benchmark::State& state) {
  const ModelSpec spec{ModelKind::softmax_linear, 32, 10, 0};
  const auto data = make_batch(200, 32, 10);
  const ParamVector w(param_count(spec));
  const auto ctx = ServerCtx::start(w, Algorithm::fedavg, 0);
  LocalHyper h;
  h.steps = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    auto rng = derive_stream(3, {0, 0, 0});
    benchmark::DoNotOptimize(local_train(spec, w, ctx, data, h, {}, rng));
  }
}
BENCHMARK(BM_LocalTrain)->Arg(5)->Arg(20);

void BM_Session(benchmark::State& state) {
  RunConfig c;
  c.dataset = "gaussian";
  c.num_sessions = 2;
  c.num_rounds_pilot = 10;
  c.num_rounds_actual = 10;
  c.threads = static_cast<std::size_t>(state.range(0));
  const auto ex = build_experiment(c);
  for (auto _ : state) benchmark::DoNotOptimize(run_training(ex.plan));
}
BENCHMARK(BM_Session)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
