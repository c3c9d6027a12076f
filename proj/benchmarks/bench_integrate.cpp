#include <benchmark/benchmark.h>

#include "bench_common.hpp"
#include "mrri/runtime.hpp"

namespace {

using namespace mrri;

void bm_integrate(benchmark::State& state, IntegrationMethod method) {
  const Dataset data = bench::stationary_dataset(10, 1000);
  const SimConfig config = preset("sim1-desk");
  const PartitionTree tree = build_partition(
      data.domain, 2, {2, 2}, PartitionStrategy::CoordinateSplit, 25);
  auto provider = make_block_provider(data, tree);
  IntegrateOptions opts;
  opts.method = method;
  opts.keep_node_estimates = false;
  for (auto _ : state) {
    benchmark::DoNotOptimize(integrate(tree, provider, config.spec, opts));
  }
}

void bm_integrate_recursive(benchmark::State& state) {
  bm_integrate(state, IntegrationMethod::Recursive);
}
void bm_integrate_sequential(benchmark::State& state) {
  bm_integrate(state, IntegrationMethod::Sequential);
}
BENCHMARK(bm_integrate_recursive)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_integrate_sequential)->Unit(benchmark::kMillisecond);

void bm_worker_pool_leaf_stage(benchmark::State& state) {
  const Dataset data = bench::stationary_dataset(10, 1000);
  const SimConfig config = preset("sim1-desk");
  const PartitionTree tree = build_partition(
      data.domain, 2, {2, 2}, PartitionStrategy::CoordinateSplit, 25);
  InMemoryDataSource source(data);
  const TaskPlan p =
      plan(tree, IntegrationMethod::Sequential, static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(execute(p, tree, source, config.spec));
  }
}
BENCHMARK(bm_worker_pool_leaf_stage)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace
