#include <benchmark/benchmark.h>

#include "bench_common.hpp"
#include "mrri/likelihood.hpp"

namespace {

using namespace mrri;

void bm_log_likelihood(benchmark::State& state) {
  const Dataset data = bench::stationary_dataset(5, state.range(0));
  const SimConfig config = preset("sim1-desk");
  const PartitionTree tree = build_partition(
      data.domain, 0, {}, PartitionStrategy::CoordinateSplit, 25);
  const DataBlock block = slice_block(data, tree, NodePath{});
  for (auto _ : state) {
    benchmark::DoNotOptimize(log_likelihood(block, config.theta_true, config.spec));
  }
}
BENCHMARK(bm_log_likelihood)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

void bm_per_observation_scores(benchmark::State& state) {
  const Dataset data = bench::stationary_dataset(5, state.range(0));
  const SimConfig config = preset("sim1-desk");
  const PartitionTree tree = build_partition(
      data.domain, 0, {}, PartitionStrategy::CoordinateSplit, 25);
  const DataBlock block = slice_block(data, tree, NodePath{});
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        per_observation_scores(block, config.theta_true, config.spec));
  }
}
BENCHMARK(bm_per_observation_scores)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

void bm_leaf_fit(benchmark::State& state) {
  const Dataset data = bench::stationary_dataset(5, 1000);
  const SimConfig config = preset("sim1-desk");
  const PartitionTree tree = build_partition(
      data.domain, 0, {}, PartitionStrategy::CoordinateSplit, 25);
  const DataBlock block = slice_block(data, tree, NodePath{});
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        fit_local_mle(block, config.spec, default_init(block, config.spec)));
  }
}
BENCHMARK(bm_leaf_fit)->Unit(benchmark::kMillisecond);

}  // namespace
