#include <benchmark/benchmark.h>

#include "bench_common.hpp"
#include "mrri/model.hpp"

namespace {

using namespace mrri;

void bm_build_cov_stationary(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const SpatialDomain domain = make_grid_domain(
      DomainConfig{{{{1.0, 1.0}, {side, side}, std::nullopt}}});
  const SimConfig config = preset("sim1-desk");
  const Eigen::VectorXd x = Eigen::VectorXd::Ones(3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        build_cov_matrix(domain.locations(), x, config.theta_true, config.spec));
  }
}
BENCHMARK(bm_build_cov_stationary)->Arg(10)->Arg(20)->Unit(benchmark::kMicrosecond);

void bm_factorize_spd(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const SpatialDomain domain = make_grid_domain(
      DomainConfig{{{{1.0, 1.0}, {side, side}, std::nullopt}}});
  const SimConfig config = preset("sim1-desk");
  const Eigen::MatrixXd c = build_cov_matrix(
      domain.locations(), Eigen::VectorXd::Ones(3), config.theta_true, config.spec);
  for (auto _ : state) {
    benchmark::DoNotOptimize(factorize_spd(c));
  }
}
BENCHMARK(bm_factorize_spd)->Arg(10)->Arg(20)->Unit(benchmark::kMicrosecond);

}  // namespace
