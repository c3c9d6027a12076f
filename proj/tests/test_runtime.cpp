#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mrri/runtime.hpp"
#include "test_helpers.hpp"

using namespace mrri;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("mrri_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
  static inline int counter = 0;
};

Dataset small_dataset(int side, int n, std::uint64_t seed) {
  SimConfig config = preset("sim1-desk");
  config.domain = DomainConfig{{{{1.0, 1.0}, {side, side}, std::nullopt}}};
  config.n_obs = n;
  config.seed = seed;
  return simulate_dataset(config, 0);
}

}  // namespace

TEST_CASE("plan shapes") {
  const SpatialDomain domain = testing::square_grid(4);
  SUBCASE("M=1 K=4: one leaf-fit stage of four tasks, one reduce") {
    const PartitionTree tree =
        build_partition(domain, 1, {4}, PartitionStrategy::CoordinateSplit, 4);
    const TaskPlan p = plan(tree, IntegrationMethod::Recursive, 4);
    int leaf_fit_stages = 0, reduce_stages = 0;
    for (const auto& stage : p.stages) {
      if (stage.kind == StageKind::LeafFit) {
        ++leaf_fit_stages;
        CHECK(stage.node_paths.size() == 4);
      }
      if (stage.kind == StageKind::Reduce) ++reduce_stages;
    }
    CHECK(leaf_fit_stages == 1);
    CHECK(reduce_stages == 1);
    CHECK(p.stages.front().kind == StageKind::LeafFit);
  }
  SUBCASE("recursive beats sequential in score-eval counts at M=3") {
    const SpatialDomain big = testing::square_grid(20);
    const PartitionTree tree = build_partition(
        big, 3, {2, 2, 4}, PartitionStrategy::CoordinateSplit, 25);
    const TaskPlan rec = plan(tree, IntegrationMethod::Recursive, 2);
    const TaskPlan seq = plan(tree, IntegrationMethod::Sequential, 2);
    CHECK(rec.predicted_score_evals() == 3 * 16);
    CHECK(seq.predicted_score_evals() == 16);
    CHECK(rec.predicted_score_evals() > seq.predicted_score_evals());
    CHECK(rec.predicted_leaf_fits() == 16);
  }
}

TEST_CASE("execute: worker counts do not change the result bit") {
  const Dataset data = small_dataset(6, 400, 71);
  const SpatialDomain domain(data.domain.locations());
  const PartitionTree tree =
      build_partition(domain, 2, {2, 2}, PartitionStrategy::CoordinateSplit, 9);
  const ModelSpec spec = preset("sim1-desk").spec;

  InMemoryDataSource source(data);
  const IntegrateResult one =
      execute(plan(tree, IntegrationMethod::Recursive, 1), tree, source, spec);
  const IntegrateResult eight =
      execute(plan(tree, IntegrationMethod::Recursive, 8), tree, source, spec);
  CHECK((one.root.theta.packed() - eight.root.theta.packed())
            .lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((one.root.J - eight.root.J).lpNorm<Eigen::Infinity>() == 0.0);

  // Counters match the plan exactly.
  CHECK(one.root.prov.score_evals ==
        plan(tree, IntegrationMethod::Recursive, 1).predicted_score_evals());
  CHECK(one.root.prov.leaf_fits == 4);
}

TEST_CASE("execute: injected task failure names the node path") {
  const Dataset data = small_dataset(4, 100, 72);
  const SpatialDomain domain(data.domain.locations());
  const PartitionTree tree =
      build_partition(domain, 1, {2}, PartitionStrategy::CoordinateSplit, 8);
  const ModelSpec spec = preset("sim1-desk").spec;

  InMemoryDataSource source(data);
  ExecuteOptions opts;
  opts.fail_node_path = "2";
  try {
    execute(plan(tree, IntegrationMethod::Sequential, 2), tree, source, spec,
            opts);
    FAIL("expected an execution error");
  } catch (const Error& e) {
    const std::string what = e.what();
    CHECK(what.find("node 2") != std::string::npos);
    CHECK(what.find("injected") != std::string::npos);
  }
}

TEST_CASE("dataset file round trip is bit exact") {
  TempDir dir;
  SimConfig config = preset("sim3-desk");
  config.domain = DomainConfig{{{{1.0, 1.0}, {3, 3}, 1}, {{21.0, 21.0}, {3, 3}, 2}}};
  config.n_obs = 40;
  const Dataset data = simulate_dataset(config, 0);

  const std::string path = dir.file("data.mrri");
  write_dataset(path, data);
  const DatasetHeader h = read_dataset_header(path);
  CHECK(h.n_obs == 40);
  CHECK(h.n_locations == 18);
  CHECK(h.q == 3);
  CHECK(h.d == 2);
  CHECK(h.has_roi());

  const Dataset back = read_dataset(path);
  CHECK((back.Y - data.Y).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((back.X - data.X).lpNorm<Eigen::Infinity>() == 0.0);
  REQUIRE(back.domain.size() == data.domain.size());
  for (std::size_t j = 0; j < back.domain.size(); ++j) {
    CHECK(back.domain.location(j).coords == data.domain.location(j).coords);
    CHECK(*back.domain.location(j).roi == *data.domain.location(j).roi);
  }
}

TEST_CASE("slice read equals the in-memory slice") {
  TempDir dir;
  const Dataset data = small_dataset(4, 60, 73);
  const std::string path = dir.file("data.mrri");
  write_dataset(path, data);

  const std::vector<int> cols{3, 7, 11, 2};
  const Eigen::MatrixXd slice = read_y_slice(path, cols);
  for (std::size_t k = 0; k < cols.size(); ++k)
    CHECK((slice.col(static_cast<long>(k)) - data.Y.col(cols[k]))
              .lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("corrupted header and truncated payload raise without partial reads") {
  TempDir dir;
  const Dataset data = small_dataset(4, 20, 74);
  const std::string path = dir.file("data.mrri");
  write_dataset(path, data);

  SUBCASE("bad magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("NOTMRRID", 8);
    f.close();
    CHECK_THROWS_AS(read_dataset(path), IoError);
  }
  SUBCASE("bad version") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const std::uint32_t v = 9;
    f.write(reinterpret_cast<const char*>(&v), 4);
    f.close();
    CHECK_THROWS_AS(read_dataset_header(path), IoError);
  }
  SUBCASE("truncated payload") {
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 16);
    CHECK_THROWS_AS(read_dataset(path), IoError);
    CHECK_THROWS_AS(read_y_slice(path, {0}), IoError);
  }
}

TEST_CASE("file-backed execution matches in-memory execution") {
  TempDir dir;
  const Dataset data = small_dataset(6, 300, 75);
  const std::string path = dir.file("data.mrri");
  write_dataset(path, data);

  const SpatialDomain domain(data.domain.locations());
  const PartitionTree tree =
      build_partition(domain, 2, {2, 2}, PartitionStrategy::CoordinateSplit, 9);
  const ModelSpec spec = preset("sim1-desk").spec;

  InMemoryDataSource mem(data);
  FileDataSource file(path);
  const TaskPlan p = plan(tree, IntegrationMethod::Sequential, 2);
  const IntegrateResult a = execute(p, tree, mem, spec);
  const IntegrateResult b = execute(p, tree, file, spec);
  CHECK((a.root.theta.packed() - b.root.theta.packed())
            .lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("score-block spill round trip") {
  TempDir dir;
  const Dataset data = small_dataset(4, 50, 76);
  const SpatialDomain domain(data.domain.locations());
  const PartitionTree tree =
      build_partition(domain, 1, {2}, PartitionStrategy::CoordinateSplit, 8);
  const ModelSpec spec = preset("sim1-desk").spec;

  InMemoryDataSource source(data);
  ExecuteOptions opts;
  opts.spill_dir = dir.path.string();
  opts.keep_node_estimates = true;
  const IntegrateResult result =
      execute(plan(tree, IntegrationMethod::Sequential, 1), tree, source, spec,
              opts);

  for (int k = 1; k <= 2; ++k) {
    const std::string spill = dir.file("scores_" + std::to_string(k) + ".mrri");
    REQUIRE(std::filesystem::exists(spill));
    const Eigen::MatrixXd values = read_score_block(spill);
    const DataBlock block = slice_block(data, tree, NodePath{{k}});
    const ScoreMatrix expected = per_observation_scores(
        block, result.node_estimates.at(std::to_string(k)).theta, spec);
    CHECK((values - expected.values).lpNorm<Eigen::Infinity>() == 0.0);
  }
}

TEST_CASE("worker pool sanity") {
  CHECK_THROWS_AS(WorkerPool(0), Error);
  WorkerPool pool(3);
  std::vector<int> hits(100, 0);
  std::vector<std::function<void()>> tasks;
  for (int i = 0; i < 100; ++i) tasks.push_back([&hits, i]() { hits[i] = i + 1; });
  pool.run(tasks);
  for (int i = 0; i < 100; ++i) CHECK(hits[i] == i + 1);
}
