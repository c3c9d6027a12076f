#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mrri/runtime.hpp"
#include "mrri/simulator.hpp"
#include "test_helpers.hpp"

using namespace mrri;

TEST_CASE("presets exist with the standard design fields") {
  for (const auto& name : preset_names()) {
    const SimConfig c = preset(name);
    CHECK(c.spec.param_count() == c.theta_true.size());
  }
  const SimConfig s1 = preset("sim1");
  CHECK(make_grid_domain(s1.domain).size() == 400);
  CHECK(s1.n_obs == 10000);
  CHECK(s1.theta_true.beta(0) == doctest::Approx(0.3));
  CHECK(s1.theta_true.gamma(0) == doctest::Approx(std::log(3.0)));
  const SimConfig s2 = preset("sim2");
  CHECK(make_grid_domain(s2.domain).size() == 25600);
  const SimConfig s2d = preset("sim2-desk");
  CHECK(make_grid_domain(s2d.domain).size() == 1024);
  CHECK(s2d.partition.branching == std::vector<int>{4, 4, 4});
  const SimConfig s3 = preset("sim3");
  CHECK(make_grid_domain(s3.domain).size() == 800);
  CHECK(s3.spec.roi_count == 2);
  CHECK(s3.contrast.has_value());
  CHECK_THROWS_AS(preset("sim9"), Error);
}

TEST_CASE("capacity cap raises for the full second design") {
  SimConfig c = preset("sim2");
  CHECK_THROWS_AS(simulate_dataset(c, 0), CapacityError);
}

TEST_CASE("determinism: same seed bit-identical, replicates differ") {
  SimConfig c = preset("sim1-desk");
  c.n_obs = 50;
  const Dataset a = simulate_dataset(c, 3);
  const Dataset b = simulate_dataset(c, 3);
  CHECK((a.Y - b.Y).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((a.X - b.X).lpNorm<Eigen::Infinity>() == 0.0);
  const Dataset other = simulate_dataset(c, 4);
  CHECK((a.Y - other.Y).lpNorm<Eigen::Infinity>() > 0.0);

  SimConfig c2 = c;
  c2.seed += 1;
  const Dataset reseeded = simulate_dataset(c2, 3);
  CHECK((a.Y - reseeded.Y).lpNorm<Eigen::Infinity>() > 0.0);
}

TEST_CASE("pure-nugget limit: empirical covariance is the identity") {
  SimConfig c = preset("sim1-desk");
  c.domain = DomainConfig{{{{1.0, 1.0}, {3, 3}, std::nullopt}}};
  c.n_obs = 20000;
  c.theta_true.gamma(0) = std::log(1e-12);  // tau^2 ~ 0
  c.theta_true.log_sigma2 = 0.0;            // sigma^2 = 1
  const Dataset data = simulate_dataset(c, 0);

  Eigen::MatrixXd centered = data.Y;
  for (long i = 0; i < centered.rows(); ++i) {
    const double mu = mean_value(c.spec, data.X.row(i).transpose(),
                                 c.theta_true.beta);
    centered.row(i).array() -= mu;
  }
  const Eigen::MatrixXd emp =
      centered.transpose() * centered / static_cast<double>(c.n_obs);
  const double bound = 4.0 / std::sqrt(static_cast<double>(c.n_obs));
  for (int r = 0; r < 9; ++r)
    for (int t = 0; t < 9; ++t) {
      if (r == t) CHECK(std::abs(emp(r, t) - 1.0) <= bound * 3.0);
      else CHECK(std::abs(emp(r, t)) <= bound);
    }
}

TEST_CASE("empirical covariance matches build_cov_matrix at the truth") {
  SimConfig c = preset("sim1-desk");
  c.domain = DomainConfig{{{{1.0, 1.0}, {3, 3}, std::nullopt}}};
  c.n_obs = 50000;
  const Dataset data = simulate_dataset(c, 1);
  const SpatialDomain domain = make_grid_domain(c.domain);

  Eigen::MatrixXd centered = data.Y;
  for (long i = 0; i < centered.rows(); ++i) {
    const double mu = mean_value(c.spec, data.X.row(i).transpose(),
                                 c.theta_true.beta);
    centered.row(i).array() -= mu;
  }
  const Eigen::MatrixXd emp =
      centered.transpose() * centered / static_cast<double>(c.n_obs);
  const Eigen::MatrixXd truth = build_cov_matrix(
      domain.locations(), data.X.row(0).transpose(), c.theta_true, c.spec);
  // Var of a sample covariance entry ~ (c_rr c_tt + c_rt^2) / N.
  for (int r = 0; r < 9; ++r)
    for (int t = 0; t < 9; ++t) {
      const double se = std::sqrt(
          (truth(r, r) * truth(t, t) + truth(r, t) * truth(r, t)) / c.n_obs);
      CHECK(std::abs(emp(r, t) - truth(r, t)) <= 4.0 * se);
    }
}

TEST_CASE("marginal means are centered at every location") {
  SimConfig c = preset("sim1-desk");
  c.n_obs = 20000;
  const Dataset data = simulate_dataset(c, 2);
  const double total_sd = std::sqrt(3.0 + 1.6);
  Eigen::VectorXd dev = Eigen::VectorXd::Zero(data.Y.cols());
  for (long i = 0; i < data.Y.rows(); ++i) {
    const double mu = mean_value(c.spec, data.X.row(i).transpose(),
                                 c.theta_true.beta);
    dev += (data.Y.row(i).array() - mu).matrix().transpose();
  }
  dev /= static_cast<double>(c.n_obs);
  const double bound = 4.0 * total_sd / std::sqrt(static_cast<double>(c.n_obs));
  CHECK(dev.lpNorm<Eigen::Infinity>() <= bound);
}

TEST_CASE("two-ROI simulation draws per-observation covariances") {
  SimConfig c = preset("sim3-desk");
  c.domain = DomainConfig{{{{1.0, 1.0}, {2, 2}, 1}, {{21.0, 21.0}, {2, 2}, 2}}};
  c.n_obs = 30;
  const Dataset data = simulate_dataset(c, 0);
  CHECK(data.Y.rows() == 30);
  CHECK(data.Y.cols() == 8);
  CHECK(data.domain.has_roi());
}

TEST_CASE("run_study validates inputs and aggregates") {
  SimConfig c = preset("sim1-desk");
  c.replicates = 0;
  CHECK_THROWS_AS(run_study(c), Error);

  c = preset("sim1-desk");
  c.domain = DomainConfig{{{{1.0, 1.0}, {4, 4}, std::nullopt}}};
  c.partition = {1, {2}, PartitionStrategy::CoordinateSplit, 8};
  c.n_obs = 300;
  c.replicates = 8;
  c.estimators = EstimatorSelection::Sequential;
  const StudyResult result = run_study(c);
  REQUIRE(result.tables.count("sequential") == 1);
  const MetricsTable& table = result.tables.at("sequential");
  CHECK(table.replicates_done == 8);
  CHECK(table.failures == 0);
  REQUIRE(table.rows.size() == 6);

  // Definitional identity RMSE^2 = ESE^2 (R-1)/R + BIAS^2.
  const double r_count = table.replicates_done;
  for (const auto& row : table.rows) {
    const double lhs = row.rmse * row.rmse;
    const double rhs =
        row.ese * row.ese * (r_count - 1.0) / r_count + row.bias * row.bias;
    CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, lhs));
  }

  // JSON round trip preserves the records.
  const std::string text = study_result_to_json(result);
  const StudyResult back = study_result_from_json(text);
  CHECK(back.replicates.size() == result.replicates.size());
  CHECK(back.tables.at("sequential").rows.size() == 6);
  CHECK(back.replicates[3].theta.at("sequential") ==
        result.replicates[3].theta.at("sequential"));
}

TEST_CASE("sim config JSON round trip") {
  const SimConfig c = preset("sim3-desk");
  const SimConfig back = sim_config_from_json(sim_config_to_json(c));
  CHECK(back.name == c.name);
  CHECK(back.spec == c.spec);
  CHECK(back.theta_true.packed() == c.theta_true.packed());
  CHECK(back.n_obs == c.n_obs);
  CHECK(back.partition.branching == c.partition.branching);
  CHECK(back.partition.strategy == c.partition.strategy);
  CHECK(back.contrast == c.contrast);
  CHECK(back.domain.grids.size() == c.domain.grids.size());
  CHECK(sim_config_to_json(back) == sim_config_to_json(c));
}

TEST_CASE("run_study records injected failures without dropping them") {
  SimConfig c = preset("sim1-desk");
  c.domain = DomainConfig{{{{1.0, 1.0}, {4, 4}, std::nullopt}}};
  c.partition = {1, {2}, PartitionStrategy::CoordinateSplit, 8};
  c.n_obs = 200;
  c.replicates = 5;
  c.estimators = EstimatorSelection::Sequential;
  const StudyResult result = run_study(c, nullptr, [](int r) {
    if (r == 2) throw Error("synthetic replicate failure");
  });
  CHECK(result.tables.at("sequential").failures == 1);
  CHECK(result.tables.at("sequential").replicates_done == 4);
  CHECK_FALSE(result.replicates[2].ok);
  CHECK(result.replicates[2].error.find("synthetic") != std::string::npos);
}

TEST_CASE("run_study is deterministic across worker counts") {
  SimConfig c = preset("sim1-desk");
  c.domain = DomainConfig{{{{1.0, 1.0}, {4, 4}, std::nullopt}}};
  c.partition = {1, {2}, PartitionStrategy::CoordinateSplit, 8};
  c.n_obs = 250;
  c.replicates = 6;
  c.estimators = EstimatorSelection::Both;

  const StudyResult serial = run_study(c);
  WorkerPool pool(4);
  const StudyResult parallel = run_study(c, &pool);
  for (int r = 0; r < 6; ++r) {
    for (const std::string key : {"recursive", "sequential"}) {
      CHECK((serial.replicates[r].theta.at(key) -
             parallel.replicates[r].theta.at(key))
                .lpNorm<Eigen::Infinity>() == 0.0);
      CHECK((serial.replicates[r].ase.at(key) -
             parallel.replicates[r].ase.at(key))
                .lpNorm<Eigen::Infinity>() == 0.0);
    }
  }
}
