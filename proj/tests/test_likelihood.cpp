#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "mrri/likelihood.hpp"
#include "mrri/rng.hpp"
#include "test_helpers.hpp"

using namespace mrri;

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Brute-force multivariate normal log-density via explicit inverse and
// determinant, built on the scalar covariance ops only.
double dense_mvn_loglik(const DataBlock& block, const ThetaParams& theta,
                        const ModelSpec& spec) {
  double total = 0.0;
  for (long i = 0; i < block.Y.rows(); ++i) {
    Eigen::MatrixXd c = build_cov_matrix(block.locations,
                                         block.X.row(i).transpose(), theta, spec);
    const double mu = mean_value(spec, block.X.row(i).transpose(), theta.beta);
    Eigen::VectorXd r = block.Y.row(i).transpose().array() - mu;
    total += -0.5 * (block.Y.cols() * kLog2Pi + std::log(c.determinant()) +
                     r.dot(c.inverse() * r));
  }
  return total;
}

ThetaParams random_theta(const ModelSpec& spec, const CounterRng& rng,
                         std::uint64_t salt) {
  ThetaParams t;
  t.beta = Eigen::VectorXd::Zero(spec.beta_count());
  for (int k = 0; k < spec.beta_count(); ++k)
    t.beta(k) = rng.normal(20, salt * 31 + k);
  t.gamma = Eigen::VectorXd::Zero(spec.gamma_count());
  if (spec.cov_kind == CovKind::StationaryGaussian) {
    t.gamma(0) = 0.5 + 0.3 * rng.normal(21, salt);
    t.gamma(1) = -0.7 + 0.3 * rng.normal(22, salt);
  } else {
    for (int k = 0; k < spec.tau_count(); ++k)
      t.gamma(k) = 0.5 + 0.3 * rng.normal(21, salt * 7 + k);
    for (int k = 0; k < spec.rho_block_count(); ++k) {
      const int offset = spec.tau_count() + k * spec.q;
      t.gamma(offset) = 0.6 + 0.3 * rng.normal(23, salt * 11 + k);
      for (int l = 1; l < spec.q; ++l)
        t.gamma(offset + l) = 0.2 * rng.normal(24, salt * 13 + k * spec.q + l);
    }
  }
  t.log_sigma2 = 0.3 * rng.normal(25, salt);
  return t;
}

}  // namespace

TEST_CASE("single-location block has the univariate closed form") {
  ModelSpec spec = testing::stationary_spec3();
  ThetaParams theta = testing::sim1_truth();
  const int n = 50;
  DataBlock block;
  block.X.resize(n, 3);
  block.Y.resize(n, 1);
  block.locations = {{{1.0, 1.0}, std::nullopt}};
  for (int i = 0; i < n; ++i) {
    block.X.row(i) << 1.0, 0.5 * i, -0.25 * i;
    block.Y(i, 0) = mean_value(spec, block.X.row(i).transpose(), theta.beta);
  }
  // y = mu exactly: loglik = -N/2 log(2 pi (tau^2 + sigma^2)).
  const double expected = -0.5 * n * std::log(2.0 * M_PI * 4.6);
  CHECK(log_likelihood(block, theta, spec) ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("distant locations behave as independent univariate densities") {
  ModelSpec spec = testing::stationary_spec3();
  ThetaParams theta = testing::sim1_truth();
  std::vector<Location> far{{{0.0, 0.0}, std::nullopt},
                            {{1000.0, 0.0}, std::nullopt},
                            {{0.0, 2000.0}, std::nullopt}};
  DataBlock block;
  block.locations = far;
  block.X.resize(2, 3);
  block.X << 1.0, 0.2, -0.1, 1.0, -0.4, 0.6;
  block.Y.resize(2, 3);
  block.Y << 0.1, -0.5, 1.2, 0.8, 0.3, -0.9;

  double expected = 0.0;
  const double var = 4.6;  // tau^2 + sigma^2 at zero off-diagonal correlation
  for (int i = 0; i < 2; ++i) {
    const double mu = mean_value(spec, block.X.row(i).transpose(), theta.beta);
    for (int j = 0; j < 3; ++j) {
      const double dev = block.Y(i, j) - mu;
      expected += -0.5 * (std::log(2.0 * M_PI * var) + dev * dev / var);
    }
  }
  CHECK(log_likelihood(block, theta, spec) ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("matches the dense multivariate-normal oracle") {
  CounterRng rng(99, 0);
  SUBCASE("stationary") {
    ModelSpec spec = testing::stationary_spec3();
    ThetaParams theta = testing::sim1_truth();
    DataBlock block = testing::simulated_block(testing::square_grid(2), spec,
                                               theta, 2, 42, 1.0);
    block.locations[0].coords = {1.0, 1.0};
    const double oracle = dense_mvn_loglik(block, theta, spec);
    CHECK(std::abs(log_likelihood(block, theta, spec) - oracle) <=
          1e-10 * std::max(1.0, std::abs(oracle)));
  }
  SUBCASE("nonstationary two-ROI") {
    ModelSpec spec = testing::nonstationary_spec(2);
    ThetaParams theta = testing::two_roi_truth();
    DomainConfig cfg;
    cfg.grids.push_back({{1.0, 1.0}, {1, 2}, 1});
    cfg.grids.push_back({{4.0, 1.0}, {1, 1}, 2});
    DataBlock block = testing::simulated_block(make_grid_domain(cfg), spec,
                                               theta, 2, 43, 1.0);
    const double oracle = dense_mvn_loglik(block, theta, spec);
    CHECK(std::abs(log_likelihood(block, theta, spec) - oracle) <=
          1e-10 * std::max(1.0, std::abs(oracle)));
  }
}

TEST_CASE("analytic score matches central finite differences") {
  // 50 random instances across both kernel families.
  CounterRng rng(2024, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const bool stationary = trial % 2 == 0;
    ModelSpec spec =
        stationary ? testing::stationary_spec3() : testing::nonstationary_spec(2);
    ThetaParams theta = random_theta(spec, rng, trial);
    DataBlock block =
        stationary
            ? testing::simulated_block(testing::square_grid(2), spec, theta, 4,
                                       1000 + trial, 0.7)
            : testing::simulated_block(
                  [] {
                    DomainConfig cfg;
                    cfg.grids.push_back({{1.0, 1.0}, {2, 1}, 1});
                    cfg.grids.push_back({{3.0, 2.0}, {2, 1}, 2});
                    return make_grid_domain(cfg);
                  }(),
                  spec, theta, 4, 1000 + trial, 0.7);

    const Eigen::VectorXd analytic = score(block, theta, spec);
    const Eigen::VectorXd numeric = testing::fd_gradient(block, theta, spec);
    for (int k = 0; k < analytic.size(); ++k) {
      const double rel = std::abs(analytic(k) - numeric(k)) /
                         std::max(1.0, std::abs(numeric(k)));
      INFO("trial ", trial, " component ", k, " analytic ", analytic(k),
           " numeric ", numeric(k));
      CHECK(rel <= 1e-5);
    }
  }
}

TEST_CASE("per-observation scores sum to the block score") {
  ModelSpec spec = testing::stationary_spec3();
  ThetaParams theta = testing::sim1_truth();
  DataBlock block = testing::simulated_block(testing::square_grid(3), spec,
                                             theta, 7, 77, 1.0);
  const ScoreMatrix rows = per_observation_scores(block, theta, spec);
  const Eigen::VectorXd total = score(block, theta, spec);
  const Eigen::VectorXd colsum = rows.values.colwise().sum();
  for (int k = 0; k < total.size(); ++k)
    CHECK(std::abs(colsum(k) - total(k)) <=
          1e-12 * std::max(1.0, std::abs(total(k))));
  CHECK(rows.values.rows() == 7);

  // N = 1: the single row is the score.
  DataBlock single = block;
  single.Y = block.Y.topRows(1);
  single.X = block.X.topRows(1);
  const ScoreMatrix one = per_observation_scores(single, theta, spec);
  const Eigen::VectorXd s1 = score(single, theta, spec);
  CHECK((one.values.row(0).transpose() - s1).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("likelihood and score are exactly permutation invariant") {
  ModelSpec spec = testing::nonstationary_spec(2);
  ThetaParams theta = testing::two_roi_truth();
  DataBlock block = testing::simulated_block(testing::two_roi_grid(2), spec,
                                             theta, 9, 5, 1.0);

  std::vector<int> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937 gen(3);
  std::shuffle(perm.begin(), perm.end(), gen);
  DataBlock shuffled = block;
  for (int i = 0; i < 9; ++i) {
    shuffled.Y.row(i) = block.Y.row(perm[i]);
    shuffled.X.row(i) = block.X.row(perm[i]);
  }

  CHECK(log_likelihood(block, theta, spec) ==
        log_likelihood(shuffled, theta, spec));
  CHECK((score(block, theta, spec) - score(shuffled, theta, spec))
            .lpNorm<Eigen::Infinity>() == 0.0);

  const MetaEstimate a = fit_local_mle(block, spec, default_init(block, spec));
  const MetaEstimate b =
      fit_local_mle(shuffled, spec, default_init(shuffled, spec));
  CHECK((a.theta.packed() - b.theta.packed()).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("mean-parameter scores have zero expectation at the truth") {
  ModelSpec spec = testing::stationary_spec3();
  ThetaParams theta = testing::sim1_truth();
  const int n = 10000;
  DataBlock block = testing::simulated_block(testing::square_grid(3), spec,
                                             theta, n, 11, 1.0);
  const ScoreMatrix rows = per_observation_scores(block, theta, spec);
  for (int k = 0; k < 3; ++k) {
    const double mean = rows.values.col(k).mean();
    const double sd = std::sqrt((rows.values.col(k).array() - mean).square().sum() /
                                (n - 1.0));
    CHECK(std::abs(mean) <= 4.0 * sd / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("Bartlett sensitivity basics") {
  ModelSpec spec = testing::stationary_spec3();
  ThetaParams theta = testing::sim1_truth();
  DataBlock block = testing::simulated_block(testing::square_grid(2), spec,
                                             theta, 1, 13, 1.0);
  const ScoreMatrix one = per_observation_scores(block, theta, spec);
  const Eigen::MatrixXd rank1 = sensitivity_block(one);
  const Eigen::VectorXd psi = one.values.row(0).transpose();
  CHECK((rank1 - psi * psi.transpose()).norm() == 0.0);

  // Symmetric PSD for a larger random block.
  DataBlock big = testing::simulated_block(testing::square_grid(3), spec, theta,
                                           25, 14, 1.0);
  const Eigen::MatrixXd s =
      sensitivity_block(per_observation_scores(big, theta, spec));
  CHECK((s - s.transpose()).norm() == 0.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
  CHECK(eig.eigenvalues().minCoeff() >= -1e-9 * eig.eigenvalues().maxCoeff());
}

TEST_CASE("Bartlett estimate agrees with the numerical score Jacobian") {
  ModelSpec spec = testing::stationary_spec3();
  ThetaParams truth = testing::sim1_truth();
  const int n = 5000;
  DataBlock block = testing::simulated_block(testing::square_grid(3), spec,
                                             truth, n, 21, 1.0);
  const MetaEstimate mle = fit_local_mle(block, spec, default_init(block, spec));

  // Numerical -dPsi/dtheta' at the MLE (central differences of the score).
  const int p = spec.param_count();
  const double h = 1e-5;
  Eigen::MatrixXd neg_jac(p, p);
  const Eigen::VectorXd x0 = mle.theta.packed();
  for (int k = 0; k < p; ++k) {
    Eigen::VectorXd hi = x0, lo = x0;
    hi(k) += h;
    lo(k) -= h;
    neg_jac.col(k) = -(score(block, ThetaParams::unpack(hi, spec), spec) -
                       score(block, ThetaParams::unpack(lo, spec), spec)) /
                     (2.0 * h);
  }
  const Eigen::MatrixXd bartlett =
      sensitivity_block(per_observation_scores(block, mle.theta, spec));
  const double rel = (bartlett - neg_jac).norm() / neg_jac.norm();
  CHECK(rel <= 0.05);
}

TEST_CASE("fit_local_mle restarts at the solution in at most two iterations") {
  ModelSpec spec = testing::stationary_spec3();
  ThetaParams truth = testing::sim1_truth();
  DataBlock block = testing::simulated_block(testing::square_grid(3), spec,
                                             truth, 400, 31, 1.0);
  const MetaEstimate first =
      fit_local_mle(block, spec, default_init(block, spec));
  const MetaEstimate again = fit_local_mle(block, spec, first.theta);
  CHECK(again.prov.iterations <= 2);
  CHECK((again.theta.packed() - first.theta.packed()).lpNorm<Eigen::Infinity>() <=
        1e-8);

  // At the optimum the score norm meets the scaled tolerance.
  const double ll = log_likelihood(block, first.theta, spec);
  CHECK(score(block, first.theta, spec).norm() <=
        1e-6 * std::max(1.0, std::abs(ll)));
}

TEST_CASE("simulated recovery: estimates land within 4 ASE of the truth") {
  ModelSpec spec = testing::stationary_spec3();
  ThetaParams truth = testing::sim1_truth();
  const int reps = 30;
  int all_within = 0;
  for (int rep = 0; rep < reps; ++rep) {
    DataBlock block = testing::simulated_block(testing::square_grid(5), spec,
                                               truth, 5000, 100 + rep, 2.0);
    const MetaEstimate est = fit_local_mle(block, spec, default_init(block, spec));
    const Eigen::MatrixXd cov = est.covariance();
    bool ok = true;
    for (int k = 0; k < spec.param_count(); ++k) {
      const double ase = std::sqrt(cov(k, k));
      if (std::abs(est.theta.packed()(k) - truth.packed()(k)) > 4.0 * ase)
        ok = false;
    }
    all_within += ok ? 1 : 0;
  }
  // 4 ASE per component is >99.99% coverage; demand at least 95% here.
  CHECK(all_within >= static_cast<int>(0.95 * reps));
}

TEST_CASE("constant outcomes never silently succeed") {
  ModelSpec spec = testing::stationary_spec3();
  DataBlock block;
  block.locations = testing::square_grid(2).locations();
  block.X.resize(40, 3);
  block.Y = Eigen::MatrixXd::Constant(40, 4, 2.5);
  CounterRng rng(55, 0);
  for (int i = 0; i < 40; ++i)
    block.X.row(i) << 1.0, rng.normal(0, i), rng.normal(1, i);

  FitOptions opts;
  opts.max_iter = 60;
  CHECK_THROWS_AS(fit_local_mle(block, spec, default_init(block, spec), opts),
                  Error);
}
