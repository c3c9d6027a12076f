#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mrri/domain.hpp"
#include "mrri/integration.hpp"
#include "mrri/model.hpp"

namespace mrri {

// Regular unit-spacing grid rectangle forming one ROI (or the whole domain
// when unlabeled).
struct GridRoi {
  std::vector<double> origin;  // lower corner, length d
  std::vector<int> shape;      // points per axis, length d
  std::optional<int> roi;
};

struct DomainConfig {
  std::vector<GridRoi> grids;
};

SpatialDomain make_grid_domain(const DomainConfig& config);

struct PartitionConfig {
  int M = 0;
  std::vector<int> branching;
  PartitionStrategy strategy = PartitionStrategy::CoordinateSplit;
  int min_leaf_size = kDefaultMinLeafSize;
};

enum class EstimatorSelection { Recursive, Sequential, Both };

struct SimConfig {
  std::string name;  // preset name or "custom"
  DomainConfig domain;
  ModelSpec spec;
  ThetaParams theta_true;
  int n_obs = 0;
  int replicates = 0;
  std::uint64_t seed = 20260808ULL;
  PartitionConfig partition;
  EstimatorSelection estimators = EstimatorSelection::Both;
  double covariate_sd = 2.0;  // continuous covariates ~ N(0, covariate_sd^2)
  bool fit_full_mle = false;  // also fit the full-domain MLE per replicate
  std::optional<std::pair<int, int>> contrast;  // component pair for Z records
  int workers = 1;
  // Dense simulation factorizes the full S x S covariance; sizes past this
  // cap raise CapacityError pointing at the desk-scale presets.
  int max_dense_s = 1600;
  FitOptions fit;
};

// Named configurations for the three simulation designs, each with a
// desk-scale variant: sim1[-desk], sim2[-desk], sim3[-desk].
SimConfig preset(const std::string& name);
std::vector<std::string> preset_names();

// Config-file interface: JSON mirroring the SimConfig field names.
std::string sim_config_to_json(const SimConfig& config);
SimConfig sim_config_from_json(const std::string& text);

struct Dataset {
  SpatialDomain domain;
  Eigen::MatrixXd Y;  // N x S
  Eigen::MatrixXd X;  // N x q
};

// Draws covariates and outcomes for one replicate. Deterministic in
// (config.seed, replicate_id); covariates are redrawn per replicate.
Dataset simulate_dataset(const SimConfig& config, int replicate_id);

// Restriction of a dataset to one partition set.
DataBlock slice_block(const Dataset& data, const PartitionTree& tree,
                      const NodePath& path);
BlockProvider make_block_provider(const Dataset& data, const PartitionTree& tree);

struct MetricsRow {
  std::string param;
  double rmse = 0.0;
  double ese = 0.0;   // (R-1)-denominator standard deviation
  double ase = 0.0;   // mean of per-replicate asymptotic SEs
  double bias = 0.0;
  double cp = 0.0;    // 95% CI coverage, in [0,1]
};

struct MetricsTable {
  std::string estimator;
  std::vector<MetricsRow> rows;
  double time_mean = 0.0;
  double time_sd = 0.0;
  int replicates_done = 0;
  int failures = 0;
};

std::string metrics_table_to_json(const MetricsTable& table);
std::string metrics_table_to_text(const MetricsTable& table);

// Raw per-replicate study records (kept so downstream checks can compare
// estimators pairwise or compute rejection rates without re-running).
struct ReplicateRecord {
  int replicate_id = 0;
  bool ok = false;
  std::string error;
  double seconds = 0.0;  // total wall time over all estimators
  std::map<std::string, double> seconds_by;  // per-estimator wall time
  // Per estimator key ("recursive", "sequential", "full-mle"): packed
  // estimate and asymptotic SE vectors.
  std::map<std::string, Eigen::VectorXd> theta;
  std::map<std::string, Eigen::VectorXd> ase;
  // Contrast record (difference, standard error) per estimator when
  // config.contrast is set.
  std::map<std::string, std::pair<double, double>> contrast;
};

struct StudyResult {
  SimConfig config;
  std::vector<ReplicateRecord> replicates;
  std::map<std::string, MetricsTable> tables;
};

std::string study_result_to_json(const StudyResult& result);
StudyResult study_result_from_json(const std::string& text);

// Full Monte Carlo study: simulate, partition, integrate, aggregate. Failures
// are recorded and excluded from aggregates, never silently dropped.
// `injector` (tests only) may throw per replicate to exercise that path.
StudyResult run_study(const SimConfig& config, Executor* executor = nullptr,
                      const std::function<void(int)>& injector = nullptr);

}  // namespace mrri
