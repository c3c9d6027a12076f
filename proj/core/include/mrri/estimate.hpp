#pragma once

#include <Eigen/Dense>
#include <string>

#include "mrri/domain.hpp"
#include "mrri/model.hpp"

namespace mrri {

// Execution bookkeeping attached to an estimate: what produced it and how
// much work it took. Counters follow the task-plan conventions (one
// score evaluation = one (leaf, evaluation point) pair).
struct Provenance {
  long leaf_fits = 0;
  long score_evals = 0;
  long reduces = 0;
  double max_ridge_eps = 0.0;  // largest variability ridge applied anywhere
  int ridged_nodes = 0;
  int iterations = 0;  // optimizer iterations (leaf fits only)
  bool converged = true;
};

// An estimate theta-hat with its Godambe information J (sum-over-observations
// scale, so J^{-1} estimates Cov(theta-hat) directly) and provenance.
struct MetaEstimate {
  ThetaParams theta;
  Eigen::MatrixXd J;
  NodePath node_path;
  std::string method;  // "leaf-mle" | "meta" | "recursive" | "sequential"
  Provenance prov;

  // Cov(theta-hat) estimate J^{-1}, via symmetric factorization.
  Eigen::MatrixXd covariance() const;
};

std::string meta_estimate_to_json(const MetaEstimate& est, const ModelSpec& spec);
MetaEstimate meta_estimate_from_json(const std::string& text, const ModelSpec& spec);

}  // namespace mrri
