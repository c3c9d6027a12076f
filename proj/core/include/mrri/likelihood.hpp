#pragma once

#include <Eigen/Dense>
#include <memory>
#include <vector>

#include "mrri/domain.hpp"
#include "mrri/estimate.hpp"
#include "mrri/model.hpp"

namespace mrri {

// Outcomes and covariates restricted to one partition set. Row i of Y aligns
// with row i of X across every block (shared observation index).
struct DataBlock {
  Eigen::MatrixXd Y;  // N x S_block
  Eigen::MatrixXd X;  // N x q
  std::vector<Location> locations;
  NodePath node_path;

  long n_obs() const { return Y.rows(); }
  long block_size() const { return Y.cols(); }
};

// Per-observation score contributions: row i = psi_i(theta)'. Column sums
// equal the block score.
struct ScoreMatrix {
  Eigen::MatrixXd values;  // N x p
  ThetaParams theta_at;
  NodePath node_path;
};

double log_likelihood(const DataBlock& block, const ThetaParams& theta,
                      const ModelSpec& spec);

// Analytic gradient of log_likelihood. Equals the column sums of
// per_observation_scores by construction (same code path).
Eigen::VectorXd score(const DataBlock& block, const ThetaParams& theta,
                      const ModelSpec& spec);

ScoreMatrix per_observation_scores(const DataBlock& block,
                                   const ThetaParams& theta,
                                   const ModelSpec& spec);

// Bartlett estimate of the block sensitivity: sum_i psi_i psi_i' (p x p,
// symmetric PSD). Valid at any consistent evaluation point.
Eigen::MatrixXd sensitivity_block(const ScoreMatrix& scores);

struct FitOptions {
  double grad_tol = 1e-6;  // scaled: |grad| <= grad_tol * max(1, |loglik|)
  double step_tol = 1e-9;
  int max_iter = 500;
};

// Method-of-moments starting point: beta by least squares on the location
// means, total residual variance split 80/20 between tau^2 and sigma^2, range
// from the median pairwise squared distance, ROI coefficients zero except the
// intercept.
ThetaParams default_init(const DataBlock& block, const ModelSpec& spec);

// Quasi-Newton ascent of the block log-likelihood using the analytic score.
// Returns the MLE with its Bartlett information (J = sum_i psi psi' at the
// optimum). Throws NonConvergenceError (carrying the best iterate) past
// max_iter and NonPdError for unrecoverable factorization failures.
MetaEstimate fit_local_mle(const DataBlock& block, const ModelSpec& spec,
                           const ThetaParams& init, const FitOptions& opts = {});

}  // namespace mrri
