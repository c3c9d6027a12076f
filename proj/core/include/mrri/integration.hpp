#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <vector>

#include "mrri/estimate.hpp"
#include "mrri/likelihood.hpp"

namespace mrri {

// Horizontal concatenation of K child score blocks (child-index order):
// row i = (psi_{i,child1}', ..., psi_{i,childK}') in R^{pK}.
struct StackedScores {
  Eigen::MatrixXd values;  // N x (p*K)
  std::vector<NodePath> child_paths;
  std::vector<ThetaParams> theta_at;  // evaluation point per child

  long n_obs() const { return values.rows(); }
  int child_count() const { return static_cast<int>(child_paths.size()); }
};

StackedScores stack_scores(const std::vector<ScoreMatrix>& children);

// Diagonal ridge ladder for near-singular variability matrices, as fractions
// of mean(diag). Escalates until the factorization succeeds.
struct RidgePolicy {
  std::vector<double> eps_ladder = {0.0, 1e-10, 1e-8, 1e-6};
};

// V = sum_i row_i row_i' (pK x pK, symmetric PSD).
Eigen::MatrixXd variability(const StackedScores& stacked);

// Factorization of V with the ridge ladder applied on failure. Throws
// SingularVariabilityError when the ladder is exhausted.
struct VariabilityFactor {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double ridge_eps = 0.0;  // relative epsilon actually applied (0 if none)
};
VariabilityFactor factor_variability(const Eigen::MatrixXd& v,
                                     const RidgePolicy& policy);

// S = [S_1, ..., S_K] in R^{p x pK}: Bartlett sensitivity of each child block
// at its supplied evaluation point, concatenated in child-index order.
Eigen::MatrixXd stacked_sensitivity(const std::vector<ScoreMatrix>& children);

// Closed-form meta-estimator: theta = J^{-1} S V^{-1} T with
// T = {S_k' theta_k}_k and J = S V^{-1} S'. All solves go through symmetric
// factorizations. Throws ConditioningError if J is not positive definite.
MetaEstimate meta_estimator(const Eigen::MatrixXd& S, const Eigen::MatrixXd& V,
                            const std::vector<ThetaParams>& child_estimates,
                            const ModelSpec& spec,
                            const RidgePolicy& policy = {});

// Layout-free variant on packed parameter vectors; returns (theta, J).
std::pair<Eigen::VectorXd, Eigen::MatrixXd> meta_estimator_packed(
    const Eigen::MatrixXd& S, const Eigen::MatrixXd& V,
    const std::vector<Eigen::VectorXd>& child_estimates,
    const RidgePolicy& policy = {});

// Optimally weighted projection of the stacked estimating functions:
// row i of the result is -S V^{-1} psi_i, the child score block for the
// next-lower resolution.
ScoreMatrix weighted_scores(const Eigen::MatrixXd& S,
                            const Eigen::MatrixXd& V,
                            const StackedScores& stacked,
                            const RidgePolicy& policy = {});

// Batch runner for independent tasks. Implementations must write results only
// through the tasks' own slots; integration results are then invariant to
// scheduling. The default (null) executor runs tasks in order.
class Executor {
 public:
  virtual ~Executor() = default;
  virtual void run(std::vector<std::function<void()>>& tasks) = 0;
  virtual int workers() const { return 1; }
};

enum class IntegrationMethod { Recursive, Sequential };

struct IntegrateOptions {
  IntegrationMethod method = IntegrationMethod::Recursive;
  FitOptions fit;
  RidgePolicy ridge;
  Executor* executor = nullptr;  // null -> serial
  bool keep_node_estimates = true;
  // Optional starting values per leaf (tests / warm restarts); default uses
  // default_init per leaf.
  std::function<ThetaParams(const DataBlock&)> init_fn;
};

struct EvalCounters {
  long leaf_fits = 0;
  long score_evals = 0;  // (leaf, evaluation point) pairs
  long reduces = 0;
};

struct IntegrateResult {
  MetaEstimate root;
  std::map<std::string, MetaEstimate> node_estimates;  // keyed by path string
  EvalCounters counters;
};

using BlockProvider = std::function<DataBlock(const NodePath&)>;

// Full multi-resolution integration over a partition tree. The recursive
// schedule re-evaluates kernel scores at each newly integrated estimate and
// re-projects through the subtree; the sequential schedule evaluates every
// weight at the resolution-M leaf estimates in a single upward pass.
IntegrateResult integrate(const PartitionTree& tree, const BlockProvider& blocks,
                          const ModelSpec& spec, const IntegrateOptions& opts);

MetaEstimate recursive_integrate(const PartitionTree& tree,
                                 const BlockProvider& blocks,
                                 const ModelSpec& spec,
                                 IntegrateOptions opts = {});
MetaEstimate sequential_integrate(const PartitionTree& tree,
                                  const BlockProvider& blocks,
                                  const ModelSpec& spec,
                                  IntegrateOptions opts = {});

// Validation oracle: direct numerical minimization of the optimal-GMM
// quadratic form Psi(theta)' V^{-1} Psi(theta) with V held fixed. Small
// instances only; certifies meta_estimator agreement.
ThetaParams gmm_oracle(
    const std::function<Eigen::VectorXd(const ThetaParams&)>& stacked_score_fn,
    const Eigen::MatrixXd& V, const ThetaParams& init, const ModelSpec& spec,
    const RidgePolicy& policy = {});

}  // namespace mrri
