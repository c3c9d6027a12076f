#include "mrri/integration.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>

#include "mrri/optim.hpp"

namespace mrri {

namespace {

class SerialExecutor : public Executor {
 public:
  void run(std::vector<std::function<void()>>& tasks) override {
    for (auto& task : tasks) task();
  }
};

SerialExecutor& serial_executor() {
  static SerialExecutor exec;
  return exec;
}

// Runs a batch through the executor, capturing per-task failures and
// rethrowing the first one in task-index order (deterministic).
void run_batch(Executor* executor, std::vector<std::function<void()>> tasks,
               const std::vector<std::string>& contexts) {
  std::vector<std::exception_ptr> failures(tasks.size());
  std::vector<std::function<void()>> wrapped;
  wrapped.reserve(tasks.size());
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    wrapped.push_back([&, t]() {
      try {
        tasks[t]();
      } catch (...) {
        failures[t] = std::current_exception();
      }
    });
  }
  Executor* exec = executor ? executor : &serial_executor();
  exec->run(wrapped);
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    if (!failures[t]) continue;
    try {
      std::rethrow_exception(failures[t]);
    } catch (const std::exception& e) {
      throw Error(contexts[t] + ": " + e.what());
    }
  }
}

}  // namespace

StackedScores stack_scores(const std::vector<ScoreMatrix>& children) {
  if (children.empty()) throw DimensionError("no child score blocks to stack");
  const long n = children[0].values.rows();
  const int p = static_cast<int>(children[0].values.cols());
  StackedScores out;
  out.values.resize(n, static_cast<long>(p) * children.size());
  for (std::size_t k = 0; k < children.size(); ++k) {
    if (children[k].values.rows() != n)
      throw DimensionError(
          "stacked children must share the observation index (N differs)");
    if (children[k].values.cols() != p)
      throw DimensionError("stacked children must share the parameter layout");
    out.values.middleCols(static_cast<long>(k) * p, p) = children[k].values;
    out.child_paths.push_back(children[k].node_path);
    out.theta_at.push_back(children[k].theta_at);
  }
  return out;
}

Eigen::MatrixXd variability(const StackedScores& stacked) {
  const long n = stacked.values.rows();
  const long w = stacked.values.cols();
  if (n < w)
    std::cerr << "mrri: warning: variability from N=" << n
              << " observations for a " << w
              << "-dimensional stacked block; expect singularity\n";
  // Explicit rank-1 accumulation in observation order: the direct-summation
  // oracle in the tests reproduces this bit for bit.
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(w, w);
  for (long i = 0; i < n; ++i) {
    const auto row = stacked.values.row(i).transpose();
    v.noalias() += row * row.transpose();
  }
  return v;
}

VariabilityFactor factor_variability(const Eigen::MatrixXd& v,
                                     const RidgePolicy& policy) {
  const double mean_diag = v.diagonal().mean();
  for (double eps : policy.eps_ladder) {
    Eigen::MatrixXd work = v;
    if (eps > 0.0) work.diagonal().array() += eps * mean_diag;
    Eigen::LLT<Eigen::MatrixXd> llt(work);
    if (llt.info() != Eigen::Success) continue;
    // Reject factors whose pivots put the solve past usable conditioning
    // (exactly collinear blocks can slip through with a ~0 pivot).
    const double pivot_min = llt.matrixLLT().diagonal().minCoeff();
    const double pivot_max = llt.matrixLLT().diagonal().maxCoeff();
    if (pivot_min <= 1e-7 * pivot_max) continue;
    VariabilityFactor out;
    out.llt = std::move(llt);
    out.ridge_eps = eps;
    return out;
  }
  throw SingularVariabilityError(
      "variability matrix is singular after maximum ridge");
}

Eigen::MatrixXd stacked_sensitivity(const std::vector<ScoreMatrix>& children) {
  if (children.empty()) throw DimensionError("no child score blocks");
  const int p = static_cast<int>(children[0].values.cols());
  Eigen::MatrixXd s(p, static_cast<long>(p) * children.size());
  for (std::size_t k = 0; k < children.size(); ++k)
    s.middleCols(static_cast<long>(k) * p, p) = sensitivity_block(children[k]);
  return s;
}

namespace {

// Shared core: factors V once, forms J = S V^{-1} S' and, on demand, the
// meta-estimate and the projected rows -(values V^{-1} S').
struct WeightedReduction {
  Eigen::MatrixXd j;
  Eigen::MatrixXd w;  // V^{-1} S', (pK) x p
  double ridge_eps = 0.0;
  Eigen::LLT<Eigen::MatrixXd> j_llt;
};

WeightedReduction make_reduction(const Eigen::MatrixXd& s,
                                 const Eigen::MatrixXd& v,
                                 const RidgePolicy& policy) {
  if (s.cols() != v.rows())
    throw DimensionError("sensitivity/variability block shapes disagree");
  VariabilityFactor vf = factor_variability(v, policy);
  WeightedReduction red;
  red.ridge_eps = vf.ridge_eps;
  red.w = vf.llt.solve(s.transpose());
  red.j = s * red.w;
  red.j = 0.5 * (red.j + red.j.transpose()).eval();  // enforce exact symmetry
  red.j_llt.compute(red.j);
  if (red.j_llt.info() != Eigen::Success ||
      red.j_llt.matrixLLT().diagonal().minCoeff() <= 0.0)
    throw ConditioningError("Godambe information is not positive definite");
  return red;
}

Eigen::VectorXd meta_from_reduction(const WeightedReduction& red,
                                    const Eigen::MatrixXd& s,
                                    const std::vector<ThetaParams>& children) {
  const int p = static_cast<int>(red.j.rows());
  if (static_cast<long>(children.size()) * p != s.cols())
    throw DimensionError("child estimate count does not match S blocks");
  Eigen::VectorXd t(s.cols());
  for (std::size_t k = 0; k < children.size(); ++k) {
    const auto s_k = s.middleCols(static_cast<long>(k) * p, p);
    t.segment(static_cast<long>(k) * p, p) =
        s_k.transpose() * children[k].packed();
  }
  // theta = J^{-1} S V^{-1} T, with V^{-1} S' = w already available:
  // S V^{-1} T = w' T.
  return red.j_llt.solve(red.w.transpose() * t);
}

}  // namespace

std::pair<Eigen::VectorXd, Eigen::MatrixXd> meta_estimator_packed(
    const Eigen::MatrixXd& s, const Eigen::MatrixXd& v,
    const std::vector<Eigen::VectorXd>& child_estimates,
    const RidgePolicy& policy) {
  WeightedReduction red = make_reduction(s, v, policy);
  const int p = static_cast<int>(red.j.rows());
  if (static_cast<long>(child_estimates.size()) * p != s.cols())
    throw DimensionError("child estimate count does not match S blocks");
  Eigen::VectorXd t(s.cols());
  for (std::size_t k = 0; k < child_estimates.size(); ++k) {
    const auto s_k = s.middleCols(static_cast<long>(k) * p, p);
    t.segment(static_cast<long>(k) * p, p) = s_k.transpose() * child_estimates[k];
  }
  return {red.j_llt.solve(red.w.transpose() * t), red.j};
}

MetaEstimate meta_estimator(const Eigen::MatrixXd& s, const Eigen::MatrixXd& v,
                            const std::vector<ThetaParams>& child_estimates,
                            const ModelSpec& spec, const RidgePolicy& policy) {
  WeightedReduction red = make_reduction(s, v, policy);
  MetaEstimate est;
  est.theta = ThetaParams::unpack(meta_from_reduction(red, s, child_estimates), spec);
  est.J = red.j;
  est.method = "meta";
  est.prov.max_ridge_eps = red.ridge_eps;
  est.prov.ridged_nodes = red.ridge_eps > 0.0 ? 1 : 0;
  est.prov.reduces = 1;
  return est;
}

ScoreMatrix weighted_scores(const Eigen::MatrixXd& s, const Eigen::MatrixXd& v,
                            const StackedScores& stacked,
                            const RidgePolicy& policy) {
  WeightedReduction red = make_reduction(s, v, policy);
  ScoreMatrix out;
  out.values = -(stacked.values * red.w);
  if (!stacked.child_paths.empty()) {
    out.node_path = stacked.child_paths[0];
    if (!out.node_path.is_root()) out.node_path = out.node_path.parent();
  }
  if (!stacked.theta_at.empty()) out.theta_at = stacked.theta_at[0];
  return out;
}

namespace {

struct NodeReduceResult {
  MetaEstimate est;
  ScoreMatrix projected;
  double ridge_eps = 0.0;
};

// One node's reduction: stack the child blocks, build V and S, produce the
// meta-estimate (when estimates are supplied) and the optimally weighted
// projection -S V^{-1} of the stacked rows (when requested).
NodeReduceResult reduce_node(const NodePath& path,
                             const std::vector<ScoreMatrix>& child_blocks,
                             const std::vector<ThetaParams>* child_estimates,
                             const ModelSpec& spec, const RidgePolicy& policy,
                             bool project) {
  StackedScores stacked = stack_scores(child_blocks);
  Eigen::MatrixXd v = variability(stacked);
  Eigen::MatrixXd s = stacked_sensitivity(child_blocks);
  WeightedReduction red = make_reduction(s, v, policy);

  NodeReduceResult out;
  out.ridge_eps = red.ridge_eps;
  if (child_estimates) {
    out.est.theta = ThetaParams::unpack(
        meta_from_reduction(red, s, *child_estimates), spec);
    out.est.J = red.j;
    out.est.node_path = path;
    out.est.method = "meta";
    out.est.prov.max_ridge_eps = red.ridge_eps;
    out.est.prov.ridged_nodes = red.ridge_eps > 0.0 ? 1 : 0;
  }
  if (project) {
    out.projected.values = -(stacked.values * red.w);
    out.projected.node_path = path;
    if (child_estimates && !child_estimates->empty())
      out.projected.theta_at = child_estimates->front();
  }
  return out;
}

std::vector<NodePath> children_of(const PartitionTree& tree,
                                  const NodePath& path) {
  std::vector<NodePath> out;
  const int k = tree.children_of(path.resolution());
  for (int c = 1; c <= k; ++c) out.push_back(path.child(c));
  return out;
}

}  // namespace

IntegrateResult integrate(const PartitionTree& tree, const BlockProvider& blocks,
                          const ModelSpec& spec, const IntegrateOptions& opts) {
  const int M = tree.resolutions();
  const std::string method_name =
      opts.method == IntegrationMethod::Recursive ? "recursive" : "sequential";
  IntegrateResult result;

  const std::vector<NodePath> leaves = tree.leaf_paths();
  const std::size_t n_leaves = leaves.size();

  // Leaf data blocks.
  std::vector<DataBlock> leaf_blocks(n_leaves);
  {
    std::vector<std::function<void()>> tasks;
    std::vector<std::string> contexts;
    for (std::size_t t = 0; t < n_leaves; ++t) {
      tasks.push_back([&, t]() { leaf_blocks[t] = blocks(leaves[t]); });
      contexts.push_back("node " + leaves[t].str() + " data load");
    }
    run_batch(opts.executor, std::move(tasks), contexts);
  }

  // Leaf MLE fits.
  std::vector<MetaEstimate> leaf_fits(n_leaves);
  {
    std::vector<std::function<void()>> tasks;
    std::vector<std::string> contexts;
    for (std::size_t t = 0; t < n_leaves; ++t) {
      tasks.push_back([&, t]() {
        const ThetaParams init = opts.init_fn ? opts.init_fn(leaf_blocks[t])
                                              : default_init(leaf_blocks[t], spec);
        leaf_fits[t] = fit_local_mle(leaf_blocks[t], spec, init, opts.fit);
      });
      contexts.push_back("node " + leaves[t].str() + " leaf-fit");
    }
    run_batch(opts.executor, std::move(tasks), contexts);
    result.counters.leaf_fits = static_cast<long>(n_leaves);
  }

  double max_ridge = 0.0;
  int ridged_nodes = 0;
  if (opts.keep_node_estimates) {
    for (std::size_t t = 0; t < n_leaves; ++t)
      result.node_estimates[leaves[t].str()] = leaf_fits[t];
  }

  // Evaluates every leaf's per-observation scores at the supplied points.
  auto eval_leaves = [&](const std::vector<ThetaParams>& points) {
    std::vector<ScoreMatrix> out(n_leaves);
    std::vector<std::function<void()>> tasks;
    std::vector<std::string> contexts;
    for (std::size_t t = 0; t < n_leaves; ++t) {
      tasks.push_back([&, t]() {
        out[t] = per_observation_scores(leaf_blocks[t], points[t], spec);
      });
      contexts.push_back("node " + leaves[t].str() + " score-eval");
    }
    run_batch(opts.executor, std::move(tasks), contexts);
    result.counters.score_evals += static_cast<long>(n_leaves);
    return out;
  };

  if (M == 0) {
    // Root-only tree: the integrated estimator is the full-domain MLE with
    // its Bartlett information.
    std::vector<ScoreMatrix> scores =
        eval_leaves({leaf_fits[0].theta});
    result.root = leaf_fits[0];
    result.root.J = sensitivity_block(scores[0]);
    result.root.method = method_name;
    result.root.prov.leaf_fits = result.counters.leaf_fits;
    result.root.prov.score_evals = result.counters.score_evals;
    result.root.prov.reduces = 0;
    result.node_estimates["0"] = result.root;
    return result;
  }

  // Scores at the leaves' own MLEs (pass for resolution M-1; also the fixed
  // weights of the sequential schedule).
  std::vector<ThetaParams> own_points(n_leaves);
  for (std::size_t t = 0; t < n_leaves; ++t) own_points[t] = leaf_fits[t].theta;
  std::vector<ScoreMatrix> base_scores = eval_leaves(own_points);

  std::map<NodePath, ScoreMatrix> leaf_score_by_path;
  std::map<NodePath, MetaEstimate> estimates;
  for (std::size_t t = 0; t < n_leaves; ++t) {
    leaf_score_by_path[leaves[t]] = base_scores[t];
    estimates[leaves[t]] = leaf_fits[t];
  }

  // Reduction pass at one resolution. `blocks_by_path` maps child path ->
  // score block; updated with this level's projections when `project`.
  auto reduce_level = [&](int m, std::map<NodePath, ScoreMatrix>& blocks_by_path,
                          bool project) {
    const std::vector<NodePath> nodes = tree.paths_at_resolution(m);
    std::vector<NodeReduceResult> outs(nodes.size());
    std::vector<std::function<void()>> tasks;
    std::vector<std::string> contexts;
    for (std::size_t t = 0; t < nodes.size(); ++t) {
      tasks.push_back([&, t]() {
        const auto kids = children_of(tree, nodes[t]);
        std::vector<ScoreMatrix> child_blocks;
        std::vector<ThetaParams> child_estimates;
        for (const auto& kid : kids) {
          child_blocks.push_back(blocks_by_path.at(kid));
          child_estimates.push_back(estimates.at(kid).theta);
        }
        outs[t] = reduce_node(nodes[t], child_blocks, &child_estimates, spec,
                              opts.ridge, project);
      });
      contexts.push_back("node " + nodes[t].str() + " reduce");
    }
    run_batch(opts.executor, std::move(tasks), contexts);
    result.counters.reduces += static_cast<long>(nodes.size());

    std::map<NodePath, ScoreMatrix> projected;
    for (std::size_t t = 0; t < nodes.size(); ++t) {
      estimates[nodes[t]] = outs[t].est;
      if (opts.keep_node_estimates)
        result.node_estimates[nodes[t].str()] = outs[t].est;
      max_ridge = std::max(max_ridge, outs[t].ridge_eps);
      if (outs[t].ridge_eps > 0.0) ++ridged_nodes;
      if (project) projected[nodes[t]] = std::move(outs[t].projected);
    }
    blocks_by_path = std::move(projected);
  };

  if (opts.method == IntegrationMethod::Sequential) {
    // Single upward pass: every weight evaluated at the leaf estimates.
    std::map<NodePath, ScoreMatrix> blocks_by_path = leaf_score_by_path;
    for (int m = M - 1; m >= 0; --m) reduce_level(m, blocks_by_path, m > 0);
  } else {
    // Recursive schedule: resolution M-1 reduces the leaf blocks directly;
    // each deeper descent refreshes the kernel scores at the enclosing
    // resolution-(m+1) estimates and re-projects through the subtree.
    {
      std::map<NodePath, ScoreMatrix> blocks_by_path = leaf_score_by_path;
      reduce_level(M - 1, blocks_by_path, false);
    }
    for (int m = M - 2; m >= 0; --m) {
      // Refresh every leaf at the estimate of its resolution-(m+1) ancestor.
      std::vector<ThetaParams> points(n_leaves);
      for (std::size_t t = 0; t < n_leaves; ++t)
        points[t] = estimates.at(leaves[t].ancestor(m + 1)).theta;
      std::vector<ScoreMatrix> refreshed = eval_leaves(points);
      std::map<NodePath, ScoreMatrix> fresh_by_path;
      for (std::size_t t = 0; t < n_leaves; ++t)
        fresh_by_path[leaves[t]] = std::move(refreshed[t]);

      // Project upward through each subtree below resolution m+1, all weights
      // at the subtree's enclosing estimate (implicit in the refreshed rows).
      for (int level = M - 1; level > m; --level) {
        const std::vector<NodePath> nodes = tree.paths_at_resolution(level);
        std::vector<NodeReduceResult> outs(nodes.size());
        std::vector<std::function<void()>> tasks;
        std::vector<std::string> contexts;
        for (std::size_t t = 0; t < nodes.size(); ++t) {
          tasks.push_back([&, t]() {
            const auto kids = children_of(tree, nodes[t]);
            std::vector<ScoreMatrix> child_blocks;
            for (const auto& kid : kids)
              child_blocks.push_back(fresh_by_path.at(kid));
            outs[t] = reduce_node(nodes[t], child_blocks, nullptr, spec,
                                  opts.ridge, true);
          });
          contexts.push_back("node " + nodes[t].str() + " project");
        }
        run_batch(opts.executor, std::move(tasks), contexts);
        std::map<NodePath, ScoreMatrix> next;
        for (std::size_t t = 0; t < nodes.size(); ++t) {
          max_ridge = std::max(max_ridge, outs[t].ridge_eps);
          if (outs[t].ridge_eps > 0.0) ++ridged_nodes;
          next[nodes[t]] = std::move(outs[t].projected);
        }
        fresh_by_path = std::move(next);
      }
      reduce_level(m, fresh_by_path, false);
    }
  }

  result.root = estimates.at(NodePath{});
  result.root.method = method_name;
  result.root.prov.leaf_fits = result.counters.leaf_fits;
  result.root.prov.score_evals = result.counters.score_evals;
  result.root.prov.reduces = result.counters.reduces;
  result.root.prov.max_ridge_eps = max_ridge;
  result.root.prov.ridged_nodes = ridged_nodes;
  if (opts.keep_node_estimates)
    result.node_estimates["0"] = result.root;
  return result;
}

MetaEstimate recursive_integrate(const PartitionTree& tree,
                                 const BlockProvider& blocks,
                                 const ModelSpec& spec, IntegrateOptions opts) {
  opts.method = IntegrationMethod::Recursive;
  return integrate(tree, blocks, spec, opts).root;
}

MetaEstimate sequential_integrate(const PartitionTree& tree,
                                  const BlockProvider& blocks,
                                  const ModelSpec& spec, IntegrateOptions opts) {
  opts.method = IntegrationMethod::Sequential;
  return integrate(tree, blocks, spec, opts).root;
}

ThetaParams gmm_oracle(
    const std::function<Eigen::VectorXd(const ThetaParams&)>& stacked_score_fn,
    const Eigen::MatrixXd& v, const ThetaParams& init, const ModelSpec& spec,
    const RidgePolicy& policy) {
  VariabilityFactor vf = factor_variability(v, policy);
  auto objective = [&](const Eigen::VectorXd& x) {
    try {
      const Eigen::VectorXd psi = stacked_score_fn(ThetaParams::unpack(x, spec));
      return psi.dot(vf.llt.solve(psi));
    } catch (const NonPdError&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  NelderMeadOptions opts;
  opts.initial_step = 0.05;
  opts.f_tol = 1e-13;
  opts.x_tol = 1e-8;
  opts.max_evals = 100000;
  opts.restarts = 2;
  OptimResult res = nelder_mead_minimize(objective, init.packed(), opts);
  if (!res.converged)
    throw NonConvergenceError("GMM objective minimization did not converge",
                              std::vector<double>(res.x.data(),
                                                  res.x.data() + res.x.size()),
                              0.0, res.iterations);
  return ThetaParams::unpack(res.x, spec);
}

}  // namespace mrri
