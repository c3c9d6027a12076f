#include "mrri/runtime.hpp"

#include <atomic>
#include <thread>

namespace mrri {

WorkerPool::WorkerPool(int workers) : workers_(workers) {
  if (workers < 1) throw Error("worker count must be >= 1");
}

void WorkerPool::run(std::vector<std::function<void()>>& tasks) {
  if (tasks.empty()) return;
  if (workers_ == 1 || tasks.size() == 1) {
    for (auto& task : tasks) task();
    return;
  }
  std::atomic<std::size_t> next{0};
  const int n_threads = std::min<int>(workers_, static_cast<int>(tasks.size()));
  std::vector<std::thread> threads;
  threads.reserve(n_threads);
  for (int t = 0; t < n_threads; ++t) {
    threads.emplace_back([&]() {
      for (;;) {
        const std::size_t idx = next.fetch_add(1);
        if (idx >= tasks.size()) return;
        tasks[idx]();
      }
    });
  }
  for (auto& thread : threads) thread.join();
}

long TaskPlan::predicted_leaf_fits() const {
  long n = 0;
  for (const auto& stage : stages)
    if (stage.kind == StageKind::LeafFit)
      n += static_cast<long>(stage.node_paths.size());
  return n;
}

long TaskPlan::predicted_score_evals() const {
  long n = 0;
  for (const auto& stage : stages)
    if (stage.kind == StageKind::ScoreEval)
      n += static_cast<long>(stage.node_paths.size());
  return n;
}

long TaskPlan::predicted_reduces() const {
  long n = 0;
  for (const auto& stage : stages)
    if (stage.kind == StageKind::Reduce)
      n += static_cast<long>(stage.node_paths.size());
  return n;
}

TaskPlan plan(const PartitionTree& tree, IntegrationMethod method, int workers) {
  if (workers < 1) throw Error("worker count must be >= 1");
  TaskPlan out;
  out.method = method;
  out.workers = workers;
  const int M = tree.resolutions();
  const auto leaves = tree.leaf_paths();

  out.stages.push_back({StageKind::LeafFit, leaves, -1});
  // Scores at the leaves' own MLEs.
  out.stages.push_back({StageKind::ScoreEval, leaves, -1});
  if (M == 0) return out;

  out.stages.push_back({StageKind::Reduce, tree.paths_at_resolution(M - 1), -1});
  for (int m = M - 2; m >= 0; --m) {
    if (method == IntegrationMethod::Recursive) {
      // Refresh the kernel scores at the enclosing resolution-(m+1) estimates.
      out.stages.push_back({StageKind::ScoreEval, leaves, m + 1});
    }
    out.stages.push_back({StageKind::Reduce, tree.paths_at_resolution(m), -1});
  }
  return out;
}

DataBlock InMemoryDataSource::block(const PartitionTree& tree,
                                    const NodePath& path) {
  return slice_block(data_, tree, path);
}

FileDataSource::FileDataSource(std::string path)
    : path_(std::move(path)), domain_(read_locations(path_)) {
  // X is shared by every block; read it once (the Y payload stays on disk,
  // blocks pull their own location columns).
  x_ = read_covariates(path_);
}

DataBlock FileDataSource::block(const PartitionTree& tree,
                                const NodePath& path) {
  const auto& idx = tree.indices(path);
  DataBlock out;
  out.Y = read_y_slice(path_, idx);
  out.X = x_;
  out.locations.reserve(idx.size());
  for (int j : idx) out.locations.push_back(domain_.location(j));
  out.node_path = path;
  return out;
}

IntegrateResult execute(const TaskPlan& planned, const PartitionTree& tree,
                        DataSource& source, const ModelSpec& spec,
                        const ExecuteOptions& opts) {
  WorkerPool pool(planned.workers);
  IntegrateOptions iopts;
  iopts.method = planned.method;
  iopts.fit = opts.fit;
  iopts.ridge = opts.ridge;
  iopts.executor = &pool;
  // Spilling names blocks by their fitted leaf estimates, so keep them.
  iopts.keep_node_estimates = opts.keep_node_estimates || opts.spill_dir.has_value();

  auto provider = [&](const NodePath& path) {
    if (opts.fail_node_path && *opts.fail_node_path == path.str())
      throw Error("injected task failure");
    DataBlock block = source.block(tree, path);
    if (opts.spill_dir) {
      // Spills happen later, from the score stage; nothing to do here.
    }
    return block;
  };

  IntegrateResult result = integrate(tree, provider, spec, iopts);

  if (opts.spill_dir) {
    // Re-evaluate the leaf score blocks at their fitted values and spill them
    // for post-mortem inspection (named by node path).
    for (const auto& leaf : tree.leaf_paths()) {
      DataBlock block = source.block(tree, leaf);
      const MetaEstimate& est =
          result.node_estimates.count(leaf.str())
              ? result.node_estimates.at(leaf.str())
              : result.root;
      ScoreMatrix scores = per_observation_scores(block, est.theta, spec);
      std::string name = leaf.str();
      for (auto& ch : name)
        if (ch == '.') ch = '_';
      write_score_block(*opts.spill_dir + "/scores_" + name + ".mrri", scores);
    }
  }

  // Counters must match the plan exactly; a mismatch is a scheduling bug.
  if (result.counters.leaf_fits != planned.predicted_leaf_fits() ||
      result.counters.score_evals != planned.predicted_score_evals() ||
      result.counters.reduces != planned.predicted_reduces())
    throw Error("execution counters diverged from the task plan");
  return result;
}

}  // namespace mrri
