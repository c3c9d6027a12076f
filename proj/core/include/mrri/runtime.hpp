#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mrri/dataset_io.hpp"
#include "mrri/integration.hpp"

namespace mrri {

// Fixed-size in-process worker pool. Tasks within a batch run concurrently
// and write only to their own result slots; a barrier separates batches, so
// numerical output is invariant to the worker count.
class WorkerPool : public Executor {
 public:
  explicit WorkerPool(int workers);
  void run(std::vector<std::function<void()>>& tasks) override;
  int workers() const override { return workers_; }

 private:
  int workers_;
};

enum class StageKind { LeafFit, ScoreEval, Reduce };

struct Stage {
  StageKind kind;
  std::vector<NodePath> node_paths;
  // For ScoreEval: resolution of the ancestor whose estimate supplies the
  // evaluation point (-1 = each leaf's own MLE).
  int eval_resolution = -1;
};

struct TaskPlan {
  IntegrationMethod method = IntegrationMethod::Recursive;
  int workers = 1;
  std::vector<Stage> stages;

  long predicted_leaf_fits() const;
  long predicted_score_evals() const;
  long predicted_reduces() const;
};

// Stage schedule for an integration run: leaf fits first, then score
// evaluations and reductions respecting the chosen integrator's dependencies
// (recursive: one score-eval stage per descent; sequential: exactly one).
TaskPlan plan(const PartitionTree& tree, IntegrationMethod method, int workers);

// Per-node data access; workers read only their nodes' location columns.
class DataSource {
 public:
  virtual ~DataSource() = default;
  virtual DataBlock block(const PartitionTree& tree, const NodePath& path) = 0;
};

class InMemoryDataSource : public DataSource {
 public:
  explicit InMemoryDataSource(Dataset data) : data_(std::move(data)) {}
  DataBlock block(const PartitionTree& tree, const NodePath& path) override;
  const Dataset& data() const { return data_; }

 private:
  Dataset data_;
};

// Reads node blocks from a DatasetFile by column slices.
class FileDataSource : public DataSource {
 public:
  explicit FileDataSource(std::string path);
  DataBlock block(const PartitionTree& tree, const NodePath& path) override;

 private:
  std::string path_;
  SpatialDomain domain_;
  Eigen::MatrixXd x_;
};

struct ExecuteOptions {
  FitOptions fit;
  RidgePolicy ridge;
  bool keep_node_estimates = false;
  // Spill per-leaf score blocks to this directory (node-path file names).
  std::optional<std::string> spill_dir;
  // Test hook: abort the task for this node path to exercise the fault
  // contract.
  std::optional<std::string> fail_node_path;
};

// Runs the planned stages against the data source. Output is independent of
// worker count and scheduling; a task failure aborts with the node path and
// stage attached. Counters in the returned provenance match the plan's
// predictions exactly.
IntegrateResult execute(const TaskPlan& planned, const PartitionTree& tree,
                        DataSource& source, const ModelSpec& spec,
                        const ExecuteOptions& opts = {});

}  // namespace mrri
