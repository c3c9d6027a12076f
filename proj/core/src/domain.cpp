#include "mrri/domain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace mrri {

std::string NodePath::str() const {
  if (ks.empty()) return "0";
  std::string out;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (i) out += '.';
    out += std::to_string(ks[i]);
  }
  return out;
}

NodePath NodePath::parse(const std::string& text) {
  NodePath p;
  if (text.empty() || text == "0") return p;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, '.')) {
    int k = std::stoi(part);
    if (k < 1) throw InvalidDomainError("node path indices are 1-based: " + text);
    p.ks.push_back(k);
  }
  return p;
}

SpatialDomain::SpatialDomain(std::vector<Location> locations)
    : locations_(std::move(locations)) {
  if (locations_.empty()) throw InvalidDomainError("domain has no locations");
  d_ = static_cast<int>(locations_[0].coords.size());
  if (d_ == 0) throw InvalidDomainError("locations must have dimension >= 1");
  has_roi_ = locations_[0].roi.has_value();
  for (const auto& loc : locations_) {
    if (static_cast<int>(loc.coords.size()) != d_)
      throw InvalidDomainError("all locations must share one dimension");
    if (loc.roi.has_value() != has_roi_)
      throw InvalidDomainError("ROI labels must be present on all locations or none");
  }
  // Distinctness.
  std::vector<const Location*> sorted;
  sorted.reserve(locations_.size());
  for (const auto& loc : locations_) sorted.push_back(&loc);
  std::sort(sorted.begin(), sorted.end(),
            [](const Location* a, const Location* b) { return a->coords < b->coords; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i]->coords == sorted[i - 1]->coords)
      throw InvalidDomainError("duplicate locations in domain");
  }
  // ROI labels partition the index set into contiguous runs.
  if (has_roi_) {
    std::set<int> seen;
    int current = *locations_[0].roi;
    roi_labels_.push_back(current);
    seen.insert(current);
    for (std::size_t j = 1; j < locations_.size(); ++j) {
      int label = *locations_[j].roi;
      if (label == current) continue;
      if (seen.count(label))
        throw InvalidDomainError("ROI label runs must be contiguous");
      current = label;
      roi_labels_.push_back(label);
      seen.insert(label);
    }
  }
}

PartitionTree::PartitionTree(int M, std::vector<int> branching,
                             std::map<NodePath, std::vector<int>> nodes)
    : M_(M), branching_(std::move(branching)), nodes_(std::move(nodes)) {
  if (static_cast<int>(branching_.size()) != M_)
    throw InvalidDomainError("branching list length must equal M");
  if (!nodes_.count(NodePath{}))
    throw InvalidDomainError("partition tree has no root node");
}

const std::vector<int>& PartitionTree::indices(const NodePath& path) const {
  auto it = nodes_.find(path);
  if (it == nodes_.end())
    throw InvalidDomainError("unknown partition node " + path.str());
  return it->second;
}

std::vector<NodePath> PartitionTree::paths_at_resolution(int m) const {
  std::vector<NodePath> out;
  for (const auto& [path, _] : nodes_)
    if (path.resolution() == m) out.push_back(path);
  return out;
}

std::size_t PartitionTree::leaf_count() const {
  std::size_t n = 1;
  for (int k : branching_) n *= static_cast<std::size_t>(k);
  return n;
}

int PartitionTree::children_of(int resolution) const {
  return resolution < M_ ? branching_[resolution] : 0;
}

void PartitionTree::validate(std::size_t domain_size, int min_leaf_size) const {
  const auto& root = indices(NodePath{});
  if (root.size() != domain_size)
    throw InvalidDomainError("root must contain the full index set");
  for (const auto& [path, idx] : nodes_) {
    int m = path.resolution();
    if (m == M_) {
      if (static_cast<int>(idx.size()) < min_leaf_size)
        throw InvalidDomainError("leaf " + path.str() + " smaller than min_leaf_size");
      continue;
    }
    // Children are pairwise disjoint and union to the parent, exactly.
    std::vector<int> merged;
    for (int k = 1; k <= branching_[m]; ++k) {
      const auto& child = indices(path.child(k));
      merged.insert(merged.end(), child.begin(), child.end());
    }
    std::vector<int> parent_sorted = idx;
    std::sort(parent_sorted.begin(), parent_sorted.end());
    std::sort(merged.begin(), merged.end());
    if (merged != parent_sorted)
      throw InvalidDomainError("children of " + path.str() +
                               " do not partition the parent");
  }
  if (paths_at_resolution(M_).size() != leaf_count())
    throw InvalidDomainError("leaf count does not match branching product");
}

namespace {

// Widest-extent axis over the given location indices; ties resolved toward
// the highest axis index (reproduces the reference layout on square grids).
int widest_axis(const SpatialDomain& domain, const std::vector<int>& idx) {
  int d = domain.dimension();
  int axis = 0;
  double best = -1.0;
  for (int a = 0; a < d; ++a) {
    double lo = domain.location(idx[0]).coords[a];
    double hi = lo;
    for (int j : idx) {
      double c = domain.location(j).coords[a];
      lo = std::min(lo, c);
      hi = std::max(hi, c);
    }
    if (hi - lo >= best) {
      best = hi - lo;
      axis = a;
    }
  }
  return axis;
}

// Sorts indices lexicographically by (axis coordinate, remaining coordinates,
// original index) and cuts into `parts` contiguous slabs whose sizes differ
// by at most one (earlier slabs take the remainder).
std::vector<std::vector<int>> slab_split(const SpatialDomain& domain,
                                         std::vector<int> idx, int parts) {
  int axis = widest_axis(domain, idx);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    const auto& ca = domain.location(a).coords;
    const auto& cb = domain.location(b).coords;
    if (ca[axis] != cb[axis]) return ca[axis] < cb[axis];
    if (ca != cb) return ca < cb;
    return a < b;
  });
  std::vector<std::vector<int>> out(parts);
  std::size_t n = idx.size();
  std::size_t base = n / parts;
  std::size_t extra = n % parts;
  std::size_t pos = 0;
  for (int k = 0; k < parts; ++k) {
    std::size_t take = base + (static_cast<std::size_t>(k) < extra ? 1 : 0);
    out[k].assign(idx.begin() + pos, idx.begin() + pos + take);
    pos += take;
  }
  return out;
}

// One resolution's split of an index set into K blocks. K = 4 runs two nested
// binary splits (quadrants); other K cuts K slabs along the widest axis.
std::vector<std::vector<int>> split_level(const SpatialDomain& domain,
                                          const std::vector<int>& idx, int K) {
  if (K == 1) return {idx};
  if (K == 4) {
    auto halves = slab_split(domain, idx, 2);
    std::vector<std::vector<int>> out;
    for (auto& half : halves)
      for (auto& quarter : slab_split(domain, half, 2))
        out.push_back(std::move(quarter));
    return out;
  }
  return slab_split(domain, idx, K);
}

// Recursive coordinate-split over one index set; writes nodes under `prefix`.
void build_subtree(const SpatialDomain& domain, const std::vector<int>& idx,
                   const std::vector<int>& branching, const NodePath& prefix,
                   int m, std::map<NodePath, std::vector<int>>& nodes) {
  nodes[prefix] = idx;
  if (m == static_cast<int>(branching.size())) return;
  auto blocks = split_level(domain, idx, branching[m]);
  for (int k = 0; k < static_cast<int>(blocks.size()); ++k)
    build_subtree(domain, blocks[k], branching, prefix.child(k + 1), m + 1, nodes);
}

}  // namespace

PartitionTree build_partition(const SpatialDomain& domain, int M,
                              const std::vector<int>& branching,
                              PartitionStrategy strategy, int min_leaf_size) {
  if (static_cast<int>(branching.size()) != M)
    throw InfeasiblePartitionError("branching list length must equal M");
  for (int k : branching)
    if (k < 1) throw InfeasiblePartitionError("branching values must be >= 1");
  long leaves = 1;
  for (int k : branching) leaves *= k;

  std::map<NodePath, std::vector<int>> nodes;

  if (strategy == PartitionStrategy::CoordinateSplit) {
    if (leaves * static_cast<long>(min_leaf_size) >
        static_cast<long>(domain.size()))
      throw InfeasiblePartitionError(
          "branching infeasible: " + std::to_string(leaves) + " leaves x " +
          std::to_string(min_leaf_size) + " min size exceeds S=" +
          std::to_string(domain.size()));
    std::vector<int> all(domain.size());
    std::iota(all.begin(), all.end(), 0);
    build_subtree(domain, all, branching, NodePath{}, 0, nodes);
  } else {
    if (!domain.has_roi())
      throw InfeasiblePartitionError("roi-balanced split requires ROI labels");
    // Partition each ROI separately with the same tree shape; every node is
    // the union of same-indexed per-ROI blocks.
    std::vector<std::map<NodePath, std::vector<int>>> per_roi;
    for (int label : domain.roi_labels()) {
      std::vector<int> idx;
      for (std::size_t j = 0; j < domain.size(); ++j)
        if (*domain.location(j).roi == label) idx.push_back(static_cast<int>(j));
      if (leaves * static_cast<long>(min_leaf_size) > static_cast<long>(idx.size()))
        throw InfeasiblePartitionError(
            "branching infeasible within ROI " + std::to_string(label));
      std::map<NodePath, std::vector<int>> sub;
      build_subtree(domain, idx, branching, NodePath{}, 0, sub);
      per_roi.push_back(std::move(sub));
    }
    for (const auto& [path, _] : per_roi[0]) {
      std::vector<int> merged;
      for (const auto& sub : per_roi) {
        const auto& block = sub.at(path);
        merged.insert(merged.end(), block.begin(), block.end());
      }
      nodes[path] = std::move(merged);
    }
  }

  PartitionTree tree(M, branching, std::move(nodes));
  tree.validate(domain.size(), strategy == PartitionStrategy::CoordinateSplit
                                   ? min_leaf_size
                                   : min_leaf_size * static_cast<int>(
                                         domain.roi_labels().size()));
  return tree;
}

std::string PartitionTree::to_json_string() const {
  nlohmann::ordered_json j;
  j["M"] = M_;
  j["branching"] = branching_;
  nlohmann::ordered_json nodes = nlohmann::ordered_json::object();
  for (const auto& [path, idx] : nodes_) nodes[path.str()] = idx;
  j["nodes"] = nodes;
  return j.dump();
}

PartitionTree PartitionTree::from_json_string(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  std::map<NodePath, std::vector<int>> nodes;
  for (const auto& [key, idx] : j.at("nodes").items())
    nodes[NodePath::parse(key)] = idx.get<std::vector<int>>();
  return PartitionTree(j.at("M").get<int>(),
                       j.at("branching").get<std::vector<int>>(),
                       std::move(nodes));
}

}  // namespace mrri
