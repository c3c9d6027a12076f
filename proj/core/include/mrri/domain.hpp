#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mrri/errors.hpp"

namespace mrri {

// One spatial location: coordinates in R^d plus an optional region-of-interest
// label. All locations in a domain share the same d.
struct Location {
  std::vector<double> coords;
  std::optional<int> roi;
};

// Index path of a partition set. The root is the empty path (rendered "0");
// the set A_{k1...km} has path {k1,...,km} with 1-based indices.
struct NodePath {
  std::vector<int> ks;

  bool is_root() const { return ks.empty(); }
  int resolution() const { return static_cast<int>(ks.size()); }
  NodePath child(int k) const {
    NodePath p = *this;
    p.ks.push_back(k);
    return p;
  }
  NodePath parent() const {
    NodePath p = *this;
    p.ks.pop_back();
    return p;
  }
  // Ancestor at the given resolution (0 = root).
  NodePath ancestor(int resolution) const {
    NodePath p;
    p.ks.assign(ks.begin(), ks.begin() + resolution);
    return p;
  }
  std::string str() const;
  static NodePath parse(const std::string& text);

  friend bool operator==(const NodePath&, const NodePath&) = default;
  friend auto operator<=>(const NodePath& a, const NodePath& b) {
    return a.ks <=> b.ks;
  }
};

// The ordered set of S distinct locations. When ROI labels are present, the
// index set of each label must form one contiguous run.
class SpatialDomain {
 public:
  explicit SpatialDomain(std::vector<Location> locations);

  int dimension() const { return d_; }
  std::size_t size() const { return locations_.size(); }
  const Location& location(std::size_t j) const { return locations_[j]; }
  const std::vector<Location>& locations() const { return locations_; }
  bool has_roi() const { return has_roi_; }
  // Distinct ROI labels in order of appearance (empty when unlabeled).
  const std::vector<int>& roi_labels() const { return roi_labels_; }

 private:
  std::vector<Location> locations_;
  int d_ = 0;
  bool has_roi_ = false;
  std::vector<int> roi_labels_;
};

enum class PartitionStrategy {
  CoordinateSplit,
  RoiBalancedCoordinateSplit,
};

// Nested disjoint index sets over M resolutions. Children of any node are
// pairwise disjoint and union to the parent; the root holds every index.
class PartitionTree {
 public:
  PartitionTree(int M, std::vector<int> branching,
                std::map<NodePath, std::vector<int>> nodes);

  int resolutions() const { return M_; }
  const std::vector<int>& branching() const { return branching_; }
  const std::vector<int>& indices(const NodePath& path) const;
  bool contains(const NodePath& path) const { return nodes_.count(path) > 0; }
  const std::map<NodePath, std::vector<int>>& nodes() const { return nodes_; }

  std::vector<NodePath> paths_at_resolution(int m) const;
  std::vector<NodePath> leaf_paths() const { return paths_at_resolution(M_); }
  std::size_t leaf_count() const;
  int children_of(int resolution) const;  // K_{m+1} for a node at `resolution`

  // Asserts the disjoint-union invariant at every node and the minimum leaf
  // size; throws InvalidDomainError on violation.
  void validate(std::size_t domain_size, int min_leaf_size) const;

  std::string to_json_string() const;
  static PartitionTree from_json_string(const std::string& text);

 private:
  int M_;
  std::vector<int> branching_;
  std::map<NodePath, std::vector<int>> nodes_;
};

inline constexpr int kDefaultMinLeafSize = 25;

// Builds the recursive partition. Coordinate-split recursively halves (or
// quarters, or slabs for odd K) along the widest coordinate axis into
// contiguous nearest-neighbour blocks; the ROI-balanced strategy partitions
// each ROI separately with the same tree shape and unions same-indexed blocks.
PartitionTree build_partition(const SpatialDomain& domain, int M,
                              const std::vector<int>& branching,
                              PartitionStrategy strategy,
                              int min_leaf_size = kDefaultMinLeafSize);

}  // namespace mrri
