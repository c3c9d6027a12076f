#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "mrri/domain.hpp"
#include "test_helpers.hpp"

using namespace mrri;

namespace {

std::set<int> as_set(const std::vector<int>& v) { return {v.begin(), v.end()}; }

// Exhaustive disjoint-union check, independent of PartitionTree::validate.
void check_disjoint_union(const PartitionTree& tree) {
  for (const auto& [path, idx] : tree.nodes()) {
    if (path.resolution() == tree.resolutions()) continue;
    std::set<int> merged;
    std::size_t total = 0;
    for (int k = 1; k <= tree.branching()[path.resolution()]; ++k) {
      const auto& child = tree.indices(path.child(k));
      total += child.size();
      merged.insert(child.begin(), child.end());
    }
    CHECK(merged.size() == total);  // pairwise disjoint
    CHECK(merged == as_set(idx));   // union equals parent
  }
}

}  // namespace

TEST_CASE("figure-layout partition of the 10x10 grid") {
  const SpatialDomain domain = testing::square_grid(10);
  const PartitionTree tree =
      build_partition(domain, 2, {2, 2}, PartitionStrategy::CoordinateSplit, 25);

  // Resolution 1: two 10-wide by 5-tall halves.
  for (int k = 1; k <= 2; ++k) {
    const auto& half = tree.indices(NodePath{{k}});
    CHECK(half.size() == 50);
    std::set<double> xs, ys;
    for (int j : half) {
      xs.insert(domain.location(j).coords[0]);
      ys.insert(domain.location(j).coords[1]);
    }
    CHECK(xs.size() == 10);
    CHECK(ys.size() == 5);
  }
  // Resolution 2: four 5x5 quadrant leaves.
  for (int k1 = 1; k1 <= 2; ++k1) {
    for (int k2 = 1; k2 <= 2; ++k2) {
      const auto& leaf = tree.indices(NodePath{{k1, k2}});
      CHECK(leaf.size() == 25);
      std::set<double> xs, ys;
      for (int j : leaf) {
        xs.insert(domain.location(j).coords[0]);
        ys.insert(domain.location(j).coords[1]);
      }
      CHECK(xs.size() == 5);
      CHECK(ys.size() == 5);
    }
  }
  check_disjoint_union(tree);
}

TEST_CASE("M=0 yields a root-only tree") {
  const SpatialDomain domain = testing::square_grid(4);
  const PartitionTree tree =
      build_partition(domain, 0, {}, PartitionStrategy::CoordinateSplit, 4);
  CHECK(tree.nodes().size() == 1);
  CHECK(tree.indices(NodePath{}).size() == 16);
}

TEST_CASE("20x20 grid with branching (2,2,4) gives 16 leaves of 25") {
  const SpatialDomain domain = testing::square_grid(20);
  const PartitionTree tree = build_partition(domain, 3, {2, 2, 4},
                                             PartitionStrategy::CoordinateSplit, 25);
  const auto leaves = tree.leaf_paths();
  CHECK(leaves.size() == 16);
  std::set<int> seen;
  for (const auto& leaf : leaves) {
    const auto& idx = tree.indices(leaf);
    CHECK(idx.size() == 25);
    seen.insert(idx.begin(), idx.end());
  }
  CHECK(seen.size() == 400);
  check_disjoint_union(tree);
}

TEST_CASE("build_partition is deterministic") {
  const SpatialDomain domain = testing::square_grid(8);
  const PartitionTree a =
      build_partition(domain, 2, {2, 2}, PartitionStrategy::CoordinateSplit, 4);
  const PartitionTree b =
      build_partition(domain, 2, {2, 2}, PartitionStrategy::CoordinateSplit, 4);
  CHECK(a.to_json_string() == b.to_json_string());
}

TEST_CASE("infeasible branching raises") {
  const SpatialDomain domain = testing::square_grid(4);  // 16 locations
  CHECK_THROWS_AS(
      build_partition(domain, 1, {2}, PartitionStrategy::CoordinateSplit, 25),
      InfeasiblePartitionError);
  CHECK_THROWS_AS(
      build_partition(domain, 2, {2}, PartitionStrategy::CoordinateSplit, 4),
      InfeasiblePartitionError);
}

TEST_CASE("duplicate locations are rejected") {
  std::vector<Location> locs;
  locs.push_back({{1.0, 1.0}, std::nullopt});
  locs.push_back({{1.0, 1.0}, std::nullopt});
  CHECK_THROWS_AS(SpatialDomain(std::move(locs)), InvalidDomainError);
}

TEST_CASE("roi-balanced partition keeps per-ROI block structure") {
  const SpatialDomain domain = testing::two_roi_grid(10);  // 100 + 100
  const PartitionTree tree = build_partition(
      domain, 2, {2, 2}, PartitionStrategy::RoiBalancedCoordinateSplit, 25);
  for (const auto& leaf : tree.leaf_paths()) {
    const auto& idx = tree.indices(leaf);
    CHECK(idx.size() == 50);
    int roi1 = 0, roi2 = 0;
    for (int j : idx) {
      if (*domain.location(j).roi == 1) ++roi1;
      else ++roi2;
    }
    CHECK(roi1 == 25);
    CHECK(roi2 == 25);
  }
  // Internal nodes carry the same balance.
  for (int k = 1; k <= 2; ++k) {
    const auto& idx = tree.indices(NodePath{{k}});
    int roi1 = 0;
    for (int j : idx)
      if (*domain.location(j).roi == 1) ++roi1;
    CHECK(roi1 == 50);
    CHECK(idx.size() == 100);
  }
  check_disjoint_union(tree);
}

TEST_CASE("roi-balanced feasibility is enforced per ROI") {
  const SpatialDomain domain = testing::two_roi_grid(10);
  CHECK_THROWS_AS(build_partition(domain, 2, {2, 2},
                                  PartitionStrategy::RoiBalancedCoordinateSplit,
                                  26),
                  InfeasiblePartitionError);
}

TEST_CASE("partition JSON round trip") {
  const SpatialDomain domain = testing::square_grid(6);
  const PartitionTree tree =
      build_partition(domain, 2, {2, 2}, PartitionStrategy::CoordinateSplit, 9);
  const std::string text = tree.to_json_string();
  const PartitionTree back = PartitionTree::from_json_string(text);
  CHECK(back.to_json_string() == text);
  CHECK(back.indices(NodePath{{1, 2}}) == tree.indices(NodePath{{1, 2}}));
}

TEST_CASE("node path parsing and rendering") {
  CHECK(NodePath{}.str() == "0");
  CHECK(NodePath{{1, 2, 4}}.str() == "1.2.4");
  CHECK(NodePath::parse("0") == NodePath{});
  CHECK(NodePath::parse("1.2.4") == NodePath{{1, 2, 4}});
  CHECK(NodePath{{1, 2, 4}}.ancestor(2) == NodePath{{1, 2}});
}

TEST_CASE("odd branching slabs and unequal sizes differ by at most one") {
  const SpatialDomain domain = testing::square_grid(5);  // 25 locations
  const PartitionTree tree =
      build_partition(domain, 1, {3}, PartitionStrategy::CoordinateSplit, 8);
  std::vector<std::size_t> sizes;
  for (const auto& leaf : tree.leaf_paths())
    sizes.push_back(tree.indices(leaf).size());
  CHECK(*std::max_element(sizes.begin(), sizes.end()) -
            *std::min_element(sizes.begin(), sizes.end()) <=
        1);
  check_disjoint_union(tree);
}
