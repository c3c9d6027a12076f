#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mrri/likelihood.hpp"
#include "mrri/simulator.hpp"

namespace mrri {

// On-disk dataset container. Exact layout, little-endian:
//   8-byte magic "MRRIDATA", u32 version=1, u64 N, u64 S, u32 q, u32 d,
//   u32 flags, then f64 payload: Y (N x S row-major), X (N x q), locations
//   (S x d), ROI labels (u32 x S).
// Flag bit 0: ROI labels are meaningful. Flag bit 1: score-block container
// (payload Y holds an N x p score matrix; q = d = 0).
struct DatasetHeader {
  std::uint32_t version = 1;
  std::uint64_t n_obs = 0;
  std::uint64_t n_locations = 0;
  std::uint32_t q = 0;
  std::uint32_t d = 0;
  std::uint32_t flags = 0;

  bool has_roi() const { return flags & 1u; }
  bool is_score_block() const { return flags & 2u; }
};

inline constexpr char kDatasetMagic[8] = {'M', 'R', 'R', 'I', 'D', 'A', 'T', 'A'};

void write_dataset(const std::string& path, const Dataset& data);
Dataset read_dataset(const std::string& path);
DatasetHeader read_dataset_header(const std::string& path);

// Column-slice read of Y restricted to the given location indices, without
// loading the full Y payload.
Eigen::MatrixXd read_y_slice(const std::string& path,
                             const std::vector<int>& location_indices);

// Locations (and ROI labels) only; skips Y and X payloads.
SpatialDomain read_locations(const std::string& path);

// Covariate matrix only; skips the Y payload.
Eigen::MatrixXd read_covariates(const std::string& path);

// Score-block spill: per-task score matrices in the same container, named by
// node path for post-mortem inspection.
void write_score_block(const std::string& path, const ScoreMatrix& scores);
Eigen::MatrixXd read_score_block(const std::string& path);

}  // namespace mrri
