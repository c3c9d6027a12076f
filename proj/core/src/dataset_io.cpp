#include "mrri/dataset_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace mrri {

static_assert(std::endian::native == std::endian::little,
              "DatasetFile layout is little-endian");

namespace {

constexpr std::size_t kHeaderBytes = 8 + 4 + 8 + 8 + 4 + 4 + 4;

template <typename T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError("truncated dataset file");
  return value;
}

void write_header(std::ofstream& out, const DatasetHeader& h) {
  out.write(kDatasetMagic, 8);
  put<std::uint32_t>(out, h.version);
  put<std::uint64_t>(out, h.n_obs);
  put<std::uint64_t>(out, h.n_locations);
  put<std::uint32_t>(out, h.q);
  put<std::uint32_t>(out, h.d);
  put<std::uint32_t>(out, h.flags);
}

DatasetHeader read_header_stream(std::ifstream& in, const std::string& path) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kDatasetMagic, 8) != 0)
    throw IoError("not a MRRIDATA file: " + path);
  DatasetHeader h;
  h.version = get<std::uint32_t>(in);
  if (h.version != 1)
    throw IoError("unsupported MRRIDATA version " + std::to_string(h.version));
  h.n_obs = get<std::uint64_t>(in);
  h.n_locations = get<std::uint64_t>(in);
  h.q = get<std::uint32_t>(in);
  h.d = get<std::uint32_t>(in);
  h.flags = get<std::uint32_t>(in);
  return h;
}

void check_payload_size(const std::string& path, std::ifstream& in,
                        const DatasetHeader& h) {
  in.seekg(0, std::ios::end);
  const std::uint64_t actual = static_cast<std::uint64_t>(in.tellg());
  const std::uint64_t expected =
      kHeaderBytes +
      8 * (h.n_obs * h.n_locations + h.n_obs * h.q + h.n_locations * h.d) +
      4 * h.n_locations;
  if (actual != expected)
    throw IoError("payload size mismatch in " + path + ": expected " +
                  std::to_string(expected) + " bytes, found " +
                  std::to_string(actual));
}

}  // namespace

void write_dataset(const std::string& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");

  DatasetHeader h;
  h.n_obs = static_cast<std::uint64_t>(data.Y.rows());
  h.n_locations = static_cast<std::uint64_t>(data.Y.cols());
  h.q = static_cast<std::uint32_t>(data.X.cols());
  h.d = static_cast<std::uint32_t>(data.domain.dimension());
  h.flags = data.domain.has_roi() ? 1u : 0u;
  write_header(out, h);

  // Y row-major.
  for (long i = 0; i < data.Y.rows(); ++i)
    for (long j = 0; j < data.Y.cols(); ++j) put<double>(out, data.Y(i, j));
  for (long i = 0; i < data.X.rows(); ++i)
    for (long j = 0; j < data.X.cols(); ++j) put<double>(out, data.X(i, j));
  for (std::size_t j = 0; j < data.domain.size(); ++j)
    for (double c : data.domain.location(j).coords) put<double>(out, c);
  for (std::size_t j = 0; j < data.domain.size(); ++j)
    put<std::uint32_t>(out, data.domain.has_roi()
                                ? static_cast<std::uint32_t>(
                                      *data.domain.location(j).roi)
                                : 0u);
  if (!out) throw IoError("write failed: " + path);
}

DatasetHeader read_dataset_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return read_header_stream(in, path);
}

namespace {

SpatialDomain read_domain_from(std::ifstream& in, const DatasetHeader& h) {
  // Locations start after Y and X payloads.
  const std::uint64_t offset =
      kHeaderBytes + 8 * (h.n_obs * h.n_locations + h.n_obs * h.q);
  in.seekg(static_cast<std::streamoff>(offset));
  std::vector<Location> locations(h.n_locations);
  for (auto& loc : locations) {
    loc.coords.resize(h.d);
    for (std::uint32_t k = 0; k < h.d; ++k) loc.coords[k] = get<double>(in);
  }
  for (auto& loc : locations) {
    std::uint32_t label = get<std::uint32_t>(in);
    if (h.has_roi()) loc.roi = static_cast<int>(label);
  }
  return SpatialDomain(std::move(locations));
}

}  // namespace

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  DatasetHeader h = read_header_stream(in, path);
  check_payload_size(path, in, h);
  in.seekg(kHeaderBytes);

  Eigen::MatrixXd y(h.n_obs, h.n_locations);
  for (std::uint64_t i = 0; i < h.n_obs; ++i)
    for (std::uint64_t j = 0; j < h.n_locations; ++j) y(i, j) = get<double>(in);
  Eigen::MatrixXd x(h.n_obs, h.q);
  for (std::uint64_t i = 0; i < h.n_obs; ++i)
    for (std::uint32_t j = 0; j < h.q; ++j) x(i, j) = get<double>(in);
  SpatialDomain domain = read_domain_from(in, h);
  return Dataset{std::move(domain), std::move(y), std::move(x)};
}

SpatialDomain read_locations(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  DatasetHeader h = read_header_stream(in, path);
  check_payload_size(path, in, h);
  return read_domain_from(in, h);
}

Eigen::MatrixXd read_covariates(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  DatasetHeader h = read_header_stream(in, path);
  check_payload_size(path, in, h);
  in.seekg(static_cast<std::streamoff>(kHeaderBytes +
                                       8 * h.n_obs * h.n_locations));
  Eigen::MatrixXd x(h.n_obs, h.q);
  for (std::uint64_t i = 0; i < h.n_obs; ++i)
    for (std::uint32_t j = 0; j < h.q; ++j) x(i, j) = get<double>(in);
  return x;
}

Eigen::MatrixXd read_y_slice(const std::string& path,
                             const std::vector<int>& location_indices) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  DatasetHeader h = read_header_stream(in, path);
  check_payload_size(path, in, h);

  Eigen::MatrixXd y(h.n_obs, location_indices.size());
  for (std::uint64_t i = 0; i < h.n_obs; ++i) {
    const std::uint64_t row_offset = kHeaderBytes + 8 * i * h.n_locations;
    for (std::size_t k = 0; k < location_indices.size(); ++k) {
      const int j = location_indices[k];
      if (j < 0 || static_cast<std::uint64_t>(j) >= h.n_locations)
        throw IoError("location index out of range in slice read");
      in.seekg(static_cast<std::streamoff>(row_offset + 8 * static_cast<std::uint64_t>(j)));
      y(i, static_cast<long>(k)) = get<double>(in);
    }
  }
  return y;
}

void write_score_block(const std::string& path, const ScoreMatrix& scores) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  DatasetHeader h;
  h.n_obs = static_cast<std::uint64_t>(scores.values.rows());
  h.n_locations = static_cast<std::uint64_t>(scores.values.cols());
  h.q = 0;
  h.d = 0;
  h.flags = 2u;
  write_header(out, h);
  for (long i = 0; i < scores.values.rows(); ++i)
    for (long j = 0; j < scores.values.cols(); ++j)
      put<double>(out, scores.values(i, j));
  for (std::uint64_t j = 0; j < h.n_locations; ++j) put<std::uint32_t>(out, 0u);
  if (!out) throw IoError("write failed: " + path);
}

Eigen::MatrixXd read_score_block(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  DatasetHeader h = read_header_stream(in, path);
  if (!h.is_score_block()) throw IoError(path + " is not a score-block file");
  check_payload_size(path, in, h);
  in.seekg(kHeaderBytes);
  Eigen::MatrixXd values(h.n_obs, h.n_locations);
  for (std::uint64_t i = 0; i < h.n_obs; ++i)
    for (std::uint64_t j = 0; j < h.n_locations; ++j)
      values(i, j) = get<double>(in);
  return values;
}

}  // namespace mrri
