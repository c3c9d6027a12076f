#include "mrri/simulator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fpu_mode.hpp"
#include "mrri/inference.hpp"
#include "mrri/rng.hpp"

namespace mrri {

SpatialDomain make_grid_domain(const DomainConfig& config) {
  if (config.grids.empty()) throw InvalidDomainError("domain config has no grids");
  std::vector<Location> locations;
  for (const auto& grid : config.grids) {
    if (grid.origin.size() != grid.shape.size() || grid.origin.empty())
      throw InvalidDomainError("grid origin/shape dimension mismatch");
    const int d = static_cast<int>(grid.shape.size());
    long total = 1;
    for (int n : grid.shape) {
      if (n < 1) throw InvalidDomainError("grid shape entries must be >= 1");
      total *= n;
    }
    // Row-major enumeration: the last axis varies fastest.
    for (long idx = 0; idx < total; ++idx) {
      long rem = idx;
      std::vector<double> coords(d);
      for (int a = d - 1; a >= 0; --a) {
        coords[a] = grid.origin[a] + static_cast<double>(rem % grid.shape[a]);
        rem /= grid.shape[a];
      }
      locations.push_back({std::move(coords), grid.roi});
    }
  }
  return SpatialDomain(std::move(locations));
}

namespace {

ThetaParams sim1_theta() {
  ThetaParams t;
  t.beta = Eigen::Vector3d(0.3, 0.6, 0.8);
  t.gamma = Eigen::Vector2d(std::log(3.0), std::log(0.5));
  t.log_sigma2 = std::log(1.6);
  return t;
}

ThetaParams sim3_theta() {
  ThetaParams t;
  t.beta = Eigen::VectorXd::Zero(1);
  t.gamma = Eigen::VectorXd(7);
  t.gamma << std::log(3.0), 0.5, 0.5, 0.5, 0.6, 0.6, 0.6;
  t.log_sigma2 = std::log(1.6);
  return t;
}

ModelSpec stationary_spec() {
  ModelSpec spec;
  spec.mean_kind = MeanKind::LinearInX;
  spec.cov_kind = CovKind::StationaryGaussian;
  spec.q = 3;
  spec.roi_count = 1;
  spec.tau_structure = TauStructure::SingleTau2;
  return spec;
}

ModelSpec two_roi_spec() {
  ModelSpec spec;
  spec.mean_kind = MeanKind::ConstantIntercept;
  spec.cov_kind = CovKind::NonstationaryPs;
  spec.q = 3;
  spec.roi_count = 2;
  spec.tau_structure = TauStructure::SingleTau2;
  return spec;
}

DomainConfig square_grid(double origin, int side) {
  DomainConfig d;
  d.grids.push_back({{origin, origin}, {side, side}, std::nullopt});
  return d;
}

DomainConfig two_roi_grids(int side) {
  DomainConfig d;
  d.grids.push_back({{1.0, 1.0}, {side, side}, 1});
  d.grids.push_back({{side + 11.0, side + 11.0}, {side, side}, 2});
  return d;
}

}  // namespace

SimConfig preset(const std::string& name) {
  SimConfig c;
  c.name = name;
  if (name == "sim1" || name == "sim1-desk") {
    c.spec = stationary_spec();
    c.theta_true = sim1_theta();
    c.covariate_sd = 2.0;
    c.estimators = EstimatorSelection::Both;
    if (name == "sim1") {
      c.domain = square_grid(1.0, 20);
      c.n_obs = 10000;
      c.replicates = 500;
      c.partition = {3, {2, 2, 4}, PartitionStrategy::CoordinateSplit, 25};
    } else {
      c.domain = square_grid(1.0, 10);
      c.n_obs = 2000;
      c.replicates = 200;
      c.partition = {2, {2, 2}, PartitionStrategy::CoordinateSplit, 25};
    }
  } else if (name == "sim2" || name == "sim2-desk") {
    c.spec = stationary_spec();
    c.theta_true = sim1_theta();
    c.covariate_sd = 2.0;
    c.estimators = EstimatorSelection::Both;
    if (name == "sim2") {
      c.domain = square_grid(1.0, 160);
      c.n_obs = 5000;
      c.replicates = 500;
      c.partition = {4, {4, 4, 4, 4}, PartitionStrategy::CoordinateSplit, 25};
    } else {
      c.domain = square_grid(1.0, 32);
      c.n_obs = 1000;
      c.replicates = 100;
      c.partition = {3, {4, 4, 4}, PartitionStrategy::CoordinateSplit, 16};
    }
  } else if (name == "sim3" || name == "sim3-desk") {
    c.spec = two_roi_spec();
    c.theta_true = sim3_theta();
    c.covariate_sd = 1.0;
    c.estimators = EstimatorSelection::Sequential;
    // rho_12 vs rho_22: the first non-intercept coefficient in each ROI.
    c.contrast = std::make_pair(c.spec.rho_index(1, 1), c.spec.rho_index(2, 1));
    if (name == "sim3") {
      c.domain = two_roi_grids(20);
      c.n_obs = 10000;
      c.replicates = 500;
      c.partition = {3, {2, 2, 4}, PartitionStrategy::RoiBalancedCoordinateSplit, 25};
    } else {
      c.domain = two_roi_grids(10);
      c.n_obs = 2000;
      c.replicates = 200;
      c.partition = {2, {2, 2}, PartitionStrategy::RoiBalancedCoordinateSplit, 25};
    }
  } else {
    throw Error("unknown preset: " + name);
  }
  return c;
}

std::vector<std::string> preset_names() {
  return {"sim1", "sim1-desk", "sim2", "sim2-desk", "sim3", "sim3-desk"};
}

namespace {

// Blockwise kernel + nugget assembly for the data generator. The per-location
// range is constant within a ROI, so each (ROI a, ROI b) sub-block is a
// scalar amplitude times an elementwise exponential; ROI label runs are
// contiguous by the SpatialDomain invariant. Matches the entrywise definition
// in build_cov_matrix (cross-checked by tests against the empirical moments).
struct SimGeometry {
  Eigen::MatrixXd sq_dist;
  std::vector<int> slot_start, slot_count;
  int n_slots = 1;
  int d = 0;
};

SimGeometry make_sim_geometry(const SpatialDomain& domain, const ModelSpec& spec) {
  SimGeometry g;
  const int s = static_cast<int>(domain.size());
  g.d = domain.dimension();
  g.sq_dist.resize(s, s);
  for (int r = 0; r < s; ++r) {
    for (int t = r; t < s; ++t) {
      double ss = 0.0;
      for (int k = 0; k < g.d; ++k) {
        double delta = domain.location(t).coords[k] - domain.location(r).coords[k];
        ss += delta * delta;
      }
      g.sq_dist(r, t) = ss;
      g.sq_dist(t, r) = ss;
    }
  }
  g.n_slots = spec.roi_count;
  g.slot_start.assign(g.n_slots, 0);
  g.slot_count.assign(g.n_slots, 0);
  if (spec.roi_count == 2) {
    for (int j = 0; j < s; ++j) ++g.slot_count[*domain.location(j).roi - 1];
    g.slot_start[1] = g.slot_count[0];
    // Contiguity is a SpatialDomain invariant; label 1 must come first for
    // the run offsets above.
    if (*domain.location(0).roi != 1)
      throw InvalidDomainError("two-ROI simulation expects label 1 first");
  } else {
    g.slot_count[0] = s;
  }
  return g;
}

void sim_cov(const SimGeometry& g, const ModelSpec& spec,
             const ThetaParams& theta, const Eigen::VectorXd& x_row,
             Eigen::MatrixXd& c) {
  const int s = static_cast<int>(g.sq_dist.rows());
  c.resize(s, s);
  if (spec.cov_kind == CovKind::StationaryGaussian) {
    const double tau2 = std::exp(theta.gamma(0));
    const double rho2 = std::exp(theta.gamma(1));
    c = tau2 * (-rho2 * g.sq_dist.array()).exp().matrix();
  } else {
    Eigen::VectorXd ranges(g.n_slots);
    for (int k = 0; k < g.n_slots; ++k) {
      const int offset = spec.tau_count() + k * spec.q;
      ranges(k) = std::exp(x_row.dot(theta.gamma.segment(offset, spec.q)));
    }
    for (int a = 0; a < g.n_slots; ++a) {
      for (int b = a; b < g.n_slots; ++b) {
        const double sum = ranges(a) + ranges(b);
        const double tau =
            spec.tau_count() == 1
                ? std::exp(theta.gamma(0))
                : std::exp(0.5 * (theta.gamma(a) + theta.gamma(b)));
        double amp = 1.0;
        if (a != b) {
          const double q4 = 4.0 * ranges(a) * ranges(b) / (sum * sum);
          amp = g.d == 2 ? std::sqrt(q4)
                         : (g.d == 4 ? q4 : std::pow(q4, g.d / 4.0));
        }
        const auto d_ab = g.sq_dist.block(g.slot_start[a], g.slot_start[b],
                                          g.slot_count[a], g.slot_count[b]);
        c.block(g.slot_start[a], g.slot_start[b], g.slot_count[a],
                g.slot_count[b]) =
            (tau * amp) * (-2.0 / sum * d_ab.array()).exp();
        if (b > a)
          c.block(g.slot_start[b], g.slot_start[a], g.slot_count[b],
                  g.slot_count[a]) =
              c.block(g.slot_start[a], g.slot_start[b], g.slot_count[a],
                      g.slot_count[b])
                  .transpose();
      }
    }
  }
  c.diagonal().array() += theta.sigma2();
}

}  // namespace

Dataset simulate_dataset(const SimConfig& config, int replicate_id) {
  detail::use_fast_subnormal_mode();
  SpatialDomain domain = make_grid_domain(config.domain);
  const int s = static_cast<int>(domain.size());
  const int n = config.n_obs;
  const int q = config.spec.q;
  if (n < 1) throw Error("n_obs must be >= 1");
  if (s > config.max_dense_s)
    throw CapacityError(
        "S=" + std::to_string(s) +
        " exceeds the dense simulation cap; use a desk-scale preset or raise "
        "max_dense_s");

  CounterRng rng(config.seed, static_cast<std::uint64_t>(replicate_id));

  // Covariates: intercept plus (q-1) continuous draws, constant over space.
  Eigen::MatrixXd x(n, q);
  x.col(0).setOnes();
  for (int i = 0; i < n; ++i)
    for (int j = 1; j < q; ++j)
      x(i, j) = config.covariate_sd *
                rng.normal(0, static_cast<std::uint64_t>(i) * (q - 1) + (j - 1));

  SimGeometry geom = make_sim_geometry(domain, config.spec);
  Eigen::MatrixXd y(n, s);
  Eigen::MatrixXd c;

  if (config.spec.cov_kind == CovKind::StationaryGaussian) {
    // One factorization serves every observation.
    sim_cov(geom, config.spec, config.theta_true, Eigen::VectorXd::Ones(q), c);
    SpdFactor factor = factorize_spd(c);
    const auto l = factor.llt.matrixL();
    Eigen::VectorXd z(s);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < s; ++j)
        z(j) = rng.normal(1, static_cast<std::uint64_t>(i) * s + j);
      const double mu = mean_value(config.spec, x.row(i).transpose(),
                                   config.theta_true.beta);
      y.row(i) = ((l * z).array() + mu).transpose();
    }
  } else {
    Eigen::VectorXd z(s);
    Eigen::LLT<Eigen::MatrixXd> llt(s);
    for (int i = 0; i < n; ++i) {
      sim_cov(geom, config.spec, config.theta_true, x.row(i).transpose(), c);
      llt.compute(c);
      if (llt.info() != Eigen::Success)
        c = Eigen::MatrixXd();  // force the jitter path below
      if (c.size() == 0 || llt.matrixLLT().diagonal().minCoeff() <= 0.0) {
        sim_cov(geom, config.spec, config.theta_true, x.row(i).transpose(), c);
        SpdFactor factor = factorize_spd(c);
        llt = factor.llt;
      }
      for (int j = 0; j < s; ++j)
        z(j) = rng.normal(1, static_cast<std::uint64_t>(i) * s + j);
      const double mu = mean_value(config.spec, x.row(i).transpose(),
                                   config.theta_true.beta);
      y.row(i) = ((llt.matrixL() * z).array() + mu).transpose();
    }
  }

  return Dataset{std::move(domain), std::move(y), std::move(x)};
}

DataBlock slice_block(const Dataset& data, const PartitionTree& tree,
                      const NodePath& path) {
  const auto& idx = tree.indices(path);
  DataBlock block;
  block.Y.resize(data.Y.rows(), static_cast<long>(idx.size()));
  block.locations.reserve(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    block.Y.col(static_cast<long>(k)) = data.Y.col(idx[k]);
    block.locations.push_back(data.domain.location(idx[k]));
  }
  block.X = data.X;
  block.node_path = path;
  return block;
}

BlockProvider make_block_provider(const Dataset& data, const PartitionTree& tree) {
  return [&data, &tree](const NodePath& path) {
    return slice_block(data, tree, path);
  };
}

namespace {

MetricsTable aggregate(const std::string& estimator, const SimConfig& config,
                       const std::vector<ReplicateRecord>& records) {
  const Eigen::VectorXd truth = config.theta_true.packed();
  const int p = static_cast<int>(truth.size());
  const auto names = config.spec.component_names();
  const double z95 = normal_quantile(0.975);

  MetricsTable table;
  table.estimator = estimator;

  std::vector<const ReplicateRecord*> ok;
  for (const auto& rec : records) {
    if (rec.ok && rec.theta.count(estimator)) ok.push_back(&rec);
  }
  table.replicates_done = static_cast<int>(ok.size());
  table.failures = static_cast<int>(records.size() - ok.size());
  if (ok.empty()) return table;

  const double r_count = static_cast<double>(ok.size());
  for (int qx = 0; qx < p; ++qx) {
    MetricsRow row;
    row.param = names[qx];
    double sum_dev = 0.0, sum_dev2 = 0.0, sum_ase = 0.0;
    long hits = 0;
    for (const auto* rec : ok) {
      const double dev = rec->theta.at(estimator)(qx) - truth(qx);
      const double ase = rec->ase.at(estimator)(qx);
      sum_dev += dev;
      sum_dev2 += dev * dev;
      sum_ase += ase;
      if (std::abs(dev) <= z95 * ase) ++hits;
    }
    row.bias = sum_dev / r_count;
    row.rmse = std::sqrt(sum_dev2 / r_count);
    row.ase = sum_ase / r_count;
    row.cp = static_cast<double>(hits) / r_count;
    double ss = 0.0;
    for (const auto* rec : ok) {
      const double dev = rec->theta.at(estimator)(qx) - truth(qx);
      ss += (dev - row.bias) * (dev - row.bias);
    }
    row.ese = ok.size() > 1 ? std::sqrt(ss / (r_count - 1.0)) : 0.0;
    table.rows.push_back(row);
  }

  double t_sum = 0.0, t_sum2 = 0.0;
  for (const auto* rec : ok) {
    const double sec = rec->seconds_by.count(estimator)
                           ? rec->seconds_by.at(estimator)
                           : rec->seconds;
    t_sum += sec;
    t_sum2 += sec * sec;
  }
  table.time_mean = t_sum / r_count;
  table.time_sd =
      ok.size() > 1
          ? std::sqrt(std::max(0.0, (t_sum2 - t_sum * t_sum / r_count) /
                                        (r_count - 1.0)))
          : 0.0;
  return table;
}

Eigen::VectorXd ase_from(const MetaEstimate& est) {
  const Eigen::MatrixXd cov = est.covariance();
  return cov.diagonal().array().sqrt();
}

}  // namespace

StudyResult run_study(const SimConfig& config, Executor* executor,
                      const std::function<void(int)>& injector) {
  if (config.replicates < 1) throw Error("replicates must be >= 1");
  config.spec.validate();
  if (config.theta_true.size() != config.spec.param_count())
    throw DimensionError("theta_true does not match the model spec layout");

  SpatialDomain domain = make_grid_domain(config.domain);
  PartitionTree tree =
      build_partition(domain, config.partition.M, config.partition.branching,
                      config.partition.strategy, config.partition.min_leaf_size);

  std::vector<std::string> estimator_keys;
  if (config.estimators == EstimatorSelection::Recursive ||
      config.estimators == EstimatorSelection::Both)
    estimator_keys.push_back("recursive");
  if (config.estimators == EstimatorSelection::Sequential ||
      config.estimators == EstimatorSelection::Both)
    estimator_keys.push_back("sequential");

  StudyResult result;
  result.config = config;
  result.replicates.resize(config.replicates);

  std::vector<std::function<void()>> tasks;
  for (int r = 0; r < config.replicates; ++r) {
    tasks.push_back([&, r]() {
      ReplicateRecord& rec = result.replicates[r];
      rec.replicate_id = r;
      try {
        if (injector) injector(r);
        Dataset data = simulate_dataset(config, r);
        auto provider = make_block_provider(data, tree);
        for (const auto& key : estimator_keys) {
          const auto start = std::chrono::steady_clock::now();
          IntegrateOptions iopts;
          iopts.method = key == "recursive" ? IntegrationMethod::Recursive
                                            : IntegrationMethod::Sequential;
          iopts.fit = config.fit;
          iopts.keep_node_estimates = false;
          IntegrateResult integ = integrate(tree, provider, config.spec, iopts);
          const auto stop = std::chrono::steady_clock::now();
          const double sec = std::chrono::duration<double>(stop - start).count();
          rec.seconds += sec;
          rec.seconds_by[key] = sec;
          rec.theta[key] = integ.root.theta.packed();
          rec.ase[key] = ase_from(integ.root);
          if (config.contrast) {
            const auto [q1, q2] = *config.contrast;
            const Eigen::MatrixXd cov = integ.root.covariance();
            const double diff = rec.theta[key](q1) - rec.theta[key](q2);
            const double se =
                std::sqrt(cov(q1, q1) + cov(q2, q2) - 2.0 * cov(q1, q2));
            rec.contrast[key] = {diff, se};
          }
        }
        if (config.fit_full_mle) {
          const auto start = std::chrono::steady_clock::now();
          DataBlock root_block = slice_block(data, tree, NodePath{});
          MetaEstimate full = fit_local_mle(
              root_block, config.spec, default_init(root_block, config.spec),
              config.fit);
          const auto stop = std::chrono::steady_clock::now();
          const double sec = std::chrono::duration<double>(stop - start).count();
          rec.seconds += sec;
          rec.seconds_by["full-mle"] = sec;
          rec.theta["full-mle"] = full.theta.packed();
          rec.ase["full-mle"] = ase_from(full);
        }
        rec.ok = true;
      } catch (const std::exception& e) {
        rec.ok = false;
        rec.error = e.what();
      }
    });
  }

  if (executor) {
    executor->run(tasks);
  } else {
    for (auto& task : tasks) task();
  }

  for (const auto& key : estimator_keys)
    result.tables[key] = aggregate(key, config, result.replicates);
  if (config.fit_full_mle)
    result.tables["full-mle"] = aggregate("full-mle", config, result.replicates);
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

nlohmann::ordered_json vec_json(const Eigen::VectorXd& v) {
  return nlohmann::ordered_json(std::vector<double>(v.begin(), v.end()));
}

Eigen::VectorXd vec_from(const nlohmann::json& j) {
  auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
}

std::string estimator_selection_name(EstimatorSelection e) {
  switch (e) {
    case EstimatorSelection::Recursive: return "recursive";
    case EstimatorSelection::Sequential: return "sequential";
    default: return "both";
  }
}

}  // namespace

std::string metrics_table_to_json(const MetricsTable& table) {
  nlohmann::ordered_json j;
  j["estimator"] = table.estimator;
  j["replicates_done"] = table.replicates_done;
  j["failures"] = table.failures;
  j["time_mean_s"] = table.time_mean;
  j["time_sd_s"] = table.time_sd;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& row : table.rows) {
    nlohmann::ordered_json r;
    r["param"] = row.param;
    r["rmse"] = row.rmse;
    r["ese"] = row.ese;
    r["ase"] = row.ase;
    r["bias"] = row.bias;
    r["cp"] = row.cp;
    rows.push_back(r);
  }
  j["rows"] = rows;
  return j.dump();
}

std::string metrics_table_to_text(const MetricsTable& table) {
  std::ostringstream out;
  out << "estimator: " << table.estimator << "  (replicates "
      << table.replicates_done << ", failures " << table.failures << ")\n";
  out << std::left << std::setw(14) << "parameter" << std::right
      << std::setw(12) << "RMSE" << std::setw(12) << "ESE" << std::setw(12)
      << "ASE" << std::setw(12) << "BIAS" << std::setw(8) << "CP(%)" << "\n";
  for (const auto& row : table.rows) {
    out << std::left << std::setw(14) << row.param << std::right
        << std::setw(12) << std::setprecision(4) << std::scientific << row.rmse
        << std::setw(12) << row.ese << std::setw(12) << row.ase << std::setw(12)
        << row.bias << std::setw(8) << std::fixed << std::setprecision(1)
        << 100.0 * row.cp << "\n";
    out.unsetf(std::ios::fixed | std::ios::scientific);
  }
  out << "time per replicate: mean " << std::setprecision(4) << table.time_mean
      << " s, sd " << table.time_sd << " s\n";
  return out.str();
}

std::string sim_config_to_json(const SimConfig& c) {
  nlohmann::ordered_json cfg;
  cfg["name"] = c.name;
  cfg["spec"] = nlohmann::ordered_json::parse(model_spec_to_json(c.spec));
  cfg["theta_true"] = vec_json(c.theta_true.packed());
  cfg["n_obs"] = c.n_obs;
  cfg["replicates"] = c.replicates;
  cfg["seed"] = c.seed;
  cfg["covariate_sd"] = c.covariate_sd;
  cfg["estimators"] = estimator_selection_name(c.estimators);
  cfg["fit_full_mle"] = c.fit_full_mle;
  cfg["max_dense_s"] = c.max_dense_s;
  if (c.contrast) cfg["contrast"] = {c.contrast->first, c.contrast->second};
  nlohmann::ordered_json grids = nlohmann::ordered_json::array();
  for (const auto& g : c.domain.grids) {
    nlohmann::ordered_json gj;
    gj["origin"] = g.origin;
    gj["shape"] = g.shape;
    if (g.roi) gj["roi"] = *g.roi;
    grids.push_back(gj);
  }
  cfg["domain"] = grids;
  cfg["partition"] = {
      {"M", c.partition.M},
      {"branching", c.partition.branching},
      {"strategy", c.partition.strategy == PartitionStrategy::CoordinateSplit
                       ? "coordinate-split"
                       : "roi-balanced-coordinate-split"},
      {"min_leaf_size", c.partition.min_leaf_size}};
  return cfg.dump();
}

SimConfig sim_config_from_json(const std::string& text) {
  const nlohmann::json cfg = nlohmann::json::parse(text);
  SimConfig out;
  out.name = cfg.at("name").get<std::string>();
  out.spec = model_spec_from_json(cfg.at("spec").dump());
  out.theta_true = ThetaParams::unpack(vec_from(cfg.at("theta_true")), out.spec);
  out.n_obs = cfg.at("n_obs").get<int>();
  out.replicates = cfg.at("replicates").get<int>();
  out.seed = cfg.at("seed").get<std::uint64_t>();
  out.covariate_sd = cfg.at("covariate_sd").get<double>();
  const std::string est = cfg.at("estimators").get<std::string>();
  out.estimators = est == "recursive" ? EstimatorSelection::Recursive
                   : est == "sequential" ? EstimatorSelection::Sequential
                                         : EstimatorSelection::Both;
  out.fit_full_mle = cfg.at("fit_full_mle").get<bool>();
  if (cfg.contains("max_dense_s"))
    out.max_dense_s = cfg.at("max_dense_s").get<int>();
  if (cfg.contains("contrast"))
    out.contrast = std::make_pair(cfg.at("contrast")[0].get<int>(),
                                  cfg.at("contrast")[1].get<int>());
  for (const auto& gj : cfg.at("domain")) {
    GridRoi g;
    g.origin = gj.at("origin").get<std::vector<double>>();
    g.shape = gj.at("shape").get<std::vector<int>>();
    if (gj.contains("roi")) g.roi = gj.at("roi").get<int>();
    out.domain.grids.push_back(g);
  }
  const auto& pj = cfg.at("partition");
  out.partition.M = pj.at("M").get<int>();
  out.partition.branching = pj.at("branching").get<std::vector<int>>();
  out.partition.strategy =
      pj.at("strategy").get<std::string>() == "coordinate-split"
          ? PartitionStrategy::CoordinateSplit
          : PartitionStrategy::RoiBalancedCoordinateSplit;
  out.partition.min_leaf_size = pj.at("min_leaf_size").get<int>();
  return out;
}

std::string study_result_to_json(const StudyResult& result) {
  nlohmann::ordered_json j;
  j["config"] = nlohmann::ordered_json::parse(sim_config_to_json(result.config));

  nlohmann::ordered_json reps = nlohmann::ordered_json::array();
  for (const auto& rec : result.replicates) {
    nlohmann::ordered_json rj;
    rj["id"] = rec.replicate_id;
    rj["ok"] = rec.ok;
    if (!rec.ok) rj["error"] = rec.error;
    rj["seconds"] = rec.seconds;
    if (!rec.seconds_by.empty()) {
      nlohmann::ordered_json sj = nlohmann::ordered_json::object();
      for (const auto& [key, v] : rec.seconds_by) sj[key] = v;
      rj["seconds_by"] = sj;
    }
    nlohmann::ordered_json theta = nlohmann::ordered_json::object();
    nlohmann::ordered_json ase = nlohmann::ordered_json::object();
    for (const auto& [key, v] : rec.theta) theta[key] = vec_json(v);
    for (const auto& [key, v] : rec.ase) ase[key] = vec_json(v);
    rj["theta"] = theta;
    rj["ase"] = ase;
    if (!rec.contrast.empty()) {
      nlohmann::ordered_json cj = nlohmann::ordered_json::object();
      for (const auto& [key, v] : rec.contrast) cj[key] = {v.first, v.second};
      rj["contrast"] = cj;
    }
    reps.push_back(rj);
  }
  j["replicates"] = reps;

  nlohmann::ordered_json tables = nlohmann::ordered_json::object();
  for (const auto& [key, table] : result.tables)
    tables[key] = nlohmann::ordered_json::parse(metrics_table_to_json(table));
  j["tables"] = tables;
  return j.dump();
}

StudyResult study_result_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  StudyResult out;
  out.config = sim_config_from_json(j.at("config").dump());

  for (const auto& rj : j.at("replicates")) {
    ReplicateRecord rec;
    rec.replicate_id = rj.at("id").get<int>();
    rec.ok = rj.at("ok").get<bool>();
    if (rj.contains("error")) rec.error = rj.at("error").get<std::string>();
    rec.seconds = rj.at("seconds").get<double>();
    if (rj.contains("seconds_by"))
      for (const auto& [key, v] : rj.at("seconds_by").items())
        rec.seconds_by[key] = v.get<double>();
    for (const auto& [key, v] : rj.at("theta").items())
      rec.theta[key] = vec_from(v);
    for (const auto& [key, v] : rj.at("ase").items()) rec.ase[key] = vec_from(v);
    if (rj.contains("contrast")) {
      for (const auto& [key, v] : rj.at("contrast").items())
        rec.contrast[key] = {v[0].get<double>(), v[1].get<double>()};
    }
    out.replicates.push_back(std::move(rec));
  }

  for (const auto& [key, tj] : j.at("tables").items()) {
    MetricsTable table;
    table.estimator = tj.at("estimator").get<std::string>();
    table.replicates_done = tj.at("replicates_done").get<int>();
    table.failures = tj.at("failures").get<int>();
    table.time_mean = tj.at("time_mean_s").get<double>();
    table.time_sd = tj.at("time_sd_s").get<double>();
    for (const auto& rj : tj.at("rows")) {
      MetricsRow row;
      row.param = rj.at("param").get<std::string>();
      row.rmse = rj.at("rmse").get<double>();
      row.ese = rj.at("ese").get<double>();
      row.ase = rj.at("ase").get<double>();
      row.bias = rj.at("bias").get<double>();
      row.cp = rj.at("cp").get<double>();
      table.rows.push_back(row);
    }
    out.tables[key] = std::move(table);
  }
  return out;
}

}  // namespace mrri
