#include "cli.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "mrri/dataset_io.hpp"
#include "mrri/inference.hpp"
#include "mrri/runtime.hpp"
#include "mrri/simulator.hpp"

namespace mrri {

namespace {

constexpr const char* kToolVersion = "mrri 0.1.0";

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

nlohmann::ordered_json provenance_record(const nlohmann::ordered_json& config,
                                         std::uint64_t seed) {
  nlohmann::ordered_json p;
  std::ostringstream hex;
  hex << std::hex << fnv1a64(config.dump());
  p["config_hash"] = "fnv1a:" + hex.str();
  p["seed"] = seed;
  p["tool"] = kToolVersion;
  p["format_version"] = 1;
  return p;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

// Attaches the provenance record to a serialized JSON object.
std::string with_provenance(const std::string& json_text,
                            const nlohmann::ordered_json& prov) {
  nlohmann::ordered_json j = nlohmann::ordered_json::parse(json_text);
  j["provenance"] = prov;
  return j.dump(2) + "\n";
}

struct GlobalOpts {
  std::uint64_t seed = 20260808ULL;
  int workers = 1;
  double ridge_max = 1e-6;
  double tol = 1e-6;
  int max_iter = 500;
  int min_leaf_size = kDefaultMinLeafSize;
};

FitOptions fit_options(const GlobalOpts& g) {
  FitOptions f;
  f.grad_tol = g.tol;
  f.max_iter = g.max_iter;
  return f;
}

RidgePolicy ridge_policy(const GlobalOpts& g) {
  RidgePolicy policy;
  policy.eps_ladder.clear();
  policy.eps_ladder.push_back(0.0);
  for (double eps = 1e-10; eps <= g.ridge_max * (1.0 + 1e-12); eps *= 100.0)
    policy.eps_ladder.push_back(eps);
  return policy;
}

EstimatorSelection parse_estimators(const std::string& text) {
  if (text == "recursive") return EstimatorSelection::Recursive;
  if (text == "sequential") return EstimatorSelection::Sequential;
  if (text == "both") return EstimatorSelection::Both;
  throw Error("unknown estimator selection: " + text);
}

int run_parsed(CLI::App& app, const GlobalOpts& g,
               const std::function<int()>& body, std::ostream& err) {
  (void)app;
  (void)g;
  try {
    return body();
  } catch (const Error& e) {
    nlohmann::ordered_json j;
    j["error"] = e.what();
    err << j.dump() << "\n";
    return 1;
  }
}

}  // namespace

int cli_run(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"Multi-resolution recursive integration for Gaussian process models"};
  app.require_subcommand(1);
  // Global flags may follow the subcommand.


  GlobalOpts g;
  app.add_option("--seed", g.seed, "RNG seed (64-bit)");
  app.add_option("--workers", g.workers, "worker threads for parallel stages");
  app.add_option("--ridge-max", g.ridge_max, "maximum variability ridge epsilon");
  app.add_option("--tol", g.tol, "scaled gradient tolerance for leaf fits");
  app.add_option("--max-iter", g.max_iter, "maximum optimizer iterations");
  app.add_option("--min-leaf-size", g.min_leaf_size, "minimum leaf size");

  // simulate ----------------------------------------------------------------
  auto* simulate = app.add_subcommand("simulate", "draw a dataset and write a MRRIDATA file");
  std::string sim_preset = "sim1-desk";
  std::string sim_config;
  int sim_replicate = 0;
  int sim_n = -1;
  std::string sim_out, sim_spec_out, sim_theta_out;
  simulate->add_option("--preset", sim_preset, "configuration preset");
  simulate->add_option("--config", sim_config, "SimConfig JSON file (overrides --preset)");
  simulate->add_option("--replicate", sim_replicate, "replicate id");
  simulate->add_option("--n-obs", sim_n, "override observation count");
  simulate->add_option("-o,--out", sim_out, "output dataset path")->required();
  simulate->add_option("--spec-out", sim_spec_out, "write the model spec JSON here");
  simulate->add_option("--theta-out", sim_theta_out, "write theta_true JSON here");

  // partition ---------------------------------------------------------------
  auto* partition = app.add_subcommand("partition", "build a recursive partition");
  std::string part_data, part_out, part_strategy = "coordinate-split";
  std::vector<int> part_branching;
  partition->add_option("--data", part_data, "MRRIDATA file supplying locations")->required();
  partition->add_option("--branching", part_branching, "branching per resolution, e.g. 2 2 4")->required();
  partition->add_option("--strategy", part_strategy,
                        "coordinate-split | roi-balanced-coordinate-split");
  partition->add_option("-o,--out", part_out, "output partition JSON")->required();

  // fit ---------------------------------------------------------------------
  auto* fit = app.add_subcommand("fit", "maximum likelihood fit of one node block");
  std::string fit_data, fit_spec, fit_partition, fit_node = "0", fit_init, fit_out;
  fit->add_option("--data", fit_data)->required();
  fit->add_option("--spec", fit_spec, "model spec JSON")->required();
  fit->add_option("--partition", fit_partition, "partition JSON")->required();
  fit->add_option("--node", fit_node, "node path, e.g. 1.2");
  fit->add_option("--init", fit_init, "starting theta JSON");
  fit->add_option("-o,--out", fit_out, "output estimate JSON")->required();

  // integrate ---------------------------------------------------------------
  auto* integrate_cmd = app.add_subcommand("integrate", "multi-resolution integrated estimate");
  std::string int_data, int_spec, int_partition, int_out, int_spill;
  bool int_recursive = false, int_sequential = false;
  integrate_cmd->add_option("--data", int_data)->required();
  integrate_cmd->add_option("--spec", int_spec)->required();
  integrate_cmd->add_option("--partition", int_partition)->required();
  integrate_cmd->add_flag("--recursive", int_recursive, "recursive weight refresh schedule");
  integrate_cmd->add_flag("--sequential", int_sequential, "single-pass leaf-estimate weights");
  integrate_cmd->add_option("--spill-dir", int_spill, "spill leaf score blocks here");
  integrate_cmd->add_option("-o,--out", int_out)->required();

  // test ----------------------------------------------------------------------
  auto* test_cmd = app.add_subcommand("test", "Z test of a component contrast");
  std::string test_estimate, test_spec, test_out;
  std::vector<int> test_contrast;
  double test_null = 0.0;
  test_cmd->add_option("--estimate", test_estimate, "estimate JSON")->required();
  test_cmd->add_option("--spec", test_spec, "model spec JSON")->required();
  test_cmd->add_option("--contrast", test_contrast, "two component indices")
      ->expected(2)
      ->required();
  test_cmd->add_option("--null", test_null, "null value of the difference");
  test_cmd->add_option("-o,--out", test_out, "output result JSON");

  // study ---------------------------------------------------------------------
  auto* study = app.add_subcommand("study", "Monte Carlo study with metric tables");
  std::string study_preset = "sim1-desk", study_out, study_estimators, study_config;
  int study_replicates = -1;
  bool study_full_mle = false;
  study->add_option("--preset", study_preset, "sim1[-desk] | sim2[-desk] | sim3[-desk]");
  study->add_option("--config", study_config, "SimConfig JSON file (overrides --preset)");
  study->add_option("--replicates", study_replicates, "override replicate count");
  study->add_option("--estimators", study_estimators, "recursive | sequential | both");
  study->add_flag("--full-mle", study_full_mle, "also fit the full-domain MLE");
  study->add_option("-o,--out", study_out, "write the study JSON here");

  // info ----------------------------------------------------------------------
  auto* info = app.add_subcommand("info", "echo a MRRIDATA file header");
  std::string info_path;
  info->add_option("file", info_path)->required();

  for (auto* sub : app.get_subcommands([](const CLI::App*) { return true; }))
    sub->fallthrough();

  std::vector<const char*> argv;
  argv.push_back("mrri");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  }

  if (simulate->parsed()) {
    return run_parsed(app, g, [&]() {
      SimConfig config = sim_config.empty()
                             ? preset(sim_preset)
                             : sim_config_from_json(read_file(sim_config));
      config.seed = g.seed;
      if (sim_n > 0) config.n_obs = sim_n;
      const Dataset data = simulate_dataset(config, sim_replicate);
      write_dataset(sim_out, data);

      nlohmann::ordered_json cfg;
      cfg["command"] = "simulate";
      cfg["sim_config"] = nlohmann::ordered_json::parse(sim_config_to_json(config));
      cfg["replicate"] = sim_replicate;
      const auto prov = provenance_record(cfg, g.seed);
      write_file(sim_out + ".provenance.json", prov.dump(2) + "\n");
      if (!sim_spec_out.empty())
        write_file(sim_spec_out,
                   with_provenance(model_spec_to_json(config.spec), prov));
      if (!sim_theta_out.empty())
        write_file(sim_theta_out,
                   with_provenance(theta_to_json(config.theta_true, config.spec),
                                   prov));
      nlohmann::ordered_json summary;
      summary["written"] = sim_out;
      summary["n_obs"] = config.n_obs;
      summary["n_locations"] = static_cast<long>(data.Y.cols());
      summary["provenance"] = prov;
      out << summary.dump(2) << "\n";
      return 0;
    }, err);
  }

  if (partition->parsed()) {
    return run_parsed(app, g, [&]() {
      const SpatialDomain domain = read_locations(part_data);
      PartitionStrategy strategy;
      if (part_strategy == "coordinate-split")
        strategy = PartitionStrategy::CoordinateSplit;
      else if (part_strategy == "roi-balanced-coordinate-split")
        strategy = PartitionStrategy::RoiBalancedCoordinateSplit;
      else
        throw Error("unknown strategy: " + part_strategy);
      const PartitionTree tree =
          build_partition(domain, static_cast<int>(part_branching.size()),
                          part_branching, strategy, g.min_leaf_size);
      nlohmann::ordered_json cfg;
      cfg["command"] = "partition";
      cfg["data"] = part_data;
      cfg["branching"] = part_branching;
      cfg["strategy"] = part_strategy;
      cfg["min_leaf_size"] = g.min_leaf_size;
      write_file(part_out, with_provenance(tree.to_json_string(),
                                           provenance_record(cfg, g.seed)));
      out << "partition with " << tree.leaf_count() << " leaves written to "
          << part_out << "\n";
      return 0;
    }, err);
  }

  if (fit->parsed()) {
    return run_parsed(app, g, [&]() {
      const ModelSpec spec = model_spec_from_json(read_file(fit_spec));
      const PartitionTree tree =
          PartitionTree::from_json_string(read_file(fit_partition));
      FileDataSource source(fit_data);
      const DataBlock block = source.block(tree, NodePath::parse(fit_node));
      const ThetaParams init = fit_init.empty()
                                   ? default_init(block, spec)
                                   : theta_from_json(read_file(fit_init), spec);
      const MetaEstimate est = fit_local_mle(block, spec, init, fit_options(g));
      nlohmann::ordered_json cfg;
      cfg["command"] = "fit";
      cfg["node"] = fit_node;
      cfg["tol"] = g.tol;
      write_file(fit_out, with_provenance(meta_estimate_to_json(est, spec),
                                          provenance_record(cfg, g.seed)));
      out << "node " << fit_node << " fitted in " << est.prov.iterations
          << " iterations\n";
      return 0;
    }, err);
  }

  if (integrate_cmd->parsed()) {
    return run_parsed(app, g, [&]() {
      if (int_recursive == int_sequential)
        throw Error("choose exactly one of --recursive / --sequential");
      const ModelSpec spec = model_spec_from_json(read_file(int_spec));
      const PartitionTree tree =
          PartitionTree::from_json_string(read_file(int_partition));
      FileDataSource source(int_data);
      const IntegrationMethod method = int_recursive
                                           ? IntegrationMethod::Recursive
                                           : IntegrationMethod::Sequential;
      ExecuteOptions opts;
      opts.fit = fit_options(g);
      opts.ridge = ridge_policy(g);
      if (!int_spill.empty()) {
        opts.spill_dir = int_spill;
        opts.keep_node_estimates = true;
      }
      const IntegrateResult result =
          execute(plan(tree, method, g.workers), tree, source, spec, opts);
      // Worker count is omitted: output is invariant to it by contract.
      nlohmann::ordered_json cfg;
      cfg["command"] = "integrate";
      cfg["method"] = int_recursive ? "recursive" : "sequential";
      cfg["tol"] = g.tol;
      write_file(int_out, with_provenance(meta_estimate_to_json(result.root, spec),
                                          provenance_record(cfg, g.seed)));
      out << (int_recursive ? "recursive" : "sequential") << " estimate written to "
          << int_out << " (score evaluations: " << result.counters.score_evals
          << ")\n";
      return 0;
    }, err);
  }

  if (test_cmd->parsed()) {
    return run_parsed(app, g, [&]() {
      const ModelSpec spec = model_spec_from_json(read_file(test_spec));
      const MetaEstimate est =
          meta_estimate_from_json(read_file(test_estimate), spec);
      const TestResult result =
          z_contrast(est, test_contrast[0], test_contrast[1], test_null);
      nlohmann::ordered_json cfg;
      cfg["command"] = "test";
      cfg["contrast"] = test_contrast;
      cfg["null"] = test_null;
      const std::string text =
          with_provenance(test_result_to_json(result), provenance_record(cfg, g.seed));
      if (!test_out.empty()) write_file(test_out, text);
      out << text;
      return 0;
    }, err);
  }

  if (study->parsed()) {
    return run_parsed(app, g, [&]() {
      SimConfig config = study_config.empty()
                             ? preset(study_preset)
                             : sim_config_from_json(read_file(study_config));
      config.seed = g.seed;
      config.workers = g.workers;
      config.fit = fit_options(g);
      if (study_replicates > 0) config.replicates = study_replicates;
      if (!study_estimators.empty())
        config.estimators = parse_estimators(study_estimators);
      config.fit_full_mle = study_full_mle;

      WorkerPool pool(g.workers);
      const StudyResult result = run_study(config, &pool);
      for (const auto& [key, table] : result.tables)
        out << metrics_table_to_text(table) << "\n";
      if (!study_out.empty()) {
        nlohmann::ordered_json cfg;
        cfg["command"] = "study";
        cfg["preset"] = study_preset;
        cfg["replicates"] = config.replicates;
        cfg["estimators"] = study_estimators.empty() ? "preset" : study_estimators;
        write_file(study_out, with_provenance(study_result_to_json(result),
                                              provenance_record(cfg, g.seed)));
        out << "study records written to " << study_out << "\n";
      }
      return 0;
    }, err);
  }

  if (info->parsed()) {
    return run_parsed(app, g, [&]() {
      const DatasetHeader h = read_dataset_header(info_path);
      nlohmann::ordered_json j;
      j["magic"] = "MRRIDATA";
      j["version"] = h.version;
      j["n_obs"] = h.n_obs;
      j["n_locations"] = h.n_locations;
      j["q"] = h.q;
      j["d"] = h.d;
      j["flags"] = h.flags;
      j["has_roi"] = h.has_roi();
      j["score_block"] = h.is_score_block();
      nlohmann::ordered_json cfg;
      cfg["command"] = "info";
      cfg["file"] = info_path;
      j["provenance"] = provenance_record(cfg, g.seed);
      out << j.dump(2) << "\n";
      return 0;
    }, err);
  }

  err << "usage error: no subcommand\n";
  return 2;
}

}  // namespace mrri
