#include <nlohmann/json.hpp>

#include "mrri/estimate.hpp"

namespace mrri {

std::string meta_estimate_to_json(const MetaEstimate& est, const ModelSpec& spec) {
  if (est.theta.size() != spec.param_count())
    throw DimensionError("estimate does not match model spec layout");
  nlohmann::ordered_json j;
  nlohmann::ordered_json theta = nlohmann::ordered_json::object();
  const auto names = spec.component_names();
  const Eigen::VectorXd packed = est.theta.packed();
  for (int qx = 0; qx < packed.size(); ++qx) theta[names[qx]] = packed(qx);
  j["theta"] = theta;

  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (long r = 0; r < est.J.rows(); ++r) {
    std::vector<double> row(est.J.cols());
    for (long c = 0; c < est.J.cols(); ++c) row[c] = est.J(r, c);
    rows.push_back(row);
  }
  j["J"] = rows;
  j["node_path"] = est.node_path.str();
  j["method"] = est.method;
  j["ridge"] = {{"max_eps", est.prov.max_ridge_eps},
                {"ridged_nodes", est.prov.ridged_nodes}};
  j["counters"] = {{"leaf_fits", est.prov.leaf_fits},
                   {"score_evals", est.prov.score_evals},
                   {"reduces", est.prov.reduces},
                   {"iterations", est.prov.iterations},
                   {"converged", est.prov.converged}};
  return j.dump();
}

MetaEstimate meta_estimate_from_json(const std::string& text,
                                     const ModelSpec& spec) {
  nlohmann::json j = nlohmann::json::parse(text);
  MetaEstimate est;
  const auto names = spec.component_names();
  Eigen::VectorXd packed(spec.param_count());
  for (int qx = 0; qx < packed.size(); ++qx)
    packed(qx) = j.at("theta").at(names[qx]).get<double>();
  est.theta = ThetaParams::unpack(packed, spec);

  const auto& rows = j.at("J");
  est.J.resize(rows.size(), rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto row = rows[r].get<std::vector<double>>();
    if (row.size() != rows.size()) throw IoError("J is not square");
    for (std::size_t c = 0; c < row.size(); ++c)
      est.J(static_cast<long>(r), static_cast<long>(c)) = row[c];
  }
  est.node_path = NodePath::parse(j.at("node_path").get<std::string>());
  est.method = j.at("method").get<std::string>();
  est.prov.max_ridge_eps = j.at("ridge").at("max_eps").get<double>();
  est.prov.ridged_nodes = j.at("ridge").at("ridged_nodes").get<int>();
  est.prov.leaf_fits = j.at("counters").at("leaf_fits").get<long>();
  est.prov.score_evals = j.at("counters").at("score_evals").get<long>();
  est.prov.reduces = j.at("counters").at("reduces").get<long>();
  est.prov.iterations = j.at("counters").at("iterations").get<int>();
  est.prov.converged = j.at("counters").at("converged").get<bool>();
  return est;
}

}  // namespace mrri
