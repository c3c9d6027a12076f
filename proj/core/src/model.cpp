#include "mrri/model.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace mrri {

namespace {

double sq_dist(const Location& a, const Location& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.coords.size(); ++k) {
    double delta = b.coords[k] - a.coords[k];
    s += delta * delta;
  }
  return s;
}

// 0-based position of a ROI label within the model's label ordering. Specs
// with roi_count rois expect labels 1..roi_count on the locations.
int roi_slot(const Location& loc, const ModelSpec& spec) {
  if (spec.roi_count == 1) return 0;
  if (!loc.roi.has_value())
    throw InvalidDomainError("two-ROI model requires ROI labels");
  int label = *loc.roi;
  if (label < 1 || label > spec.roi_count)
    throw InvalidDomainError("ROI label out of range for model spec");
  return label - 1;
}

}  // namespace

void ModelSpec::validate() const {
  if (q < 1) throw DimensionError("covariate count must be >= 1");
  if (roi_count != 1 && roi_count != 2)
    throw DimensionError("roi_count must be 1 or 2");
  if (cov_kind == CovKind::StationaryGaussian && roi_count != 1)
    throw DimensionError("stationary kernel requires roi_count = 1");
  if (cov_kind == CovKind::StationaryGaussian &&
      tau_structure == TauStructure::PerRoiTau2)
    throw DimensionError("per-ROI tau requires the nonstationary kernel");
}

int ModelSpec::rho_index(int roi_k, int l) const {
  if (cov_kind != CovKind::NonstationaryPs)
    throw DimensionError("rho coefficients exist only for the nonstationary kernel");
  if (roi_k < 1 || roi_k > roi_count || l < 0 || l >= q)
    throw DimensionError("rho coefficient index out of range");
  return beta_count() + tau_count() + (roi_k - 1) * q + l;
}

std::vector<std::string> ModelSpec::component_names() const {
  std::vector<std::string> names;
  if (mean_kind == MeanKind::ConstantIntercept) {
    names.push_back("beta");
  } else {
    for (int j = 0; j < q; ++j) names.push_back("beta[" + std::to_string(j) + "]");
  }
  if (cov_kind == CovKind::StationaryGaussian) {
    names.push_back("log_tau2");
    names.push_back("log_rho2");
  } else {
    if (tau_count() == 1) {
      names.push_back("log_tau2");
    } else {
      for (int k = 1; k <= tau_count(); ++k)
        names.push_back("log_tau2_" + std::to_string(k));
    }
    for (int k = 1; k <= rho_block_count(); ++k)
      for (int l = 0; l < q; ++l)
        names.push_back("rho" + std::to_string(k) + "[" + std::to_string(l) + "]");
  }
  names.push_back("log_sigma2");
  return names;
}

Eigen::VectorXd ThetaParams::packed() const {
  Eigen::VectorXd v(size());
  v.head(beta.size()) = beta;
  v.segment(beta.size(), gamma.size()) = gamma;
  v(v.size() - 1) = log_sigma2;
  return v;
}

ThetaParams ThetaParams::unpack(const Eigen::VectorXd& v, const ModelSpec& spec) {
  if (v.size() != spec.param_count())
    throw DimensionError("packed parameter length does not match model spec");
  ThetaParams t;
  t.beta = v.head(spec.beta_count());
  t.gamma = v.segment(spec.beta_count(), spec.gamma_count());
  t.log_sigma2 = v(v.size() - 1);
  return t;
}

double mean_value(const ModelSpec& spec, const Eigen::VectorXd& x_row,
                  const Eigen::VectorXd& beta) {
  if (spec.mean_kind == MeanKind::ConstantIntercept) {
    if (beta.size() != 1) throw DimensionError("constant mean expects one beta");
    return beta(0);
  }
  if (x_row.size() != beta.size())
    throw DimensionError("covariate/beta length mismatch");
  return x_row.dot(beta);
}

double cov_stationary(const Location& a, const Location& b, double tau2,
                      double rho2) {
  if (a.coords.size() != b.coords.size())
    throw DimensionError("location dimension mismatch");
  return tau2 * std::exp(-rho2 * sq_dist(a, b));
}

namespace {

// tau(s_j, s_j'): tau^2 for the single-variance structure, the geometric-mean
// ROI form {(tau1^2)^{1(j in S1)+1(j' in S1)} (tau2^2)^{...}}^{1/2} otherwise.
double tau_pair(const Location& a, const Location& b,
                const Eigen::VectorXd& gamma, const ModelSpec& spec) {
  if (spec.tau_count() == 1) return std::exp(gamma(0));
  double log_tau = 0.0;
  for (const Location* loc : {&a, &b})
    log_tau += 0.5 * gamma(roi_slot(*loc, spec));
  return std::exp(log_tau);
}

double range_of(const Location& loc, const Eigen::VectorXd& x_row,
                const Eigen::VectorXd& gamma, const ModelSpec& spec) {
  int slot = roi_slot(loc, spec);
  int offset = spec.tau_count() + slot * spec.q;
  return std::exp(x_row.dot(gamma.segment(offset, spec.q)));
}

}  // namespace

double cov_nonstationary(const Location& a, const Location& b,
                         const Eigen::VectorXd& x_row,
                         const Eigen::VectorXd& gamma, const ModelSpec& spec) {
  if (a.coords.size() != b.coords.size())
    throw DimensionError("location dimension mismatch");
  if (gamma.size() != spec.gamma_count())
    throw DimensionError("gamma length does not match model spec");
  const double d = static_cast<double>(a.coords.size());
  const double ra = range_of(a, x_row, gamma, spec);
  const double rb = range_of(b, x_row, gamma, spec);
  const double sum = ra + rb;
  const double tau = tau_pair(a, b, gamma, spec);
  return std::pow(2.0, d / 2.0) * tau * std::pow(ra * rb / (sum * sum), d / 4.0) *
         std::exp(-2.0 * sq_dist(a, b) / sum);
}

Eigen::MatrixXd build_cov_matrix(const std::vector<Location>& locations,
                                 const Eigen::VectorXd& x_row,
                                 const ThetaParams& theta,
                                 const ModelSpec& spec) {
  if (locations.empty()) throw DimensionError("empty location list");
  const int s = static_cast<int>(locations.size());
  Eigen::MatrixXd c(s, s);
  for (int r = 0; r < s; ++r) {
    for (int t = r; t < s; ++t) {
      double v;
      if (spec.cov_kind == CovKind::StationaryGaussian) {
        v = cov_stationary(locations[r], locations[t], std::exp(theta.gamma(0)),
                           std::exp(theta.gamma(1)));
      } else {
        v = cov_nonstationary(locations[r], locations[t], x_row, theta.gamma, spec);
      }
      c(r, t) = v;
      c(t, r) = v;
    }
  }
  c.diagonal().array() += theta.sigma2();
  return c;
}

double SpdFactor::log_det() const {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

SpdFactor factorize_spd(const Eigen::MatrixXd& m) {
  const double mean_diag = m.diagonal().mean();
  const double ladder[] = {0.0, 1e-10, 1e-8, 1e-6};
  std::vector<double> attempted;
  for (double eps : ladder) {
    Eigen::MatrixXd work = m;
    double jitter = eps * mean_diag;
    if (eps > 0.0) {
      work.diagonal().array() += jitter;
      attempted.push_back(jitter);
    }
    Eigen::LLT<Eigen::MatrixXd> llt(work);
    if (llt.info() == Eigen::Success &&
        llt.matrixLLT().diagonal().minCoeff() > 0.0) {
      SpdFactor f;
      f.llt = std::move(llt);
      f.jitter = eps > 0.0 ? jitter : 0.0;
      return f;
    }
  }
  throw NonPdError("matrix is not positive definite after jitter escalation",
                   attempted);
}

CorrelationSummary implied_correlation_summary(const ThetaParams& theta,
                                               const ModelSpec& spec,
                                               const Eigen::VectorXd& x_profile,
                                               int roi_a, int roi_b, int d) {
  if (spec.cov_kind != CovKind::NonstationaryPs)
    throw DimensionError("correlation summary requires the nonstationary kernel");
  if (roi_a < 1 || roi_a > spec.roi_count || roi_b < 1 || roi_b > spec.roi_count)
    throw DimensionError("ROI index out of range");
  if (d < 1) throw DimensionError("dimension must be >= 1");
  // Two synthetic coincident locations carrying the requested ROI labels.
  Location a{std::vector<double>(d, 0.0), roi_a};
  Location b{std::vector<double>(d, 0.0), roi_b};
  if (spec.roi_count == 1) {
    a.roi.reset();
    b.roi.reset();
  }
  CorrelationSummary out;
  out.amplitude = cov_nonstationary(a, b, x_profile, theta.gamma, spec);
  const double ra = range_of(a, x_profile, theta.gamma, spec);
  const double rb = range_of(b, x_profile, theta.gamma, spec);
  out.decay_rate = 2.0 / (ra + rb);
  return out;
}

namespace {

constexpr int kLayoutVersion = 1;

std::string mean_kind_name(MeanKind k) {
  return k == MeanKind::ConstantIntercept ? "constant-intercept" : "linear-in-x";
}
std::string cov_kind_name(CovKind k) {
  return k == CovKind::StationaryGaussian ? "stationary-gaussian"
                                          : "nonstationary-ps";
}
std::string tau_structure_name(TauStructure t) {
  return t == TauStructure::SingleTau2 ? "single-tau2" : "per-roi-tau2";
}

}  // namespace

std::string model_spec_to_json(const ModelSpec& spec) {
  nlohmann::ordered_json j;
  j["layout_version"] = kLayoutVersion;
  j["mean_kind"] = mean_kind_name(spec.mean_kind);
  j["cov_kind"] = cov_kind_name(spec.cov_kind);
  j["q"] = spec.q;
  j["roi_count"] = spec.roi_count;
  j["tau_structure"] = tau_structure_name(spec.tau_structure);
  return j.dump();
}

ModelSpec model_spec_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (j.at("layout_version").get<int>() != kLayoutVersion)
    throw IoError("unsupported model spec layout version");
  ModelSpec spec;
  std::string mean = j.at("mean_kind").get<std::string>();
  if (mean == "constant-intercept") spec.mean_kind = MeanKind::ConstantIntercept;
  else if (mean == "linear-in-x") spec.mean_kind = MeanKind::LinearInX;
  else throw IoError("unknown mean_kind: " + mean);
  std::string cov = j.at("cov_kind").get<std::string>();
  if (cov == "stationary-gaussian") spec.cov_kind = CovKind::StationaryGaussian;
  else if (cov == "nonstationary-ps") spec.cov_kind = CovKind::NonstationaryPs;
  else throw IoError("unknown cov_kind: " + cov);
  spec.q = j.at("q").get<int>();
  spec.roi_count = j.at("roi_count").get<int>();
  std::string tau = j.at("tau_structure").get<std::string>();
  if (tau == "single-tau2") spec.tau_structure = TauStructure::SingleTau2;
  else if (tau == "per-roi-tau2") spec.tau_structure = TauStructure::PerRoiTau2;
  else throw IoError("unknown tau_structure: " + tau);
  spec.validate();
  return spec;
}

std::string theta_to_json(const ThetaParams& theta, const ModelSpec& spec) {
  if (theta.size() != spec.param_count())
    throw DimensionError("theta does not match model spec layout");
  nlohmann::ordered_json j;
  j["layout_version"] = kLayoutVersion;
  j["beta"] = std::vector<double>(theta.beta.begin(), theta.beta.end());
  j["gamma"] = std::vector<double>(theta.gamma.begin(), theta.gamma.end());
  j["log_sigma2"] = theta.log_sigma2;
  return j.dump();
}

ThetaParams theta_from_json(const std::string& text, const ModelSpec& spec) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (j.at("layout_version").get<int>() != kLayoutVersion)
    throw IoError("unsupported theta layout version");
  ThetaParams t;
  auto beta = j.at("beta").get<std::vector<double>>();
  auto gamma = j.at("gamma").get<std::vector<double>>();
  t.beta = Eigen::Map<const Eigen::VectorXd>(beta.data(), beta.size());
  t.gamma = Eigen::Map<const Eigen::VectorXd>(gamma.data(), gamma.size());
  t.log_sigma2 = j.at("log_sigma2").get<double>();
  if (t.size() != spec.param_count())
    throw DimensionError("theta JSON does not match model spec layout");
  return t;
}

}  // namespace mrri
