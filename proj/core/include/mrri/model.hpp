#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "mrri/domain.hpp"
#include "mrri/errors.hpp"

namespace mrri {

enum class MeanKind { ConstantIntercept, LinearInX };
enum class CovKind { StationaryGaussian, NonstationaryPs };
enum class TauStructure { SingleTau2, PerRoiTau2 };

// Model layout. Fixes the packed parameter ordering shared by every score and
// sensitivity block:
//   beta (q1) | gamma (q2) | log_sigma2
// with gamma = (log_tau2, log_rho2) for the stationary Gaussian kernel and
// gamma = (log_tau2 [, log_tau2_2], rho1 in R^q [, rho2 in R^q]) for the
// nonstationary kernel.
struct ModelSpec {
  MeanKind mean_kind = MeanKind::LinearInX;
  CovKind cov_kind = CovKind::StationaryGaussian;
  int q = 1;          // covariate count (columns of X)
  int roi_count = 1;  // 1 or 2
  TauStructure tau_structure = TauStructure::SingleTau2;

  int beta_count() const { return mean_kind == MeanKind::ConstantIntercept ? 1 : q; }
  int tau_count() const {
    if (cov_kind == CovKind::StationaryGaussian) return 1;
    return tau_structure == TauStructure::PerRoiTau2 ? roi_count : 1;
  }
  int rho_block_count() const {
    return cov_kind == CovKind::StationaryGaussian ? 0 : roi_count;
  }
  int gamma_count() const {
    if (cov_kind == CovKind::StationaryGaussian) return 2;  // log_tau2, log_rho2
    return tau_count() + rho_block_count() * q;
  }
  int param_count() const { return beta_count() + gamma_count() + 1; }

  // Index of the l-th coefficient of rho_k (k 1-based ROI, l in [0,q)) within
  // the packed parameter vector.
  int rho_index(int roi_k, int l) const;
  int log_sigma2_index() const { return param_count() - 1; }

  std::vector<std::string> component_names() const;
  void validate() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// Full parameter vector theta = (beta, gamma, log_sigma2), with all
// variance-type parameters stored on the unconstrained log scale.
struct ThetaParams {
  Eigen::VectorXd beta;
  Eigen::VectorXd gamma;
  double log_sigma2 = 0.0;

  double sigma2() const { return std::exp(log_sigma2); }
  Eigen::VectorXd packed() const;
  static ThetaParams unpack(const Eigen::VectorXd& v, const ModelSpec& spec);
  int size() const { return static_cast<int>(beta.size() + gamma.size()) + 1; }
};

// mu{s_j; X_i, beta}: X_i' beta for the linear mean, beta for the constant
// intercept. The mean does not vary over locations within a block.
double mean_value(const ModelSpec& spec, const Eigen::VectorXd& x_row,
                  const Eigen::VectorXd& beta);

// Stationary Gaussian kernel tau^2 exp{-rho^2 |s_j' - s_j|^2}.
double cov_stationary(const Location& a, const Location& b, double tau2,
                      double rho2);

// Nonstationary kernel-convolution covariance
//   2^{d/2} tau(s_j,s_j') {r_j r_j' / (r_j + r_j')^2}^{d/4}
//     exp{-2 |s_j'-s_j|^2 / (r_j + r_j')}
// with per-location range r_j = exp{X_i' rho(s_j)} and rho(s_j) selected by
// the ROI label of s_j.
double cov_nonstationary(const Location& a, const Location& b,
                         const Eigen::VectorXd& x_row,
                         const Eigen::VectorXd& gamma, const ModelSpec& spec);

// Dense covariance of a location list: kernel entries plus nugget sigma^2 on
// the diagonal.
Eigen::MatrixXd build_cov_matrix(const std::vector<Location>& locations,
                                 const Eigen::VectorXd& x_row,
                                 const ThetaParams& theta,
                                 const ModelSpec& spec);

// Cholesky factorization with the diagonal jitter ladder
// {1e-10, 1e-8, 1e-6} x mean(diag). Throws NonPdError carrying the attempted
// jitter values when the ladder is exhausted.
struct SpdFactor {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;  // absolute jitter added to the diagonal (0 if none)
  double log_det() const;
};
SpdFactor factorize_spd(const Eigen::MatrixXd& m);

// Zero-distance covariance amplitude and exponential decay rate (coefficient
// of the squared distance) implied by a nonstationary fit for a pair of ROIs
// under covariate profile x_profile, on a domain of dimension d.
struct CorrelationSummary {
  double amplitude = 0.0;
  double decay_rate = 0.0;
};
CorrelationSummary implied_correlation_summary(const ThetaParams& theta,
                                               const ModelSpec& spec,
                                               const Eigen::VectorXd& x_profile,
                                               int roi_a, int roi_b, int d);

// JSON serialization (layout-versioned).
std::string model_spec_to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const std::string& text);
std::string theta_to_json(const ThetaParams& theta, const ModelSpec& spec);
ThetaParams theta_from_json(const std::string& text, const ModelSpec& spec);

}  // namespace mrri
