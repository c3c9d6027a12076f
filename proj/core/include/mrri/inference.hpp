#pragma once

#include <span>
#include <string>
#include <utility>

#include "mrri/estimate.hpp"

namespace mrri {

// Standard normal CDF via erf; absolute error below 1e-12 on the real line.
double normal_cdf(double x);
// Inverse CDF: Wichura-style rational approximation polished with one Newton
// step on normal_cdf.
double normal_quantile(double p);

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  double null_value = 0.0;
  int q1 = 0;
  int q2 = 0;
  std::string contrast;  // human-readable description
};

// Wald interval theta_q +/- z_{(1+level)/2} sqrt((J^{-1})_qq).
std::pair<double, double> wald_interval(const MetaEstimate& est, int component,
                                        double level);

// Z statistic for H0: theta_{q1} - theta_{q2} = rho0, with the variance read
// from J^{-1} (including the covariance term).
TestResult z_contrast(const MetaEstimate& est, int q1, int q2, double rho0);

// Cosine of the angle between the two standardized estimate vectors
// theta_q / sqrt((J^{-1})_qq).
double cosine_agreement(const MetaEstimate& a, const MetaEstimate& b);

// Data-dependent critical value: the 5% quantile of the two-sided p-values of
// the supplied Z statistics, and the Gaussian critical value it corresponds
// to. Quantile uses linear interpolation between order statistics.
struct CriticalValueSummary {
  double p_quantile = 0.0;
  double z_crit = 0.0;
};
CriticalValueSummary calibrated_critical_value(std::span<const double> z_stats,
                                               double quantile = 0.05);

std::string test_result_to_json(const TestResult& result);
std::string wald_interval_to_json(const MetaEstimate& est, int component,
                                  double level, const ModelSpec& spec);

}  // namespace mrri
