#include "mrri/inference.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <nlohmann/json.hpp>

#include "mrri/errors.hpp"

namespace mrri {

double normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

namespace {

// Wichura (AS 241) rational approximation for the standard normal quantile.
double quantile_approx(double p) {
  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((2509.0809287301226727 * r + 33430.575583588128105) * r +
                 67265.770927008700853) *
                    r +
                45921.953931549871457) *
                   r +
               13731.693765509461125) *
                  r +
              1971.5909503065514427) *
                 r +
             133.14166789178437745) *
                r +
            3.387132872796366608) /
           (((((((5226.495278852545703 * r + 28729.085735721942674) * r +
                 39307.89580009271061) *
                    r +
                21213.794301586595867) *
                   r +
               5394.1960214247511077) *
                  r +
              687.1870074920579083) *
                 r +
             42.313330701600911252) *
                r +
            1.0);
  }
  double r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double value;
  if (r <= 5.0) {
    r -= 1.6;
    value = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r +
                  0.24178072517745061177) *
                     r +
                 1.27045825245236838258) *
                    r +
                3.64784832476320460504) *
                   r +
               5.7694972214606914055) *
                  r +
              4.6303378461565452959) *
                 r +
             1.42343711074968357734) /
            (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r +
                  0.0151986665636164571966) *
                     r +
                 0.14810397642748007459) *
                    r +
                0.68976733498510000455) *
                   r +
               1.6763848301838038494) *
                  r +
              2.05319162663775882187) *
                 r +
             1.0);
  } else {
    r -= 5.0;
    value = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                  0.0012426609473880784386) *
                     r +
                 0.026532189526576123093) *
                    r +
                0.29656057182850489123) *
                   r +
               1.7848265399172913358) *
                  r +
              5.4637849111641143699) *
                 r +
             6.6579046435011037772) /
            (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r +
                  1.8463183175100546818e-5) *
                     r +
                 7.868691311456132591e-4) *
                    r +
                0.0148753612908506148525) *
                   r +
               0.13692988092273580531) *
                  r +
              0.59983220655588793769) *
                 r +
             1.0);
  }
  return q < 0.0 ? -value : value;
}

constexpr double kSqrt2Pi = 2.5066282746310005024;

Eigen::MatrixXd covariance_of(const MetaEstimate& est) {
  Eigen::LLT<Eigen::MatrixXd> llt(est.J);
  if (llt.info() != Eigen::Success)
    throw ConditioningError("Godambe information is not positive definite");
  return llt.solve(Eigen::MatrixXd::Identity(est.J.rows(), est.J.cols()));
}

}  // namespace

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw Error("normal_quantile requires p in (0,1)");
  double x = quantile_approx(p);
  // One Newton polish against the erf-based CDF.
  const double density = std::exp(-0.5 * x * x) / kSqrt2Pi;
  if (density > 0.0) x -= (normal_cdf(x) - p) / density;
  return x;
}

Eigen::MatrixXd MetaEstimate::covariance() const { return covariance_of(*this); }

std::pair<double, double> wald_interval(const MetaEstimate& est, int component,
                                        double level) {
  if (!(level > 0.0 && level < 1.0))
    throw Error("confidence level must be in (0,1)");
  const Eigen::VectorXd packed = est.theta.packed();
  if (component < 0 || component >= packed.size())
    throw DimensionError("component index out of range");
  const Eigen::MatrixXd cov = covariance_of(est);
  const double se = std::sqrt(cov(component, component));
  const double z = normal_quantile(0.5 * (1.0 + level));
  return {packed(component) - z * se, packed(component) + z * se};
}

TestResult z_contrast(const MetaEstimate& est, int q1, int q2, double rho0) {
  const Eigen::VectorXd packed = est.theta.packed();
  if (q1 < 0 || q1 >= packed.size() || q2 < 0 || q2 >= packed.size())
    throw DimensionError("component index out of range");
  if (q1 == q2) throw DimensionError("contrast requires two distinct components");
  const Eigen::MatrixXd cov = covariance_of(est);
  const double var =
      cov(q1, q1) + cov(q2, q2) - 2.0 * cov(q1, q2);
  if (!(var > 0.0))
    throw ConditioningError("contrast variance is not positive");
  TestResult out;
  out.q1 = q1;
  out.q2 = q2;
  out.null_value = rho0;
  out.statistic = (packed(q1) - packed(q2) - rho0) / std::sqrt(var);
  out.p_value = 2.0 * (1.0 - normal_cdf(std::abs(out.statistic)));
  out.contrast = "theta[" + std::to_string(q1) + "] - theta[" +
                 std::to_string(q2) + "]";
  return out;
}

double cosine_agreement(const MetaEstimate& a, const MetaEstimate& b) {
  const Eigen::VectorXd pa = a.theta.packed();
  const Eigen::VectorXd pb = b.theta.packed();
  if (pa.size() != pb.size())
    throw DimensionError("estimates have different layouts");
  const Eigen::MatrixXd cov_a = covariance_of(a);
  const Eigen::MatrixXd cov_b = covariance_of(b);
  Eigen::VectorXd sa(pa.size()), sb(pb.size());
  for (int qx = 0; qx < pa.size(); ++qx) {
    sa(qx) = pa(qx) / std::sqrt(cov_a(qx, qx));
    sb(qx) = pb(qx) / std::sqrt(cov_b(qx, qx));
  }
  const double denom = sa.norm() * sb.norm();
  if (denom == 0.0) throw Error("cosine agreement of a zero vector");
  return sa.dot(sb) / denom;
}

CriticalValueSummary calibrated_critical_value(std::span<const double> z_stats,
                                               double quantile) {
  if (z_stats.empty()) throw Error("no Z statistics supplied");
  std::vector<double> p_values;
  p_values.reserve(z_stats.size());
  for (double z : z_stats)
    p_values.push_back(2.0 * (1.0 - normal_cdf(std::abs(z))));
  std::sort(p_values.begin(), p_values.end());
  // Linear interpolation between order statistics (R type-7 convention).
  const double h = quantile * (static_cast<double>(p_values.size()) - 1.0);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, p_values.size() - 1);
  CriticalValueSummary out;
  out.p_quantile = p_values[lo] + (h - std::floor(h)) * (p_values[hi] - p_values[lo]);
  out.z_crit = out.p_quantile >= 1.0 ? 0.0
                                     : normal_quantile(1.0 - 0.5 * out.p_quantile);
  return out;
}

std::string test_result_to_json(const TestResult& result) {
  nlohmann::ordered_json j;
  j["statistic"] = result.statistic;
  j["p_value"] = result.p_value;
  j["null_value"] = result.null_value;
  j["q1"] = result.q1;
  j["q2"] = result.q2;
  j["contrast"] = result.contrast;
  return j.dump();
}

std::string wald_interval_to_json(const MetaEstimate& est, int component,
                                  double level, const ModelSpec& spec) {
  auto [lo, hi] = wald_interval(est, component, level);
  nlohmann::ordered_json j;
  j["component"] = component;
  j["name"] = spec.component_names().at(component);
  j["level"] = level;
  j["lower"] = lo;
  j["upper"] = hi;
  j["estimate"] = est.theta.packed()(component);
  j["ridge_eps"] = est.prov.max_ridge_eps;
  return j.dump();
}

}  // namespace mrri
