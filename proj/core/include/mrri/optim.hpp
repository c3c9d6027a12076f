#pragma once

#include <Eigen/Dense>
#include <functional>

namespace mrri {

struct OptimResult {
  Eigen::VectorXd x;
  double f = 0.0;
  Eigen::VectorXd grad;
  int iterations = 0;
  bool converged = false;
};

struct BfgsOptions {
  double grad_tol = 1e-6;  // scaled by max(1, |f|)
  double step_tol = 1e-9;
  int max_iter = 500;
};

// BFGS minimization with backtracking Armijo line search. `value` is used in
// the line search; `value_and_grad` at accepted points. Non-finite objective
// values are treated as +inf (the line search backs away from them). Throws
// NonConvergenceError past max_iter.
OptimResult bfgs_minimize(
    const std::function<double(const Eigen::VectorXd&)>& value,
    const std::function<std::pair<double, Eigen::VectorXd>(const Eigen::VectorXd&)>&
        value_and_grad,
    const Eigen::VectorXd& x0, const BfgsOptions& opts);

struct NelderMeadOptions {
  double initial_step = 0.1;
  double f_tol = 1e-12;
  double x_tol = 1e-10;
  int max_evals = 200000;
  int restarts = 2;
};

// Derivative-free simplex minimization; used by validation oracles only.
OptimResult nelder_mead_minimize(
    const std::function<double(const Eigen::VectorXd&)>& value,
    const Eigen::VectorXd& x0, const NelderMeadOptions& opts);

}  // namespace mrri
