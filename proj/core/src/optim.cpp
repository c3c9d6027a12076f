#include "mrri/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mrri/errors.hpp"

namespace mrri {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double sanitize(double f) { return std::isfinite(f) ? f : kInf; }

}  // namespace

OptimResult bfgs_minimize(
    const std::function<double(const Eigen::VectorXd&)>& value,
    const std::function<std::pair<double, Eigen::VectorXd>(const Eigen::VectorXd&)>&
        value_and_grad,
    const Eigen::VectorXd& x0, const BfgsOptions& opts) {
  const int n = static_cast<int>(x0.size());
  Eigen::VectorXd x = x0;
  auto [f, g] = value_and_grad(x);
  if (!std::isfinite(f))
    throw Error("objective is not finite at the starting point");

  // The inverse Hessian starts as a multiple of the identity chosen so the
  // first trial step has unit norm; after the first accepted step it is
  // rescaled by s'y / y'y (Nocedal-Wright initialization). This keeps early
  // iterations from vaulting into flat regions of the likelihood (e.g. the
  // independence limit of the range parameter).
  Eigen::MatrixXd h_inv =
      Eigen::MatrixXd::Identity(n, n) / std::max(1.0, g.norm());
  bool h_scaled = false;
  const double c1 = 1e-4;
  const double max_step_inf = 50.0;

  OptimResult best;
  best.x = x;
  best.f = f;
  best.grad = g;

  for (int iter = 0; iter < opts.max_iter; ++iter) {
    const double scale = std::max(1.0, std::abs(f));
    if (g.norm() <= opts.grad_tol * scale) {
      best.x = x;
      best.f = f;
      best.grad = g;
      best.iterations = iter;
      best.converged = true;
      return best;
    }

    Eigen::VectorXd direction = -(h_inv * g);
    double slope = g.dot(direction);
    if (!(slope < 0.0)) {
      h_inv = Eigen::MatrixXd::Identity(n, n) / std::max(1.0, g.norm());
      h_scaled = false;
      direction = -(h_inv * g);
      slope = g.dot(direction);
    }
    const double dir_norm = direction.lpNorm<Eigen::Infinity>();
    if (dir_norm > max_step_inf) {
      direction *= max_step_inf / dir_norm;
      slope = g.dot(direction);
    }

    // Backtracking Armijo search; non-finite trial values reject the step.
    double step = 1.0;
    double f_new = kInf;
    Eigen::VectorXd x_new;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = x + step * direction;
      f_new = sanitize(value(x_new));
      if (f_new <= f + c1 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      // No productive step along this direction; try a rescaled steepest
      // descent once before giving up.
      const Eigen::MatrixXd reset =
          Eigen::MatrixXd::Identity(n, n) / std::max(1.0, g.norm());
      if ((h_inv - reset).norm() > 0) {
        h_inv = reset;
        h_scaled = false;
        continue;
      }
      throw NonConvergenceError(
          "line search failed to find a descent step",
          std::vector<double>(x.data(), x.data() + n), g.norm(), iter);
    }

    auto [f_next, g_next] = value_and_grad(x_new);
    f_next = sanitize(f_next);

    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd y = g_next - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (!h_scaled) {
        h_inv = (sy / y.squaredNorm()) * Eigen::MatrixXd::Identity(n, n);
        h_scaled = true;
      }
      // BFGS inverse update.
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd ident = Eigen::MatrixXd::Identity(n, n);
      const Eigen::MatrixXd left = ident - rho * s * y.transpose();
      h_inv = left * h_inv * left.transpose() + rho * s * s.transpose();
    }

    const double step_scale = std::max(1.0, x.lpNorm<Eigen::Infinity>());
    const bool stalled =
        s.lpNorm<Eigen::Infinity>() <= opts.step_tol * step_scale;

    x = x_new;
    f = f_next;
    g = g_next;
    if (f < best.f) {
      best.x = x;
      best.f = f;
      best.grad = g;
    }

    if (stalled) {
      // A stalled step only counts as convergence when the gradient is at
      // least loosely small; otherwise report failure rather than a silent
      // success.
      if (g.norm() <= 1e-3 * std::max(1.0, std::abs(f))) {
        best.x = x;
        best.f = f;
        best.grad = g;
        best.iterations = iter + 1;
        best.converged = true;
        return best;
      }
      throw NonConvergenceError(
          "parameter step stalled with a large gradient",
          std::vector<double>(x.data(), x.data() + n), g.norm(), iter + 1);
    }
  }

  throw NonConvergenceError(
      "maximum iterations exceeded",
      std::vector<double>(best.x.data(), best.x.data() + n), best.grad.norm(),
      opts.max_iter);
}

OptimResult nelder_mead_minimize(
    const std::function<double(const Eigen::VectorXd&)>& value,
    const Eigen::VectorXd& x0, const NelderMeadOptions& opts) {
  const int n = static_cast<int>(x0.size());
  int evals = 0;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++evals;
    return sanitize(value(x));
  };

  Eigen::VectorXd center = x0;
  double f_center = eval(center);

  for (int restart = 0; restart <= opts.restarts; ++restart) {
    std::vector<Eigen::VectorXd> xs(n + 1, center);
    std::vector<double> fs(n + 1);
    fs[0] = f_center;
    const double step = opts.initial_step / std::pow(4.0, restart);
    for (int j = 0; j < n; ++j) {
      xs[j + 1](j) += step * std::max(1.0, std::abs(center(j)));
      fs[j + 1] = eval(xs[j + 1]);
    }

    while (evals < opts.max_evals) {
      // Order ascending by objective.
      std::vector<int> order(n + 1);
      for (int i = 0; i <= n; ++i) order[i] = i;
      std::sort(order.begin(), order.end(),
                [&](int a, int b) { return fs[a] < fs[b]; });
      std::vector<Eigen::VectorXd> xs2(n + 1);
      std::vector<double> fs2(n + 1);
      for (int i = 0; i <= n; ++i) {
        xs2[i] = xs[order[i]];
        fs2[i] = fs[order[i]];
      }
      xs = std::move(xs2);
      fs = std::move(fs2);

      double spread = 0.0;
      for (int i = 1; i <= n; ++i)
        spread = std::max(spread, (xs[i] - xs[0]).lpNorm<Eigen::Infinity>());
      if (std::abs(fs[n] - fs[0]) <= opts.f_tol * std::max(1.0, std::abs(fs[0])) &&
          spread <= opts.x_tol)
        break;

      Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
      for (int i = 0; i < n; ++i) centroid += xs[i];
      centroid /= n;

      const Eigen::VectorXd reflected = centroid + (centroid - xs[n]);
      const double f_reflected = eval(reflected);
      if (f_reflected < fs[0]) {
        const Eigen::VectorXd expanded = centroid + 2.0 * (centroid - xs[n]);
        const double f_expanded = eval(expanded);
        if (f_expanded < f_reflected) {
          xs[n] = expanded;
          fs[n] = f_expanded;
        } else {
          xs[n] = reflected;
          fs[n] = f_reflected;
        }
      } else if (f_reflected < fs[n - 1]) {
        xs[n] = reflected;
        fs[n] = f_reflected;
      } else {
        const Eigen::VectorXd contracted = centroid + 0.5 * (xs[n] - centroid);
        const double f_contracted = eval(contracted);
        if (f_contracted < fs[n]) {
          xs[n] = contracted;
          fs[n] = f_contracted;
        } else {
          for (int i = 1; i <= n; ++i) {
            xs[i] = xs[0] + 0.5 * (xs[i] - xs[0]);
            fs[i] = eval(xs[i]);
          }
        }
      }
    }

    int best = 0;
    for (int i = 1; i <= n; ++i)
      if (fs[i] < fs[best]) best = i;
    center = xs[best];
    f_center = fs[best];
  }

  OptimResult out;
  out.x = center;
  out.f = f_center;
  out.iterations = evals;
  out.converged = evals < opts.max_evals;
  return out;
}

}  // namespace mrri
