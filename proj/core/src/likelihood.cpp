#include "mrri/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "fpu_mode.hpp"
#include "mrri/optim.hpp"

namespace mrri {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Geometry, covariate grouping and canonical orders for one block, computed
// once per evaluation context.
//
// Locations are re-ordered so ROI slots form contiguous runs (the likelihood
// is invariant to location order), which lets the nonstationary kernel be
// assembled block by block with scalar amplitudes: the per-location range
// r_j = exp{X_i' rho(s_j)} takes one value per ROI, so every (ROI a, ROI b)
// sub-block is amp_ab * exp(-2 D_ab / (r_a + r_b)) with scalar amp_ab.
//
// Rows are grouped by identical covariate vectors so covariance
// factorizations are shared, and ordered by (X row, Y row, index) so
// likelihood and score sums are exactly invariant to joint permutations of
// (Y, X).
struct BlockContext {
  const DataBlock* block = nullptr;
  const ModelSpec* spec = nullptr;
  int s = 0;
  int d = 0;
  Eigen::MatrixXd y_sorted;          // N x S, columns in slot-sorted order
  Eigen::MatrixXd sq_dist;           // slot-sorted order
  int n_slots = 1;
  std::vector<int> slot_start;       // contiguous run per slot
  std::vector<int> slot_count;

  struct Group {
    Eigen::VectorXd x;
    std::vector<int> rows;
  };
  std::vector<Group> groups;
};

bool lex_less(const Eigen::MatrixXd& m, int a, int b) {
  for (int j = 0; j < m.cols(); ++j) {
    if (m(a, j) != m(b, j)) return m(a, j) < m(b, j);
  }
  return false;
}

bool lex_equal(const Eigen::MatrixXd& m, int a, int b) {
  for (int j = 0; j < m.cols(); ++j)
    if (m(a, j) != m(b, j)) return false;
  return true;
}

BlockContext make_context(const DataBlock& block, const ModelSpec& spec) {
  if (block.Y.rows() == 0 || block.Y.cols() == 0)
    throw DimensionError("empty data block");
  if (block.Y.rows() != block.X.rows())
    throw DimensionError("Y and X row counts differ");
  if (static_cast<std::size_t>(block.Y.cols()) != block.locations.size())
    throw DimensionError("Y column count does not match location count");
  if (block.X.cols() != spec.q)
    throw DimensionError("X column count does not match model spec q");

  BlockContext ctx;
  ctx.block = &block;
  ctx.spec = &spec;
  ctx.s = static_cast<int>(block.locations.size());
  ctx.d = static_cast<int>(block.locations[0].coords.size());
  ctx.n_slots = spec.roi_count;

  std::vector<int> slot_of(ctx.s, 0);
  if (spec.roi_count == 2) {
    for (int j = 0; j < ctx.s; ++j) {
      if (!block.locations[j].roi.has_value())
        throw InvalidDomainError("two-ROI model requires ROI labels");
      const int label = *block.locations[j].roi;
      if (label < 1 || label > 2)
        throw InvalidDomainError("ROI label out of range for model spec");
      slot_of[j] = label - 1;
    }
  }

  // Stable sort by slot: contiguous runs, original order within a run.
  std::vector<int> loc_order(ctx.s);
  std::iota(loc_order.begin(), loc_order.end(), 0);
  std::stable_sort(loc_order.begin(), loc_order.end(),
                   [&](int a, int b) { return slot_of[a] < slot_of[b]; });

  ctx.slot_start.assign(ctx.n_slots, 0);
  ctx.slot_count.assign(ctx.n_slots, 0);
  for (int j : loc_order) ++ctx.slot_count[slot_of[j]];
  for (int k = 1; k < ctx.n_slots; ++k)
    ctx.slot_start[k] = ctx.slot_start[k - 1] + ctx.slot_count[k - 1];

  ctx.y_sorted.resize(block.Y.rows(), ctx.s);
  for (int j = 0; j < ctx.s; ++j)
    ctx.y_sorted.col(j) = block.Y.col(loc_order[j]);

  ctx.sq_dist.resize(ctx.s, ctx.s);
  for (int r = 0; r < ctx.s; ++r) {
    const auto& cr = block.locations[loc_order[r]].coords;
    for (int t = r; t < ctx.s; ++t) {
      const auto& ct = block.locations[loc_order[t]].coords;
      double ss = 0.0;
      for (int k = 0; k < ctx.d; ++k) {
        const double delta = ct[k] - cr[k];
        ss += delta * delta;
      }
      ctx.sq_dist(r, t) = ss;
      ctx.sq_dist(t, r) = ss;
    }
  }

  // Canonical row order, then covariate groups over that order.
  const long n = block.Y.rows();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (!lex_equal(block.X, a, b)) return lex_less(block.X, a, b);
    if (!lex_equal(block.Y, a, b)) return lex_less(block.Y, a, b);
    return a < b;
  });
  const bool share_cov = spec.cov_kind == CovKind::StationaryGaussian;
  for (int idx : order) {
    if (!ctx.groups.empty() &&
        (share_cov || lex_equal(block.X, ctx.groups.back().rows[0], idx))) {
      ctx.groups.back().rows.push_back(idx);
    } else {
      BlockContext::Group g;
      g.x = block.X.row(idx).transpose();
      g.rows.push_back(idx);
      ctx.groups.push_back(std::move(g));
    }
  }
  return ctx;
}

struct EvalOutput {
  double loglik = 0.0;
  Eigen::MatrixXd per_obs;  // N x p when requested
};

// Scalar kernel coefficients for one (slot a, slot b) pair.
struct PairCoef {
  double sum = 0.0;  // r_a + r_b
  double amp = 0.0;  // tau_ab * (4 r_a r_b / sum^2)^{d/4}
};

EvalOutput evaluate(const BlockContext& ctx, const ThetaParams& theta,
                    bool want_scores) {
  detail::use_fast_subnormal_mode();
  const DataBlock& block = *ctx.block;
  const ModelSpec& spec = *ctx.spec;
  const int s = ctx.s;
  const int p = spec.param_count();
  const long n = block.Y.rows();
  if (theta.size() != p)
    throw DimensionError("theta does not match model spec layout");

  EvalOutput out;
  if (want_scores) out.per_obs = Eigen::MatrixXd::Zero(n, p);

  const double sigma2 = theta.sigma2();
  const bool stationary = spec.cov_kind == CovKind::StationaryGaussian;
  const int n_slots = ctx.n_slots;
  const int tau_count = spec.tau_count();
  const int beta_count = spec.beta_count();

  // Stationary kernel matrices are shared by every group; build them once.
  Eigen::MatrixXd stat_k, stat_kd;
  if (stationary) {
    const double tau2 = std::exp(theta.gamma(0));
    const double rho2 = std::exp(theta.gamma(1));
    stat_k = tau2 * (-rho2 * ctx.sq_dist.array()).exp().matrix();
    if (want_scores)
      stat_kd = (-rho2 * ctx.sq_dist.array() * stat_k.array()).matrix();
  }

  Eigen::MatrixXd cov(s, s);

  for (const auto& group : ctx.groups) {
    const long n_g = static_cast<long>(group.rows.size());

    // Per-slot ranges and pair coefficients for the nonstationary kernel.
    Eigen::VectorXd ranges(n_slots);
    std::vector<PairCoef> coef(n_slots * n_slots);
    if (!stationary) {
      for (int k = 0; k < n_slots; ++k) {
        const int offset = tau_count + k * spec.q;
        ranges(k) = std::exp(group.x.dot(theta.gamma.segment(offset, spec.q)));
      }
      for (int a = 0; a < n_slots; ++a) {
        for (int b = 0; b < n_slots; ++b) {
          PairCoef& c = coef[a * n_slots + b];
          c.sum = ranges(a) + ranges(b);
          double tau;
          if (tau_count == 1) {
            tau = std::exp(theta.gamma(0));
          } else {
            tau = std::exp(0.5 * (theta.gamma(a) + theta.gamma(b)));
          }
          const double q4 = 4.0 * ranges(a) * ranges(b) / (c.sum * c.sum);
          double amp;
          if (a == b) {
            amp = 1.0;  // q4 == 1 exactly
          } else if (ctx.d == 2) {
            amp = std::sqrt(q4);
          } else if (ctx.d == 4) {
            amp = q4;
          } else {
            amp = std::pow(q4, ctx.d / 4.0);
          }
          c.amp = tau * amp;
        }
      }
      // Assemble C block by block.
      for (int a = 0; a < n_slots; ++a) {
        for (int b = a; b < n_slots; ++b) {
          const PairCoef& c = coef[a * n_slots + b];
          const auto d_ab = ctx.sq_dist.block(ctx.slot_start[a], ctx.slot_start[b],
                                              ctx.slot_count[a], ctx.slot_count[b]);
          cov.block(ctx.slot_start[a], ctx.slot_start[b], ctx.slot_count[a],
                    ctx.slot_count[b]) =
              c.amp * (-2.0 / c.sum * d_ab.array()).exp();
          if (b > a)
            cov.block(ctx.slot_start[b], ctx.slot_start[a], ctx.slot_count[b],
                      ctx.slot_count[a]) =
                cov.block(ctx.slot_start[a], ctx.slot_start[b],
                          ctx.slot_count[a], ctx.slot_count[b])
                    .transpose();
        }
      }
    } else {
      cov = stat_k;
    }
    cov.diagonal().array() += sigma2;

    SpdFactor factor = factorize_spd(cov);

    // Residual columns in group order.
    Eigen::MatrixXd resid(s, n_g);
    for (long col = 0; col < n_g; ++col) {
      const int i = group.rows[col];
      const double mu = mean_value(spec, block.X.row(i).transpose(), theta.beta);
      resid.col(col) = ctx.y_sorted.row(i).transpose().array() - mu;
    }
    Eigen::MatrixXd u = factor.llt.solve(resid);

    const double log_det = factor.log_det();
    Eigen::VectorXd quad_resid(n_g);
    for (long col = 0; col < n_g; ++col) {
      quad_resid(col) = resid.col(col).dot(u.col(col));
      out.loglik += -0.5 * (s * kLog2Pi + log_det + quad_resid(col));
    }

    if (!want_scores) continue;

    // Mean components: psi_i[beta_k] = X_ik (1' C^{-1} r_i).
    const Eigen::VectorXd colsum_u = u.colwise().sum();
    for (long col = 0; col < n_g; ++col) {
      const int i = group.rows[col];
      if (spec.mean_kind == MeanKind::ConstantIntercept) {
        out.per_obs(i, 0) = colsum_u(col);
      } else {
        for (int k = 0; k < beta_count; ++k)
          out.per_obs(i, k) = block.X(i, k) * colsum_u(col);
      }
    }

    const Eigen::MatrixXd c_inv =
        factor.llt.solve(Eigen::MatrixXd::Identity(s, s));
    const double trace_c_inv = c_inv.trace();

    // Nugget: dC/d log sigma2 = sigma2 I.
    const Eigen::VectorXd quad_u2 = u.array().square().colwise().sum();
    for (long col = 0; col < n_g; ++col) {
      const int i = group.rows[col];
      out.per_obs(i, p - 1) =
          0.5 * sigma2 * (quad_u2(col) - trace_c_inv);
    }

    if (stationary) {
      // dC/d log tau2 = K: u'Ku = u'Cu - sigma2 u'u = r'u - sigma2 u'u and
      // tr(C^{-1}K) = S - sigma2 tr(C^{-1}).
      const double trace_k = s - sigma2 * trace_c_inv;
      for (long col = 0; col < n_g; ++col) {
        const int i = group.rows[col];
        out.per_obs(i, beta_count) =
            0.5 * (quad_resid(col) - sigma2 * quad_u2(col) - trace_k);
      }
      // dC/d log rho2 = -rho2 (D o K) = stat_kd.
      const Eigen::MatrixXd kd_u = stat_kd.selfadjointView<Eigen::Lower>() * u;
      const Eigen::VectorXd quad_kd = (u.array() * kd_u.array()).colwise().sum();
      const double trace_kd = (c_inv.array() * stat_kd.array()).sum();
      for (long col = 0; col < n_g; ++col) {
        const int i = group.rows[col];
        out.per_obs(i, beta_count + 1) = 0.5 * (quad_kd(col) - trace_kd);
      }
      continue;
    }

    // Nonstationary blockwise score pieces. For slots a <= b, with K the
    // kernel (C minus the nugget diagonal) and D the squared distances:
    //   quadK[a][b]  = u_a' K_ab u_b        traceK[a][b]  = sum(Cinv_ab o K_ab)
    //   quadKD[a][b] = u_a' (K o D)_ab u_b  traceKD[a][b] = sum(Cinv_ab o (K o D)_ab)
    // Every derivative matrix is a scalar combination of K and K o D blocks:
    //   d log C_ab / d log r_a = (d/4)(r_b - r_a)/sum + 2 D r_a / sum^2
    // (equal ranges collapse the first term and give D / r on the diagonal
    // blocks), and the tau derivatives weight K blocks by ROI membership.
    std::vector<Eigen::MatrixXd> quad_k(n_slots * n_slots);
    std::vector<Eigen::MatrixXd> quad_kd(n_slots * n_slots);
    std::vector<double> trace_k(n_slots * n_slots, 0.0);
    std::vector<double> trace_kd(n_slots * n_slots, 0.0);
    for (int a = 0; a < n_slots; ++a) {
      for (int b = a; b < n_slots; ++b) {
        const int sa = ctx.slot_start[a], ca = ctx.slot_count[a];
        const int sb = ctx.slot_start[b], cb = ctx.slot_count[b];
        Eigen::MatrixXd k_ab =
            cov.block(sa, sb, ca, cb);  // kernel block (+ nugget if a == b)
        if (a == b) k_ab.diagonal().array() -= sigma2;
        const Eigen::MatrixXd kd_ab =
            (k_ab.array() * ctx.sq_dist.block(sa, sb, ca, cb).array()).matrix();
        const auto u_a = u.middleRows(sa, ca);
        const auto u_b = u.middleRows(sb, cb);
        // n_g x n_g would waste work for the off-diagonal columns; we only
        // need the matching-column bilinear forms.
        quad_k[a * n_slots + b] =
            (u_a.array() * (k_ab * u_b).array()).colwise().sum();
        quad_kd[a * n_slots + b] =
            (u_a.array() * (kd_ab * u_b).array()).colwise().sum();
        trace_k[a * n_slots + b] =
            (c_inv.block(sa, sb, ca, cb).array() * k_ab.array()).sum();
        trace_kd[a * n_slots + b] =
            (c_inv.block(sa, sb, ca, cb).array() * kd_ab.array()).sum();
      }
    }
    auto qk = [&](int a, int b, long col) {
      return a <= b ? quad_k[a * n_slots + b](0, col)
                    : quad_k[b * n_slots + a](0, col);
    };
    auto qkd = [&](int a, int b, long col) {
      return a <= b ? quad_kd[a * n_slots + b](0, col)
                    : quad_kd[b * n_slots + a](0, col);
    };
    auto tk = [&](int a, int b) {
      return a <= b ? trace_k[a * n_slots + b] : trace_k[b * n_slots + a];
    };
    auto tkd = [&](int a, int b) {
      return a <= b ? trace_kd[a * n_slots + b] : trace_kd[b * n_slots + a];
    };

    // tau components.
    if (tau_count == 1) {
      const double trace_kk = s - sigma2 * trace_c_inv;
      for (long col = 0; col < n_g; ++col) {
        const int i = group.rows[col];
        out.per_obs(i, beta_count) =
            0.5 * (quad_resid(col) - sigma2 * quad_u2(col) - trace_kk);
      }
    } else {
      for (int k = 0; k < tau_count; ++k) {
        // dC/d log tau_k^2 = K o W_k with W_k = 1 within ROI k, 1/2 across
        // (two cross blocks at weight 1/2 contribute one tk/qk term).
        double trace = tk(k, k);
        for (int l = 0; l < n_slots; ++l)
          if (l != k) trace += tk(k, l);
        for (long col = 0; col < n_g; ++col) {
          const int i = group.rows[col];
          double quad = qk(k, k, col);
          for (int l = 0; l < n_slots; ++l)
            if (l != k) quad += qk(k, l, col);
          out.per_obs(i, beta_count + k) = 0.5 * (quad - trace);
        }
      }
    }

    // Range coefficient components: for ROI k,
    //   within block:  K o D / r_k
    //   cross (k, l):  alpha K + beta (K o D), alpha = (d/4)(r_l - r_k)/sum,
    //                  beta = 2 r_k / sum^2, counted twice (both triangles).
    for (int k = 0; k < spec.rho_block_count(); ++k) {
      double trace = tkd(k, k) / ranges(k);
      for (int l = 0; l < n_slots; ++l) {
        if (l == k) continue;
        const PairCoef& c = coef[k * n_slots + l];
        const double alpha = 0.25 * ctx.d * (ranges(l) - ranges(k)) / c.sum;
        const double beta = 2.0 * ranges(k) / (c.sum * c.sum);
        trace += 2.0 * (alpha * tk(k, l) + beta * tkd(k, l));
      }
      for (long col = 0; col < n_g; ++col) {
        const int i = group.rows[col];
        double quad = qkd(k, k, col) / ranges(k);
        for (int l = 0; l < n_slots; ++l) {
          if (l == k) continue;
          const PairCoef& c = coef[k * n_slots + l];
          const double alpha = 0.25 * ctx.d * (ranges(l) - ranges(k)) / c.sum;
          const double beta = 2.0 * ranges(k) / (c.sum * c.sum);
          quad += 2.0 * (alpha * qk(k, l, col) + beta * qkd(k, l, col));
        }
        const double base = 0.5 * (quad - trace);
        for (int l = 0; l < spec.q; ++l)
          out.per_obs(i, spec.rho_index(k + 1, l)) += block.X(i, l) * base;
      }
    }
  }

  return out;
}

// Sum per-observation rows in the canonical order so the result is exactly
// invariant to joint permutations of (Y, X).
Eigen::VectorXd canonical_colsum(const BlockContext& ctx,
                                 const Eigen::MatrixXd& per_obs) {
  Eigen::VectorXd total = Eigen::VectorXd::Zero(per_obs.cols());
  for (const auto& group : ctx.groups)
    for (int i : group.rows) total += per_obs.row(i).transpose();
  return total;
}

}  // namespace

double log_likelihood(const DataBlock& block, const ThetaParams& theta,
                      const ModelSpec& spec) {
  BlockContext ctx = make_context(block, spec);
  return evaluate(ctx, theta, false).loglik;
}

Eigen::VectorXd score(const DataBlock& block, const ThetaParams& theta,
                      const ModelSpec& spec) {
  BlockContext ctx = make_context(block, spec);
  return canonical_colsum(ctx, evaluate(ctx, theta, true).per_obs);
}

ScoreMatrix per_observation_scores(const DataBlock& block,
                                   const ThetaParams& theta,
                                   const ModelSpec& spec) {
  BlockContext ctx = make_context(block, spec);
  ScoreMatrix out;
  out.values = evaluate(ctx, theta, true).per_obs;
  out.theta_at = theta;
  out.node_path = block.node_path;
  return out;
}

Eigen::MatrixXd sensitivity_block(const ScoreMatrix& scores) {
  const long p = scores.values.cols();
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(p, p);
  s.selfadjointView<Eigen::Lower>().rankUpdate(scores.values.transpose());
  return s.selfadjointView<Eigen::Lower>();
}

ThetaParams default_init(const DataBlock& block, const ModelSpec& spec) {
  const long n = block.Y.rows();
  const int s = static_cast<int>(block.Y.cols());
  // Accumulate in canonical row order so the starting point (and hence the
  // fitted optimum) is exactly invariant to joint permutations of (Y, X).
  const BlockContext ctx = make_context(block, spec);
  std::vector<int> order;
  for (const auto& group : ctx.groups)
    order.insert(order.end(), group.rows.begin(), group.rows.end());

  ThetaParams init;
  const Eigen::VectorXd row_means = block.Y.rowwise().mean();
  if (spec.mean_kind == MeanKind::ConstantIntercept) {
    double total = 0.0;
    for (int i : order) total += row_means(i);
    init.beta = Eigen::VectorXd::Constant(1, total / static_cast<double>(n));
  } else {
    // Least squares of the location means on X via normal equations.
    Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(spec.q, spec.q);
    Eigen::VectorXd xty = Eigen::VectorXd::Zero(spec.q);
    for (int i : order) {
      const Eigen::VectorXd x_row = block.X.row(i).transpose();
      xtx.noalias() += x_row * x_row.transpose();
      xty.noalias() += x_row * row_means(i);
    }
    init.beta = xtx.ldlt().solve(xty);
  }

  double ss = 0.0;
  for (int i : order) {
    const double mu = mean_value(spec, block.X.row(i).transpose(), init.beta);
    ss += (block.Y.row(i).array() - mu).square().sum();
  }
  const double total_var = std::max(ss / (static_cast<double>(n) * s), 1e-12);

  // Median pairwise squared distance, within ROI for per-ROI ranges.
  auto median_sq_dist = [&](int roi_slot_filter) {
    std::vector<double> dists;
    for (int a = 0; a < s; ++a) {
      if (roi_slot_filter >= 0) {
        int slot_a = spec.roi_count == 2 ? *block.locations[a].roi - 1 : 0;
        if (slot_a != roi_slot_filter) continue;
      }
      for (int b = a + 1; b < s; ++b) {
        if (roi_slot_filter >= 0) {
          int slot_b = spec.roi_count == 2 ? *block.locations[b].roi - 1 : 0;
          if (slot_b != roi_slot_filter) continue;
        }
        double sd = 0.0;
        for (std::size_t k = 0; k < block.locations[a].coords.size(); ++k) {
          double delta = block.locations[b].coords[k] - block.locations[a].coords[k];
          sd += delta * delta;
        }
        dists.push_back(sd);
      }
    }
    if (dists.empty()) return 1.0;
    std::sort(dists.begin(), dists.end());
    return dists[dists.size() / 2];
  };

  // Range scale: kernel correlation exp(-3) at the median squared distance.
  init.gamma = Eigen::VectorXd::Zero(spec.gamma_count());
  if (spec.cov_kind == CovKind::StationaryGaussian) {
    init.gamma(0) = std::log(0.8 * total_var);
    init.gamma(1) = std::log(3.0 / median_sq_dist(-1));
  } else {
    for (int k = 0; k < spec.tau_count(); ++k)
      init.gamma(k) = std::log(0.8 * total_var);
    // Intercept coefficient carries the range scale; the remaining covariate
    // coefficients start at zero.
    for (int k = 0; k < spec.rho_block_count(); ++k) {
      const double med = median_sq_dist(spec.roi_count == 2 ? k : -1);
      init.gamma(spec.tau_count() + k * spec.q) = std::log(med / 3.0);
    }
  }
  init.log_sigma2 = std::log(0.2 * total_var);
  return init;
}

MetaEstimate fit_local_mle(const DataBlock& block, const ModelSpec& spec,
                           const ThetaParams& init, const FitOptions& opts) {
  BlockContext ctx = make_context(block, spec);
  if (!init.packed().allFinite())
    throw Error("starting values must be finite");

  auto value = [&](const Eigen::VectorXd& x) {
    try {
      return -evaluate(ctx, ThetaParams::unpack(x, spec), false).loglik;
    } catch (const NonPdError&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  auto value_and_grad = [&](const Eigen::VectorXd& x) {
    const ThetaParams theta = ThetaParams::unpack(x, spec);
    EvalOutput eval = evaluate(ctx, theta, true);
    Eigen::VectorXd grad = -canonical_colsum(ctx, eval.per_obs);
    return std::make_pair(-eval.loglik, grad);
  };

  BfgsOptions bopts;
  bopts.grad_tol = opts.grad_tol;
  bopts.step_tol = opts.step_tol;
  bopts.max_iter = opts.max_iter;
  OptimResult result = bfgs_minimize(value, value_and_grad, init.packed(), bopts);

  MetaEstimate est;
  est.theta = ThetaParams::unpack(result.x, spec);
  ScoreMatrix scores;
  scores.values = evaluate(ctx, est.theta, true).per_obs;
  scores.theta_at = est.theta;
  scores.node_path = block.node_path;
  est.J = sensitivity_block(scores);
  est.node_path = block.node_path;
  est.method = "leaf-mle";
  est.prov.leaf_fits = 1;
  est.prov.iterations = result.iterations;
  est.prov.converged = result.converged;
  return est;
}

}  // namespace mrri
