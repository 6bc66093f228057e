#include "mgtk/maxent.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace mgtk {

FeatureMatrix make_feature_matrix(const std::vector<double>& s_hat,
                                  const std::vector<double>& d_sq) {
  if (s_hat.size() != d_sq.size() || s_hat.size() < 2)
    throw MgtkError("feature matrix needs K >= 2 matched columns");
  const int k = static_cast<int>(s_hat.size());
  FeatureMatrix f(3, k);
  for (int i = 0; i < k; ++i) {
    if (!std::isfinite(s_hat[i]) || !std::isfinite(d_sq[i]))
      throw MgtkError("non-finite feature entry");
    f(0, i) = 1.0;
    f(1, i) = s_hat[i];
    f(2, i) = d_sq[i];
  }
  return f;
}

MomentConstraints empirical_moments(const std::vector<double>& energies,
                                    const std::vector<double>& features) {
  if (energies.empty() || energies.size() != features.size())
    throw EmptySupportError("no positives to form moment constraints");
  MomentConstraints c;
  for (double e : energies) c.c_D += e;
  for (double s : features) c.c_S += s;
  c.c_D /= double(energies.size());
  c.c_S /= double(features.size());
  return c;
}

NondegenReport check_nondegeneracy(const FeatureMatrix& f, double c_cond) {
  NondegenReport rep;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(f);
  const Eigen::VectorXd sv = svd.singularValues();
  const double smax = sv(0);
  const double cutoff = 1e-10 * smax;
  double smin_retained = smax;
  rep.rank = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv(i) > cutoff) {
      ++rep.rank;
      smin_retained = sv(i);
    }
  rep.kappa = smax > 0 ? smax / smin_retained : 0.0;
  if (rep.rank < 3)
    rep.status = NondegenStatus::RankDeficient;
  else if (rep.kappa > c_cond)
    rep.status = NondegenStatus::IllConditioned;
  else
    rep.status = NondegenStatus::Ok;
  return rep;
}

FeatureMatrix repair_degeneracy(const FeatureMatrix& f, RepairContext& ctx,
                                std::uint64_t seed) {
  if (check_nondegeneracy(f, ctx.c_cond).ok()) return f;
  if (!ctx.featurize) throw MgtkError("repair requires a featurize callback");

  auto rng = seeded_rng(seed, 0x7e9a17);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<double> s_hat(f.cols()), d_sq(f.cols());
  for (int i = 0; i < f.cols(); ++i) {
    s_hat[i] = f(1, i);
    d_sq[i] = f(2, i);
  }

  for (int round = 0; round < 3; ++round) {
    // 1) expand the candidate set up to k_min
    if (static_cast<int>(ctx.candidates.size()) < ctx.k_min) {
      std::vector<int> pool = ctx.pool;
      std::shuffle(pool.begin(), pool.end(), rng);
      for (int cand : pool) {
        if (static_cast<int>(ctx.candidates.size()) >= ctx.k_min) break;
        if (std::find(ctx.candidates.begin(), ctx.candidates.end(), cand) !=
            ctx.candidates.end())
          continue;
        ctx.candidates.push_back(cand);
        const auto [s, d] = ctx.featurize(cand);
        s_hat.push_back(s);
        d_sq.push_back(d);
      }
      FeatureMatrix g = make_feature_matrix(s_hat, d_sq);
      if (check_nondegeneracy(g, ctx.c_cond).ok()) return g;
    }
    // 2) jitter the squared distances: d~^2 = d^2 + eta * xi^2, xi ~ N(0,1)
    for (double& d : d_sq) {
      const double xi = gauss(rng);
      d += ctx.eta * xi * xi;
    }
    FeatureMatrix g = make_feature_matrix(s_hat, d_sq);
    if (check_nondegeneracy(g, ctx.c_cond).ok()) return g;
  }
  throw IrreparableDegeneracyError("degenerate system not repairable in 3 rounds");
}

namespace {
struct DualState {
  Eigen::VectorXd probs;
  double lse = 0.0;      // log sum exp of scores
  double es = 0.0;       // E_p[S]
  double ed = 0.0;       // E_p[D]
  double g = 0.0;        // dual value
};

DualState eval_dual(const FeatureMatrix& f, const MomentConstraints& c,
                    double beta, double tau) {
  const int k = static_cast<int>(f.cols());
  Eigen::VectorXd score(k);
  for (int i = 0; i < k; ++i) score(i) = beta * f(1, i) - tau * f(2, i);
  const double m = score.maxCoeff();
  Eigen::VectorXd w = (score.array() - m).exp();
  const double z = w.sum();
  DualState st;
  st.probs = w / z;
  st.lse = m + std::log(z);
  st.es = st.probs.dot(f.row(1).transpose());
  st.ed = st.probs.dot(f.row(2).transpose());
  st.g = st.lse - beta * c.c_S + tau * c.c_D;
  return st;
}
}  // namespace

MaxEntSolution solve_maxent(const FeatureMatrix& f, const MomentConstraints& c,
                            const SolveOptions& opts) {
  if (f.rows() != 3 || f.cols() < 2) throw MgtkError("feature matrix must be 3 x K, K >= 2");
  if (opts.require_nondegenerate) {
    const auto rep = check_nondegeneracy(f, opts.c_cond);
    if (!rep.ok())
      throw DegenerateSystemError(
          rep.status == NondegenStatus::RankDeficient
              ? "feature matrix is rank deficient; run repair first"
              : "feature matrix is ill conditioned; run repair first");
  }

  double beta = opts.beta0, tau = opts.tau0;
  DualState st = eval_dual(f, c, beta, tau);
  MaxEntSolution sol;
  int it = 0;
  int stall = 0;
  double best_residual = std::numeric_limits<double>::infinity();
  int plateau = 0;
  for (; it < opts.max_iter; ++it) {
    const double grad_b = st.es - c.c_S;
    const double grad_t = -st.ed + c.c_D;
    sol.residual_S = std::abs(grad_b);
    sol.residual_D = std::abs(grad_t);
    if (sol.residual_S <= opts.tol && sol.residual_D <= opts.tol) {
      sol.converged = true;
      break;
    }
    // residual plateau while multipliers run away marks infeasible constraints
    const double res = std::max(sol.residual_S, sol.residual_D);
    if (res < best_residual * (1.0 - 1e-10)) {
      best_residual = res;
      plateau = 0;
    } else if (++plateau >= 25 && res > opts.feasibility_slack) {
      throw InfeasibleConstraintsError("moment constraints appear infeasible");
    }
    if (std::abs(beta) + std::abs(tau) > 1e7 && res > opts.feasibility_slack)
      throw InfeasibleConstraintsError("dual multipliers diverged");

    // hessian = covariance of (S, -D) under the current distribution
    double var_s = 0, var_d = 0, cov_sd = 0;
    for (int i = 0; i < f.cols(); ++i) {
      const double ds = f(1, i) - st.es;
      const double dd = f(2, i) - st.ed;
      var_s += st.probs(i) * ds * ds;
      var_d += st.probs(i) * dd * dd;
      cov_sd += st.probs(i) * ds * dd;
    }
    Eigen::Matrix2d h;
    h << var_s, -cov_sd, -cov_sd, var_d;
    Eigen::Vector2d grad(grad_b, grad_t);

    Eigen::Vector2d step;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(h);
    const double emin = es.eigenvalues()(0), emax = es.eigenvalues()(1);
    if (!(emax > 0)) {
      step = -grad;  // distribution collapsed to a corner; curvature gone
    } else if (!(emin > 0) || emax / emin > 1e8) {
      // regularized newton: keeps the step inside the informative subspace
      // when the constraints are dependent and the dual is flat along a ray
      const Eigen::Matrix2d hr =
          h + (1e-12 * emax) * Eigen::Matrix2d::Identity();
      step = -hr.ldlt().solve(grad);
    } else {
      step = -h.ldlt().solve(grad);
    }

    // backtracking line search on the dual
    double stepsize = 1.0;
    const double slope = grad.dot(step);
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      const DualState trial =
          eval_dual(f, c, beta + stepsize * step(0), tau + stepsize * step(1));
      if (trial.g <= st.g + 1e-4 * stepsize * slope) {
        beta += stepsize * step(0);
        tau += stepsize * step(1);
        st = trial;
        accepted = true;
        break;
      }
      stepsize *= 0.5;
    }
    if (!accepted) {
      // residual plateau: the dual cannot be decreased further
      if (sol.residual_S > opts.feasibility_slack ||
          sol.residual_D > opts.feasibility_slack)
        throw InfeasibleConstraintsError("moment constraints appear infeasible");
      ++stall;
      if (stall >= 2) break;
    }
  }
  sol.iterations = it;
  if (!sol.converged) {
    sol.residual_S = std::abs(st.es - c.c_S);
    sol.residual_D = std::abs(-st.ed + c.c_D);
    sol.converged = sol.residual_S <= opts.tol && sol.residual_D <= opts.tol;
  }
  sol.beta = beta;
  sol.tau = tau;
  sol.alpha = -st.lse;  // normalizer: probs_i = exp(alpha + beta S_i - tau D_i)
  sol.probs = st.probs;
  sol.tau_negative = tau < 0;
  return sol;
}

double entropy(const Eigen::VectorXd& probs) {
  double h = 0;
  for (int i = 0; i < probs.size(); ++i)
    if (probs(i) > 0) h -= probs(i) * std::log(probs(i));
  return h;
}

}  // namespace mgtk
