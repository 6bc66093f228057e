#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <vector>

#include "mgtk/common.hpp"

namespace mgtk {

struct MomentConstraints {
  double c_D = 0.0;  // mean composite energy over observed positives
  double c_S = 0.0;  // mean structural feature over observed positives
};

// rows: all-ones, structural feature, composite energy; one column per candidate
using FeatureMatrix = Eigen::MatrixXd;

FeatureMatrix make_feature_matrix(const std::vector<double>& s_hat,
                                  const std::vector<double>& d_sq);

MomentConstraints empirical_moments(const std::vector<double>& energies_of_positives,
                                    const std::vector<double>& features_of_positives);

enum class NondegenStatus { Ok, RankDeficient, IllConditioned };

struct NondegenReport {
  NondegenStatus status = NondegenStatus::Ok;
  int rank = 0;
  double kappa = 0.0;  // sigma_max / sigma_min over the retained spectrum
  bool ok() const { return status == NondegenStatus::Ok; }
};

NondegenReport check_nondegeneracy(const FeatureMatrix& f, double c_cond = 1e6);

// provides features for candidates added while repairing a degenerate system
struct RepairContext {
  std::vector<int> candidates;            // current candidate tails
  std::vector<int> pool;                  // entities eligible as extra candidates
  int k_min = 8;
  double eta = 1e-3;                      // distance jitter scale
  double c_cond = 1e6;
  // returns (s_hat, d_sq) for a tail id
  std::function<std::pair<double, double>(int)> featurize;
};

// candidate expansion to k_min, then gaussian distance jitter, re-checking
// after each round; throws IrreparableDegeneracyError after 3 rounds
FeatureMatrix repair_degeneracy(const FeatureMatrix& f, RepairContext& ctx,
                                std::uint64_t seed);

struct MaxEntSolution {
  double alpha = 0.0;
  double beta = 0.0;
  double tau = 0.0;
  Eigen::VectorXd probs;
  bool converged = false;
  int iterations = 0;
  double residual_S = 0.0;
  double residual_D = 0.0;
  bool tau_negative = false;  // warning: dual solution has tau < 0
};

struct SolveOptions {
  double tol = 1e-10;
  int max_iter = 200;
  double feasibility_slack = 1e-6;
  double c_cond = 1e6;
  bool require_nondegenerate = true;  // refuse rank-deficient systems
  double beta0 = 0.0;                 // dual initialization
  double tau0 = 0.0;
};

// minimizes the strictly convex dual g(beta,tau) by safeguarded Newton with
// backtracking; alpha is the normalizer of the induced distribution
MaxEntSolution solve_maxent(const FeatureMatrix& f, const MomentConstraints& c,
                            const SolveOptions& opts = SolveOptions{});

inline double canonical_score(double alpha, double beta, double tau,
                              double s_hat, double d_sq) {
  return alpha + beta * s_hat - tau * d_sq;
}

double entropy(const Eigen::VectorXd& probs);

}  // namespace mgtk
