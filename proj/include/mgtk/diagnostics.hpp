#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mgtk/geometry.hpp"
#include "mgtk/trainer.hpp"

namespace mgtk {

struct BoundConstants {
  double L_E = 0.0;        // grad bound of euclidean d^2
  double L_H = 0.0;        // empirical grad bound of hyperbolic d^2
  double L_Ssph = 0.0;     // grad bound of spherical d^2
  double L_d = 0.0;        // max over metrics
  double L_S = 1.0;        // graph-feature Lipschitz constant (configured)
  double C = 0.0;          // tau_max * L_d + beta_max * L_S
  double B = 0.0;          // embedding-norm bound
  double F_min = 0.0, F_max = 0.0;
  double delta_min = 1.0, delta_max = 1.0;
  double L_ell = 0.0;      // cloglog loss Lipschitz constant
  long N = 0;
  long N_eff = 0;
  int m_block = 0, g_gap = 0;
  // bookkeeping for the empirical hyperbolic estimate
  long L_H_samples = 0;
  double L_H_raw_max = 0.0;
};

struct LipschitzOptions {
  long samples = 100000;
  std::uint64_t seed = 7;
  double feature_lipschitz = 1.0;  // L_S, not fixed by theory
  double safety_factor = 1.02;     // applied to the empirical hyperbolic max
};

// closed-form euclidean/spherical bounds plus a sampled hyperbolic estimate;
// tau_max/beta_max are read off the trained coefficients
BoundConstants lipschitz_constants(const DomainBounds& bounds, double tau_max,
                                   double beta_max,
                                   const LipschitzOptions& opts = LipschitzOptions{});

struct EffectiveSample {
  int m = 0;
  int g = 0;
  long n_eff = 0;
  double lower_bound = 0.0;  // N^{2/3}/4
};

EffectiveSample effective_sample_size(long n);

// L_ell * C * B / sqrt(N_eff) + sqrt(log(2/delta) / (2 N_eff))
double generalization_bound(const BoundConstants& c, double delta);

double cloglog_loss_lipschitz(double delta_min, double delta_max, double f_min,
                              double f_max);

// log of the product of epsilon/3 covering ceilings, each at least one cell
double covering_bound(double a, double b, double tau_max, double s_max,
                      double d_max_sq, double eps);

enum class MixingVerdict { Summable, NotSummable, Degenerate };

struct MixingReport {
  std::vector<double> lags;
  std::vector<double> beta_hat;       // dependence proxy per lag
  std::vector<double> block_sizes;
  std::vector<double> variance_ratio;  // block-bootstrap variance ratios
  double decay_exponent = 0.0;         // fitted p in beta(k) ~ k^{-p}
  int significant_lags = 0;
  MixingVerdict verdict = MixingVerdict::Degenerate;
};

// block-bootstrap dependence estimate on a residual series; the verdict is a
// proxy for sum_k beta(k)^{1/3} < infinity, never a certificate
MixingReport mixing_estimate(const std::vector<double>& series,
                             const std::vector<int>& block_sizes, int n_boot,
                             std::uint64_t seed);

struct MonitorThresholds {
  double weight_change = 0.05;  // oscillation threshold after the grace period
  int grace_period = -1;        // -1: last third of the run
  int energy_growth_run = 3;    // consecutive growing iterations
  double energy_level = 4.0;    // growth only counts once the energy is this bad
  double weight_floor = 0.05;   // growth only counts for components in use
  int norm_explosion_run = 5;   // consecutive iterations of mass pinning
  double norm_fraction = 0.5;   // share of embeddings pinned that counts as mass
  int norm_excursions = 1;      // mass-pinning events that mark an explosion
};

struct InstabilityFlags {
  bool weight_oscillation = false;
  bool energy_growth = false;
  bool norm_explosion = false;
  bool rank_deficiency = false;
  std::string detail;  // trigger values for flags that fired
};

InstabilityFlags monitor(const TrainTrace& trace, const ModelParams& params,
                         const MonitorThresholds& thr = MonitorThresholds{});

struct TreeBenchResult {
  int depth = 0;
  int dim = 0;
  double hyperbolic_worst = 0.0;
  double hyperbolic_avg = 0.0;
  double euclidean_worst = 0.0;
  double euclidean_avg = 0.0;
};

// distortion of the complete binary tree: constructive 2d poincare layout vs
// stress-minimized euclidean embedding at dimension `dim`
TreeBenchResult tree_distortion_bench(int depth, int dim, std::uint64_t seed);

// deterministic recursive angular layout of a tree in the poincare disk
std::vector<Point> sarkar_tree_layout(const std::vector<std::vector<int>>& adj,
                                      int root, double edge_length,
                                      double max_radius);

// fractional gaussian noise (hurst exponent h) and white noise, for tests and
// the diagnostics cli demo
std::vector<double> simulate_fgn(int n, double hurst, std::uint64_t seed);
std::vector<double> simulate_white_noise(int n, std::uint64_t seed);

std::string diagnostics_report_json(const BoundConstants& c,
                                    const InstabilityFlags& flags,
                                    const MixingReport* mixing,
                                    double generalization, double covering);

}  // namespace mgtk
