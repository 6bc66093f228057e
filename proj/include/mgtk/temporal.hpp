#pragma once

#include <cstdint>
#include <vector>

#include "mgtk/common.hpp"
#include "mgtk/graphstore.hpp"

namespace mgtk {

// score clamp applied before exponentiation in likelihood arithmetic
constexpr double kScoreClamp = 20.0;

enum class Link { Cloglog, Logistic, Probit };

// P(at least one event in a bin of width delta | score f) under the link;
// for cloglog this is 1 - exp(-delta * e^f)
double link_prob(Link link, double f, double delta);

double cloglog_prob(double f, double delta);
// log(-log(1-p)) - log(delta); inverse of cloglog_prob in f
double cloglog_inverse(double p, double delta);

// |S(delta,f) - prod_j S(delta_j,f)| for a random k-part split of delta,
// evaluated analytically; identically ~0 only for the cloglog link
double verify_partition_invariance(Link link, double f, double delta,
                                   int k_parts, std::uint64_t seed);

struct BinSchedule {
  std::vector<double> widths;
  void validate() const;
  double total() const;
};

struct SimResult {
  std::vector<int> indicators;   // per bin: 1 iff at least one event
  std::vector<double> times;     // accepted event times on [0, total width)
};

// piecewise-constant Poisson process simulated by thinning a homogeneous
// dominating process; indicators are "at least one event in the bin"
SimResult simulate_bin_events(const std::vector<double>& f_schedule,
                              const BinSchedule& bins, std::uint64_t seed);

// indicator OR-merge of consecutive groups of `factor` fine bins
std::vector<int> merge_indicators(const std::vector<int>& fine, int factor);

struct PosTerm {
  double f = 0.0;
  double delta = 1.0;
};

struct NegTerm {
  double f = 0.0;
  double delta = 1.0;
  double q = 1.0;       // proposal probability of the sampled negative
  double weight = 1.0;  // extra multiplicity weight (1 for exhaustive sums)
};

// -sum_pos log(1 - exp(-delta e^f)) + sum_neg w * delta e^f / (k_neg * q);
// pass k_neg = 1 and q = 1 for exhaustive negatives
double nll(const std::vector<PosTerm>& positives,
           const std::vector<NegTerm>& negatives, int k_neg);

struct NllGradient {
  std::vector<double> d_pos;  // d nll / d f for each positive term
  std::vector<double> d_neg;
};

NllGradient nll_gradient(const std::vector<PosTerm>& positives,
                         const std::vector<NegTerm>& negatives, int k_neg);

struct SampledNegative {
  int tail = 0;
  double q = 0.0;
};

// uniform proposal over non-positive tails of the context (h, r, u)
std::vector<SampledNegative> sample_negatives(const TemporalKG& kg, int h, int r,
                                              int u, int k_neg,
                                              std::uint64_t seed);

}  // namespace mgtk
