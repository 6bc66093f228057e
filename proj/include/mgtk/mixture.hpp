#pragma once

#include <vector>

#include "mgtk/common.hpp"
#include "mgtk/geometry.hpp"
#include "mgtk/graphstore.hpp"

namespace mgtk {

struct MixtureWeights {
  // one row per relation, one column per metric
  Mat logits;
  Mat weights;

  static MixtureWeights uniform(int n_relations, int n_metrics);
  void set_from_logits(const Mat& a);
};

// sum_m w_m * d_m^2; not a metric in general
double composite_energy(const std::vector<double>& weights,
                        const std::vector<double>& transported_sq_dists);

// E_{(h,t) ~ pi_r(u)} [(d_m(phi(x_h), x_t) - d_graph(h,t;u))^2], with the n-1
// convention for unreachable pairs; exact over the empirical distribution
double distortion_energy(const TemporalKG& kg, int r, int u,
                         const std::vector<Point>& embeddings,
                         const Transport& transport,
                         double r_h_clamp = 1.0 - 1e-7);

// same, against a precomputed pair distribution and graph-distance lookup
double distortion_energy(const std::vector<PairProb>& pairs,
                         const std::vector<double>& graph_dists,
                         const std::vector<Point>& embeddings,
                         const Transport& transport,
                         double r_h_clamp = 1.0 - 1e-7);

// numerically stable softmax of -E/lambda
std::vector<double> softmax_weights(const std::vector<double>& energies,
                                    double lambda);

// -lambda * log mean_p exp(-E_p / lambda): a soft minimum lying in
// [min E, min E + lambda log K]
double log_sum_exp_energy(const std::vector<double>& energies, double lambda);

// lambda_0 * (1 - t/T) floored at 1e-3
double temperature(int t, int total, double lambda0);

constexpr double kTemperatureFloor = 1e-3;

}  // namespace mgtk
