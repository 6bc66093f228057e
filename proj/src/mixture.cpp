#include "mgtk/mixture.hpp"

#include <algorithm>
#include <cmath>

namespace mgtk {

MixtureWeights MixtureWeights::uniform(int n_relations, int n_metrics) {
  MixtureWeights w;
  w.logits = Mat::Zero(n_relations, n_metrics);
  w.weights = Mat::Constant(n_relations, n_metrics, 1.0 / double(n_metrics));
  return w;
}

void MixtureWeights::set_from_logits(const Mat& a) {
  logits = a;
  weights.resize(a.rows(), a.cols());
  for (int r = 0; r < a.rows(); ++r) {
    const double m = a.row(r).maxCoeff();
    Eigen::RowVectorXd e = (a.row(r).array() - m).exp();
    weights.row(r) = e / e.sum();
  }
}

double composite_energy(const std::vector<double>& weights,
                        const std::vector<double>& sq_dists) {
  if (weights.size() != sq_dists.size() || weights.empty())
    throw MgtkError("weights and distances must have matching nonzero length");
  double sum_w = 0, energy = 0;
  for (size_t m = 0; m < weights.size(); ++m) {
    if (weights[m] < -1e-12 || sq_dists[m] < -1e-12)
      throw MgtkError("weights and squared distances must be nonnegative");
    sum_w += weights[m];
    energy += weights[m] * sq_dists[m];
  }
  if (std::abs(sum_w - 1.0) > 1e-9)
    throw MgtkError("mixture weights must lie on the simplex");
  return energy;
}

double distortion_energy(const std::vector<PairProb>& pairs,
                         const std::vector<double>& graph_dists,
                         const std::vector<Point>& embeddings,
                         const Transport& transport, double r_h_clamp) {
  if (pairs.empty()) throw EmptySupportError("empty pair distribution");
  if (pairs.size() != graph_dists.size())
    throw MgtkError("pair and distance lists must align");
  double energy = 0;
  for (size_t i = 0; i < pairs.size(); ++i) {
    const Point ph = apply_transport(transport, embeddings[pairs[i].h], r_h_clamp);
    const double d = geodesic_distance(ph, embeddings[pairs[i].t]);
    const double gap = d - graph_dists[i];
    energy += pairs[i].prob * gap * gap;
  }
  return energy;
}

double distortion_energy(const TemporalKG& kg, int r, int u,
                         const std::vector<Point>& embeddings,
                         const Transport& transport, double r_h_clamp) {
  const auto pairs = pair_distribution(kg, r, u);
  GraphView view(kg, u);
  std::vector<double> gd(pairs.size());
  // cache BFS per head; unreachable pairs use the uniform n-1 bound
  int last_h = -1;
  std::vector<int> dist;
  for (size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].h != last_h) {
      dist = view.distances_from(pairs[i].h);
      last_h = pairs[i].h;
    }
    gd[i] = dist[pairs[i].t] >= 0 ? double(dist[pairs[i].t])
                                  : double(kg.n_entities() - 1);
  }
  return distortion_energy(pairs, gd, embeddings, transport, r_h_clamp);
}

std::vector<double> softmax_weights(const std::vector<double>& energies,
                                    double lambda) {
  if (!(lambda > 0)) throw MgtkError("temperature must be positive");
  if (energies.empty()) throw MgtkError("no energies");
  const double m = *std::min_element(energies.begin(), energies.end());
  std::vector<double> w(energies.size());
  double z = 0;
  for (size_t i = 0; i < w.size(); ++i) {
    w[i] = std::exp(-(energies[i] - m) / lambda);
    z += w[i];
  }
  for (double& x : w) x /= z;
  return w;
}

double log_sum_exp_energy(const std::vector<double>& energies, double lambda) {
  if (!(lambda > 0)) throw MgtkError("temperature must be positive");
  if (energies.empty()) throw MgtkError("no energies");
  // soft minimum with the count-normalized sum, so that
  // min E <= value <= min E + lambda log K holds exactly
  const double m = *std::min_element(energies.begin(), energies.end());
  double z = 0;
  for (double e : energies) z += std::exp(-(e - m) / lambda);
  return m - lambda * std::log(z / double(energies.size()));
}

double temperature(int t, int total, double lambda0) {
  if (t < 0 || t >= total) throw MgtkError("epoch index out of range");
  if (!(lambda0 > 0)) throw MgtkError("lambda0 must be positive");
  return std::max(lambda0 * (1.0 - double(t) / double(total)), kTemperatureFloor);
}

}  // namespace mgtk
