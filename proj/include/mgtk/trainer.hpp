#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mgtk/geometry.hpp"
#include "mgtk/graphstore.hpp"
#include "mgtk/maxent.hpp"
#include "mgtk/mixture.hpp"
#include "mgtk/temporal.hpp"

namespace mgtk {

struct ModelParams {
  DomainBounds bounds;
  std::vector<ManifoldKind> metrics;
  // embeddings[m][copy][entity]; one copy in time-static mode, T otherwise
  std::vector<std::vector<std::vector<Point>>> embeddings;
  std::vector<std::vector<Transport>> transports;  // [relation][metric]
  Mat alpha;  // n_relations x n_bins
  Vec beta;   // per relation
  Vec tau;    // per relation
  MixtureWeights mixture;
  bool per_bin_embeddings = false;

  int n_metrics() const { return static_cast<int>(metrics.size()); }
  int n_entities() const {
    return metrics.empty() ? 0 : static_cast<int>(embeddings[0][0].size());
  }
  const Point& embedding(int m, int entity, int u) const {
    return embeddings[m][per_bin_embeddings ? u - 1 : 0][entity];
  }
  Point& embedding(int m, int entity, int u) {
    return embeddings[m][per_bin_embeddings ? u - 1 : 0][entity];
  }
};

struct TrainConfig {
  int epochs = 60;
  double learning_rate = 1e-2;
  double lambda0 = 1.0;
  bool anneal = true;
  double lambda_gate = 1e-3;
  double lambda_rad = 1e-4;
  double lambda_corr = 0.0;
  double eps_gate = 1e-8;        // gate regularizer smoothing
  double convergence_tol = 1e-4;  // epsilon on ||w_new - w_old||_F
  std::uint64_t seed = 1;
  int dim = 2;
  std::vector<Manifold> metric_tags = {Manifold::Euclidean, Manifold::Hyperbolic,
                                       Manifold::Spherical};
  DomainBounds bounds;
  FeatureConfig features;
  int candidate_k = 16;        // MaxEnt candidate-set size
  int k_min = 24;              // repair expansion target, capped at n_entities
  int k_neg = 16;              // sampled negatives per positive context
  bool exhaustive_negatives = true;
  bool learn_translations = false;
  bool per_bin_embeddings = false;
  bool monotone_safeguard = true;  // reject block updates that increase J
  bool distortion_in_step = false;  // step 3 descends J's soft-min distortion
                                    // term too (block descent on the surrogate)
  bool line_search = true;
  int inner_steps = 1;  // embedding gradient steps per outer iteration
  int train_bin_limit = 0;  // 0 = use all bins
  double init_scale = 0.5;
  double c_cond = 1e6;
  double multiplier_cap = 50.0;

  void validate() const;
};

struct TraceRow {
  int iteration = 0;
  double lambda = 0.0;
  double J = 0.0;
  double nll = 0.0;
  double omega_gate = 0.0;
  double omega_rad = 0.0;
  double omega_corr = 0.0;
  double weight_change = 0.0;
  Mat energies;  // n_relations x n_metrics distortion table
  Mat weights;   // mixture weights after the update
  bool j_increased = false;
  int coeff_refresh_rejected = 0;
  int weight_update_damped = 0;
  int degenerate_contexts = 0;
  int infeasible_contexts = 0;
  int transport_clamps = 0;
  int pinned_embeddings = 0;  // embeddings within 1e-6 of their norm bound
  int repair_failures = 0;    // contexts that failed Algorithm-2 style repair
};

struct TrainTrace {
  std::vector<TraceRow> rows;
  bool converged = false;
  int rank_deficiency_failures = 0;  // contexts that failed repair
};

struct Regularizers {
  double gate = 0.0;
  double rad = 0.0;
  double corr = 0.0;
};

Regularizers regularizers(const ModelParams& params, const TemporalKG& kg, int u,
                          const FeatureConfig& features, double eps_gate = 1e-8);

// cloglog NLL + weighted regularizers + soft-min distortion term at lambda
double surrogate_J(const ModelParams& params, const TemporalKG& kg,
                   const TrainConfig& cfg, double lambda);

// one projected gradient step on the cloglog objective with regularizers;
// returns the post-step objective value
double embedding_step(ModelParams& params, const TemporalKG& kg,
                      const TrainConfig& cfg, double learning_rate);

struct TrainResult {
  ModelParams params;
  TrainTrace trace;
};

TrainResult train(const TemporalKG& kg, const TrainConfig& cfg);

struct RankedTail {
  int tail = 0;
  double score = 0.0;
};

// candidates sorted by canonical score, descending; ties by entity index
std::vector<RankedTail> score_rank(const ModelParams& params, const TemporalKG& kg,
                                   int h, int r, int u,
                                   const std::vector<int>& candidates,
                                   const FeatureConfig& features);

double model_score(const ModelParams& params, const TemporalKG& kg, int h, int r,
                   int t, int u, const FeatureConfig& features);

// embedding coordinates (and optionally transport translations) flattened in a
// deterministic order, for finite-difference checks of the training gradient
std::vector<double> flatten_embeddings(const ModelParams& params,
                                       bool include_translations = false);
void unflatten_embeddings(ModelParams& params, const std::vector<double>& flat,
                          bool include_translations = false);
// cloglog NLL plus the embedding-dependent regularizers (the step-3 objective)
double training_objective(const ModelParams& params, const TemporalKG& kg,
                          const TrainConfig& cfg);
// gradient of training_objective in flatten_embeddings layout
std::vector<double> training_gradient(const ModelParams& params,
                                      const TemporalKG& kg, const TrainConfig& cfg);

// composite energy of (h, t) under relation r at bin u
double model_energy(const ModelParams& params, int r, int h, int t, int u);

ModelParams init_params(const TemporalKG& kg, const TrainConfig& cfg);

void save_checkpoint(const ModelParams& params, const std::string& header_extra_json,
                     const std::string& path);
ModelParams load_checkpoint(const std::string& path, std::string* header_json = nullptr);

void save_trace_csv(const TrainTrace& trace, const std::string& path);
TrainTrace load_trace_csv(const std::string& path);

struct EvalMetrics {
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits3 = 0.0;
  double hits10 = 0.0;
  int n_queries = 0;
  double chance_mrr = 0.0;  // expected MRR of a uniformly random ranking
};

// filtered ranking over all entities for every positive in bins (u_from..u_to)
EvalMetrics evaluate_ranking(const ModelParams& params, const TemporalKG& kg,
                             int u_from, int u_to, const FeatureConfig& features);

}  // namespace mgtk
