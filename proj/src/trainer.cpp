#include "mgtk/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <unordered_map>

namespace mgtk {

void TrainConfig::validate() const {
  if (epochs < 1 || learning_rate <= 0 || lambda0 <= 0 || dim < 1)
    throw MgtkError("invalid training config");
  if (lambda_gate < 0 || lambda_rad < 0 || lambda_corr < 0 || eps_gate <= 0)
    throw MgtkError("regularizer coefficients must be nonnegative");
  if (!(convergence_tol > 0)) throw MgtkError("convergence tolerance must be positive");
  if (metric_tags.empty()) throw MgtkError("at least one metric required");
  if (candidate_k < 2 || k_neg < 1 || inner_steps < 1)
    throw MgtkError("invalid candidate/negative counts");
  bounds.validate();
}

ModelParams init_params(const TemporalKG& kg, const TrainConfig& cfg) {
  cfg.validate();
  ModelParams p;
  p.bounds = cfg.bounds;
  p.per_bin_embeddings = cfg.per_bin_embeddings;
  const int copies = cfg.per_bin_embeddings ? std::max(kg.n_bins(), 1) : 1;
  auto rng = seeded_rng(cfg.seed, 0x1417);
  for (Manifold tag : cfg.metric_tags) p.metrics.push_back({tag, cfg.dim});
  p.embeddings.resize(p.n_metrics());
  for (int m = 0; m < p.n_metrics(); ++m) {
    p.embeddings[m].resize(copies);
    for (int c = 0; c < copies; ++c) {
      p.embeddings[m][c].reserve(kg.n_entities());
      for (int i = 0; i < kg.n_entities(); ++i)
        p.embeddings[m][c].push_back(
            random_point(p.metrics[m], rng, cfg.bounds, cfg.init_scale));
    }
  }
  p.transports.resize(kg.n_relations());
  for (int r = 0; r < kg.n_relations(); ++r)
    for (int m = 0; m < p.n_metrics(); ++m)
      p.transports[r].push_back(
          random_isometry(p.metrics[m], rng, cfg.bounds, 0.25));
  p.alpha = Mat::Zero(kg.n_relations(), std::max(kg.n_bins(), 1));
  p.beta = Vec::Zero(kg.n_relations());
  p.tau = Vec::Zero(kg.n_relations());
  p.mixture = MixtureWeights::uniform(kg.n_relations(), p.n_metrics());
  return p;
}

double model_energy(const ModelParams& params, int r, int h, int t, int u) {
  double energy = 0;
  for (int m = 0; m < params.n_metrics(); ++m) {
    const Point ph = apply_transport(params.transports[r][m],
                                     params.embedding(m, h, u),
                                     params.bounds.R_H);
    energy += params.mixture.weights(r, m) *
              squared_distance(ph, params.embedding(m, t, u));
  }
  return energy;
}

double model_score(const ModelParams& params, const TemporalKG& kg, int h, int r,
                   int t, int u, const FeatureConfig& features) {
  const int col = std::min(u, static_cast<int>(params.alpha.cols()));
  const double s = structural_feature(kg, h, r, t, u, features);
  return canonical_score(params.alpha(r, col - 1), params.beta(r), params.tau(r),
                         s, model_energy(params, r, h, t, u));
}

std::vector<RankedTail> score_rank(const ModelParams& params, const TemporalKG& kg,
                                   int h, int r, int u,
                                   const std::vector<int>& candidates,
                                   const FeatureConfig& features) {
  std::vector<RankedTail> out;
  out.reserve(candidates.size());
  for (int t : candidates)
    out.push_back({t, model_score(params, kg, h, r, t, u, features)});
  std::sort(out.begin(), out.end(), [](const RankedTail& a, const RankedTail& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.tail < b.tail;
  });
  return out;
}

namespace {

struct Ctx {
  int h = 0, r = 0, u = 0;
  std::vector<int> positives;
  std::vector<double> pos_s;
  std::vector<int> negatives;
  std::vector<double> neg_s;
  double neg_q = 1.0;     // proposal probability (sampled mode)
  double neg_weight = 1.0;
  std::vector<int> cands;  // MaxEnt candidate set
  std::vector<double> cand_s;
};

struct FeatureCache {
  const TemporalKG* kg = nullptr;
  FeatureConfig cfg;
  mutable std::unordered_map<std::uint64_t, double> cache;

  double get(int h, int r, int t, int u) const {
    const std::uint64_t key = (std::uint64_t(h) << 40) | (std::uint64_t(t) << 16) |
                              std::uint64_t(u);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    const double s = structural_feature(*kg, h, r, t, u, cfg);
    cache.emplace(key, s);
    return s;
  }
};

struct Workspace {
  const TemporalKG* kg = nullptr;  // training slice
  TrainConfig cfg;
  std::vector<Ctx> contexts;
  FeatureCache features;
  int u_ref = 1;  // reference bin for distortion energies
  // distortion inputs per relation
  std::vector<std::vector<PairProb>> pairs;
  std::vector<std::vector<double>> graph_dists;
  int k_neg_eff = 1;

  void build(const TemporalKG& kg_train, const TrainConfig& config) {
    kg = &kg_train;
    cfg = config;
    features.kg = kg;
    features.cfg = config.features;
    u_ref = std::max(kg_train.n_bins(), 1);
    k_neg_eff = 1;  // per-term weights already average the draws

    std::map<std::tuple<int, int, int>, std::vector<int>> grouped;
    for (const Quad& q : kg_train.quads()) grouped[{q.h, q.r, q.u}].push_back(q.t);
    int ctx_id = 0;
    for (auto& [key, tails] : grouped) {
      Ctx c;
      std::tie(c.h, c.r, c.u) = key;
      std::sort(tails.begin(), tails.end());
      tails.erase(std::unique(tails.begin(), tails.end()), tails.end());
      c.positives = tails;
      for (int t : c.positives) c.pos_s.push_back(features.get(c.h, c.r, t, c.u));

      if (config.exhaustive_negatives) {
        for (int t = 0; t < kg_train.n_entities(); ++t)
          if (!std::binary_search(c.positives.begin(), c.positives.end(), t))
            c.negatives.push_back(t);
        c.neg_q = 1.0;
        c.neg_weight = 1.0;
      } else {
        const int draws = config.k_neg * int(c.positives.size());
        const auto sampled = sample_negatives(kg_train, c.h, c.r, c.u, draws,
                                              config.seed + 77 + ctx_id);
        for (const auto& s : sampled) {
          c.negatives.push_back(s.tail);
          c.neg_q = s.q;
        }
        c.neg_weight = 1.0 / double(draws);  // averaged monte carlo estimate
      }
      for (int t : c.negatives) c.neg_s.push_back(features.get(c.h, c.r, t, c.u));

      const int k = std::min(config.candidate_k, kg_train.n_entities());
      c.cands = candidate_set(kg_train, c.h, c.r, c.u, std::max(k, 2),
                              config.seed + 31);
      for (int t : c.cands) c.cand_s.push_back(features.get(c.h, c.r, t, c.u));
      contexts.push_back(std::move(c));
      ++ctx_id;
    }

    pairs.resize(kg_train.n_relations());
    graph_dists.resize(kg_train.n_relations());
    GraphView view(kg_train, u_ref);
    for (int r = 0; r < kg_train.n_relations(); ++r) {
      try {
        pairs[r] = pair_distribution(kg_train, r, u_ref);
      } catch (const EmptySupportError&) {
        continue;  // relation never observed; energies stay zero
      }
      int last_h = -1;
      std::vector<int> dist;
      for (const PairProb& pp : pairs[r]) {
        if (pp.h != last_h) {
          dist = view.distances_from(pp.h);
          last_h = pp.h;
        }
        graph_dists[r].push_back(dist[pp.t] >= 0 ? double(dist[pp.t])
                                                 : double(kg_train.n_entities() - 1));
      }
    }
  }

  double context_energy(const ModelParams& p, const Ctx& c, int t) const {
    return model_energy(p, c.r, c.h, t, c.u);
  }

  double nll_value(const ModelParams& p) const {
    std::vector<PosTerm> pos;
    std::vector<NegTerm> neg;
    for (const Ctx& c : contexts) {
      const double delta = kg->bin_width(c.u);
      for (size_t i = 0; i < c.positives.size(); ++i) {
        const double f = canonical_score(p.alpha(c.r, c.u - 1), p.beta(c.r),
                                         p.tau(c.r), c.pos_s[i],
                                         context_energy(p, c, c.positives[i]));
        pos.push_back({f, delta});
      }
      for (size_t i = 0; i < c.negatives.size(); ++i) {
        const double f = canonical_score(p.alpha(c.r, c.u - 1), p.beta(c.r),
                                         p.tau(c.r), c.neg_s[i],
                                         context_energy(p, c, c.negatives[i]));
        neg.push_back({f, delta, c.neg_q, c.neg_weight});
      }
    }
    return nll(pos, neg, k_neg_eff);
  }

  Mat energy_table(const ModelParams& p) const {
    Mat e = Mat::Zero(kg->n_relations(), p.n_metrics());
    const int copy_u = u_ref;
    for (int r = 0; r < kg->n_relations(); ++r) {
      if (pairs[r].empty()) continue;
      for (int m = 0; m < p.n_metrics(); ++m)
        e(r, m) = distortion_energy(pairs[r], graph_dists[r],
                                    p.embeddings[m][p.per_bin_embeddings ? copy_u - 1 : 0],
                                    p.transports[r][m], p.bounds.R_H);
    }
    return e;
  }
};

Regularizers compute_regularizers(const ModelParams& params, const Workspace& ws) {
  Regularizers reg;
  for (int r = 0; r < params.mixture.weights.rows(); ++r)
    for (int m = 0; m < params.mixture.weights.cols(); ++m)
      reg.gate += std::sqrt(params.mixture.weights(r, m) *
                                params.mixture.weights(r, m) +
                            ws.cfg.eps_gate);

  const int copies = static_cast<int>(params.embeddings.empty() ? 0
                                          : params.embeddings[0].size());
  for (int m = 0; m < params.n_metrics(); ++m)
    for (int c = 0; c < copies; ++c)
      for (const Point& x : params.embeddings[m][c]) {
        const double n2 = x.coords.squaredNorm();
        switch (params.metrics[m].tag) {
          case Manifold::Euclidean:
          case Manifold::Spherical:
            reg.rad += n2;
            break;
          case Manifold::Hyperbolic:
            reg.rad += 1.0 / (1.0 - n2);
            break;
        }
      }

  // pearson correlation between S and composite D over positives, per relation
  for (int r = 0; r < ws.kg->n_relations(); ++r) {
    std::vector<double> ss, dd;
    for (const Ctx& c : ws.contexts) {
      if (c.r != r) continue;
      for (size_t i = 0; i < c.positives.size(); ++i) {
        ss.push_back(c.pos_s[i]);
        dd.push_back(ws.context_energy(params, c, c.positives[i]));
      }
    }
    if (ss.size() < 2) continue;
    const double n = double(ss.size());
    const double ms = std::accumulate(ss.begin(), ss.end(), 0.0) / n;
    const double md = std::accumulate(dd.begin(), dd.end(), 0.0) / n;
    double cov = 0, vs = 0, vd = 0;
    for (size_t i = 0; i < ss.size(); ++i) {
      cov += (ss[i] - ms) * (dd[i] - md);
      vs += (ss[i] - ms) * (ss[i] - ms);
      vd += (dd[i] - md) * (dd[i] - md);
    }
    if (vs < 1e-12 || vd < 1e-12) continue;
    reg.corr += cov / std::sqrt(vs * vd);
  }
  return reg;
}

// NLL plus the embedding-dependent regularizers; the objective of step 3.
// with cfg.distortion_in_step the soft-min distortion term joins it, making
// step 3 a block descent on the surrogate J
double step_objective(const ModelParams& params, const Workspace& ws,
                      double lambda = 0.0) {
  const Regularizers reg = compute_regularizers(params, ws);
  double obj = ws.nll_value(params) + ws.cfg.lambda_rad * reg.rad +
               ws.cfg.lambda_corr * reg.corr;
  if (ws.cfg.distortion_in_step && lambda > 0) {
    const Mat e = ws.energy_table(params);
    for (int r = 0; r < e.rows(); ++r) {
      if (ws.pairs[size_t(r)].empty()) continue;
      std::vector<double> row(e.cols());
      for (int m = 0; m < e.cols(); ++m) row[m] = e(r, m);
      obj += log_sum_exp_energy(row, lambda);
    }
  }
  return obj;
}

double full_J(const ModelParams& params, const Workspace& ws, double lambda) {
  const Regularizers reg = compute_regularizers(params, ws);
  double j = ws.nll_value(params) + ws.cfg.lambda_gate * reg.gate +
             ws.cfg.lambda_rad * reg.rad + ws.cfg.lambda_corr * reg.corr;
  const Mat e = ws.energy_table(params);
  for (int r = 0; r < e.rows(); ++r) {
    std::vector<double> row(e.cols());
    for (int m = 0; m < e.cols(); ++m) row[m] = e(r, m);
    j += log_sum_exp_energy(row, lambda);
  }
  return j;
}

struct GradBuffer {
  // [metric][copy][entity]
  std::vector<std::vector<std::vector<Vec>>> g;
  // translation gradients [relation][metric] (flat per transport params)
  std::vector<std::vector<Vec>> g_trans;

  void init(const ModelParams& p) {
    g.resize(p.n_metrics());
    for (int m = 0; m < p.n_metrics(); ++m) {
      g[m].resize(p.embeddings[m].size());
      for (size_t c = 0; c < g[m].size(); ++c) {
        g[m][c].assign(p.embeddings[m][c].size(),
                       Vec::Zero(p.metrics[m].ambient_dim()));
      }
    }
    g_trans.resize(p.transports.size());
    for (size_t r = 0; r < p.transports.size(); ++r)
      for (size_t m = 0; m < p.transports[r].size(); ++m)
        g_trans[r].push_back(Vec::Zero(p.transports[r][m].translation.size()));
  }
};

// jacobian of mobius_add(a, x) with respect to a
Mat mobius_jacobian_wrt_a(const Vec& a, const Vec& x) {
  const int n = static_cast<int>(a.size());
  const double ax = a.dot(x);
  const double na2 = a.squaredNorm();
  const double nx2 = x.squaredNorm();
  const double pp = 1.0 + 2.0 * ax + nx2;
  const double qq = 1.0 - na2;
  const double den = 1.0 + 2.0 * ax + na2 * nx2;
  const Vec num = pp * a + qq * x;
  const Mat dnum = pp * Mat::Identity(n, n) + 2.0 * a * x.transpose() -
                   2.0 * x * a.transpose();
  const Vec dden = 2.0 * x + 2.0 * nx2 * a;
  return (dnum * den - num * dden.transpose()) / (den * den);
}

// accumulates factor * grad of d_m^2(phi(x_h), x_t) into head/tail/translation slots
void accumulate_pair_gradient(const ModelParams& p, GradBuffer& gb, int r, int m,
                              int h, int t, int u, double factor,
                              const Transport& inv, bool learn_translations) {
  const int copy = p.per_bin_embeddings ? u - 1 : 0;
  const Point& xh = p.embedding(m, h, u);
  const Point& xt = p.embedding(m, t, u);
  const double clamp_r = p.bounds.R_H * (1 + 1e-9);
  try {
    // head gradient via isometry: d(phi(x_h), x_t) = d(x_h, phi^{-1}(x_t))
    const Point pulled = apply_transport(inv, xt, clamp_r);
    gb.g[m][copy][h] += factor * grad_sq_distance(xh, pulled, p.bounds);
  } catch (const SingularityError&) {
    // coincident/antipodal configuration: skip the contribution
  }
  Point pushed;
  bool have_pushed = false;
  try {
    pushed = apply_transport(p.transports[r][m], xh, clamp_r);
    have_pushed = true;
    gb.g[m][copy][t] += factor * grad_sq_distance(xt, pushed, p.bounds);
  } catch (const SingularityError&) {
  }
  if (!learn_translations || !have_pushed) return;

  const Transport& tr = p.transports[r][m];
  try {
    const Vec g1 = grad_sq_distance(pushed, xt, p.bounds);
    switch (p.metrics[m].tag) {
      case Manifold::Euclidean:
        gb.g_trans[r][m] += factor * (tr.rotation.transpose() * g1);
        break;
      case Manifold::Hyperbolic: {
        const Mat ja = mobius_jacobian_wrt_a(tr.translation, xh.coords);
        gb.g_trans[r][m] +=
            factor * (ja.transpose() * (tr.rotation.transpose() * g1));
        break;
      }
      case Manifold::Spherical: {
        const int n = p.metrics[m].ambient_dim();
        const Vec pl = tr.translation.segment(0, n);
        const Vec ql = tr.translation.segment(n, n);
        const double theta = tr.translation(2 * n);
        const Mat dr = std::cos(theta) * (ql * pl.transpose() - pl * ql.transpose()) -
                       std::sin(theta) * (pl * pl.transpose() + ql * ql.transpose());
        gb.g_trans[r][m](2 * n) +=
            factor * (tr.rotation * (dr * xh.coords)).dot(g1);
        break;
      }
    }
  } catch (const SingularityError&) {
  }
}

// gradient of sum_r softmin_m E_{r,m} with respect to the embeddings
void accumulate_distortion_gradient(const ModelParams& p, const Workspace& ws,
                                    double lambda, GradBuffer& gb) {
  const Mat e = ws.energy_table(p);
  const int copy = p.per_bin_embeddings ? ws.u_ref - 1 : 0;
  for (int r = 0; r < e.rows(); ++r) {
    if (ws.pairs[r].empty()) continue;
    std::vector<double> row(e.cols());
    for (int m = 0; m < e.cols(); ++m) row[m] = e(r, m);
    const std::vector<double> soft = softmax_weights(row, lambda);
    for (int m = 0; m < e.cols(); ++m) {
      if (soft[m] < 1e-12) continue;
      const Transport inv = inverse_transport(p.transports[r][m]);
      for (size_t i = 0; i < ws.pairs[r].size(); ++i) {
        const PairProb& pp = ws.pairs[r][i];
        const Point& xh = p.embeddings[m][copy][pp.h];
        const Point& xt = p.embeddings[m][copy][pp.t];
        try {
          const Point pushed =
              apply_transport(p.transports[r][m], xh, p.bounds.R_H);
          const double d = geodesic_distance(pushed, xt);
          if (d < 1e-6) continue;
          // d/dx (d - g)^2 = (1 - g/d) * grad of d^2
          const double factor =
              soft[m] * pp.prob * (1.0 - ws.graph_dists[r][i] / d);
          const Point pulled = apply_transport(inv, xt, p.bounds.R_H);
          gb.g[m][copy][pp.h] +=
              factor * grad_sq_distance(xh, pulled, p.bounds);
          gb.g[m][copy][pp.t] +=
              factor * grad_sq_distance(xt, pushed, p.bounds);
        } catch (const SingularityError&) {
        }
      }
    }
  }
}

GradBuffer objective_gradient(const ModelParams& p, const Workspace& ws) {
  GradBuffer gb;
  gb.init(p);
  std::vector<std::vector<Transport>> inverses(p.transports.size());
  for (size_t r = 0; r < p.transports.size(); ++r)
    for (const Transport& t : p.transports[r])
      inverses[r].push_back(inverse_transport(t));

  for (const Ctx& c : ws.contexts) {
    const double delta = ws.kg->bin_width(c.u);
    std::vector<PosTerm> pos;
    std::vector<NegTerm> neg;
    std::vector<double> pos_d(c.positives.size()), neg_d(c.negatives.size());
    for (size_t i = 0; i < c.positives.size(); ++i) {
      pos_d[i] = ws.context_energy(p, c, c.positives[i]);
      pos.push_back({canonical_score(p.alpha(c.r, c.u - 1), p.beta(c.r), p.tau(c.r),
                                     c.pos_s[i], pos_d[i]),
                     delta});
    }
    for (size_t i = 0; i < c.negatives.size(); ++i) {
      neg_d[i] = ws.context_energy(p, c, c.negatives[i]);
      neg.push_back({canonical_score(p.alpha(c.r, c.u - 1), p.beta(c.r), p.tau(c.r),
                                     c.neg_s[i], neg_d[i]),
                     delta, c.neg_q, c.neg_weight});
    }
    const NllGradient ng = nll_gradient(pos, neg, ws.k_neg_eff);
    for (size_t i = 0; i < c.positives.size(); ++i) {
      const double dldd = ng.d_pos[i] * (-p.tau(c.r));
      for (int m = 0; m < p.n_metrics(); ++m)
        accumulate_pair_gradient(p, gb, c.r, m, c.h, c.positives[i], c.u,
                                 dldd * p.mixture.weights(c.r, m),
                                 inverses[c.r][m], ws.cfg.learn_translations);
    }
    for (size_t i = 0; i < c.negatives.size(); ++i) {
      const double dldd = ng.d_neg[i] * (-p.tau(c.r));
      for (int m = 0; m < p.n_metrics(); ++m)
        accumulate_pair_gradient(p, gb, c.r, m, c.h, c.negatives[i], c.u,
                                 dldd * p.mixture.weights(c.r, m),
                                 inverses[c.r][m], ws.cfg.learn_translations);
    }
  }

  // radius regularizer
  if (ws.cfg.lambda_rad > 0) {
    for (int m = 0; m < p.n_metrics(); ++m)
      for (size_t cc = 0; cc < p.embeddings[m].size(); ++cc)
        for (size_t i = 0; i < p.embeddings[m][cc].size(); ++i) {
          const Vec& x = p.embeddings[m][cc][i].coords;
          switch (p.metrics[m].tag) {
            case Manifold::Euclidean:
            case Manifold::Spherical:
              gb.g[m][cc][i] += ws.cfg.lambda_rad * 2.0 * x;
              break;
            case Manifold::Hyperbolic: {
              const double s = 1.0 - x.squaredNorm();
              gb.g[m][cc][i] += ws.cfg.lambda_rad * 2.0 / (s * s) * x;
              break;
            }
          }
        }
  }

  // correlation regularizer: d corr / d D_e chained through the composite energy
  if (ws.cfg.lambda_corr > 0) {
    for (int r = 0; r < ws.kg->n_relations(); ++r) {
      struct Ev {
        const Ctx* c;
        size_t idx;
      };
      std::vector<Ev> events;
      std::vector<double> ss, dd;
      for (const Ctx& c : ws.contexts) {
        if (c.r != r) continue;
        for (size_t i = 0; i < c.positives.size(); ++i) {
          events.push_back({&c, i});
          ss.push_back(c.pos_s[i]);
          dd.push_back(ws.context_energy(p, c, c.positives[i]));
        }
      }
      if (ss.size() < 2) continue;
      const double n = double(ss.size());
      const double ms = std::accumulate(ss.begin(), ss.end(), 0.0) / n;
      const double md = std::accumulate(dd.begin(), dd.end(), 0.0) / n;
      double cov = 0, vs = 0, vd = 0;
      for (size_t i = 0; i < ss.size(); ++i) {
        cov += (ss[i] - ms) * (dd[i] - md);
        vs += (ss[i] - ms) * (ss[i] - ms);
        vd += (dd[i] - md) * (dd[i] - md);
      }
      if (vs < 1e-12 || vd < 1e-12) continue;
      const double norm_s = std::sqrt(vs), norm_d = std::sqrt(vd);
      const double corr = cov / (norm_s * norm_d);
      for (size_t i = 0; i < events.size(); ++i) {
        const double dcorr =
            (ss[i] - ms) / (norm_s * norm_d) - corr * (dd[i] - md) / vd;
        const Ctx& c = *events[i].c;
        const int t = c.positives[events[i].idx];
        for (int m = 0; m < p.n_metrics(); ++m)
          accumulate_pair_gradient(
              p, gb, r, m, c.h, t, c.u,
              ws.cfg.lambda_corr * dcorr * p.mixture.weights(r, m),
              inverse_transport(p.transports[r][m]), false);
      }
    }
  }

  // spherical gradients live in the tangent space
  for (int m = 0; m < p.n_metrics(); ++m)
    if (p.metrics[m].tag == Manifold::Spherical)
      for (size_t cc = 0; cc < gb.g[m].size(); ++cc)
        for (size_t i = 0; i < gb.g[m][cc].size(); ++i) {
          const Vec& x = p.embeddings[m][cc][i].coords;
          gb.g[m][cc][i] -= x.dot(gb.g[m][cc][i]) * x;
        }
  return gb;
}

void apply_step(ModelParams& p, const GradBuffer& gb, double eta,
                bool learn_translations) {
  for (int m = 0; m < p.n_metrics(); ++m)
    for (size_t cc = 0; cc < p.embeddings[m].size(); ++cc)
      for (size_t i = 0; i < p.embeddings[m][cc].size(); ++i) {
        if (!gb.g[m][cc][i].allFinite())
          throw MgtkError("non-finite embedding gradient");
        p.embeddings[m][cc][i].coords -= eta * gb.g[m][cc][i];
        project_to_domain(p.embeddings[m][cc][i], p.bounds);
      }
  if (!learn_translations) return;
  for (size_t r = 0; r < p.transports.size(); ++r)
    for (size_t m = 0; m < p.transports[r].size(); ++m) {
      Transport& tr = p.transports[r][m];
      if (!gb.g_trans[r][m].allFinite())
        throw MgtkError("non-finite transport gradient");
      tr.translation -= eta * gb.g_trans[r][m];
      const double nrm = tr.translation.norm();
      if (p.metrics[m].tag == Manifold::Hyperbolic && nrm > p.bounds.R_H)
        tr.translation *= p.bounds.R_H / nrm;
      if (p.metrics[m].tag == Manifold::Euclidean && nrm > p.bounds.R_E)
        tr.translation *= p.bounds.R_E / nrm;
    }
}

// one gradient step with optional backtracking; returns achieved objective
double inner_step(ModelParams& p, const Workspace& ws, double eta,
                  const std::function<double(const ModelParams&)>& objective,
                  double lambda = 0.0) {
  const double before = objective(p);
  GradBuffer gb = objective_gradient(p, ws);
  if (ws.cfg.distortion_in_step && lambda > 0)
    accumulate_distortion_gradient(p, ws, lambda, gb);
  if (!ws.cfg.line_search) {
    apply_step(p, gb, eta, ws.cfg.learn_translations);
    return objective(p);
  }
  double step = eta;
  for (int tries = 0; tries < 30; ++tries) {
    ModelParams trial = p;
    apply_step(trial, gb, step, ws.cfg.learn_translations);
    const double after = objective(trial);
    if (after <= before + 1e-12) {
      p = std::move(trial);
      return after;
    }
    step *= 0.5;
  }
  return before;  // no decrease found; keep parameters
}

struct RefreshStats {
  int degenerate = 0;
  int infeasible = 0;
  int failed_repair = 0;
};

void calibrate_alpha(ModelParams& p, const Workspace& ws);

// step 2: per-context MaxEnt solves pooled into per-(r,u) alpha and per-r beta/tau
RefreshStats refresh_coefficients(ModelParams& p, const Workspace& ws,
                                  std::uint64_t seed) {
  RefreshStats stats;
  // pooled empirical moments per (r,u) over the observed positives
  std::map<std::pair<int, int>, std::pair<std::vector<double>, std::vector<double>>>
      pooled;  // (r,u) -> (energies, features)
  for (const Ctx& c : ws.contexts)
    for (size_t i = 0; i < c.positives.size(); ++i) {
      auto& bucket = pooled[{c.r, c.u}];
      bucket.first.push_back(ws.context_energy(p, c, c.positives[i]));
      bucket.second.push_back(c.pos_s[i]);
    }

  std::map<std::pair<int, int>, std::vector<double>> alpha_acc;
  std::vector<std::vector<double>> beta_acc(p.beta.size()), tau_acc(p.tau.size());

  int ctx_id = 0;
  for (const Ctx& c : ws.contexts) {
    ++ctx_id;
    const auto& bucket = pooled[{c.r, c.u}];
    MomentConstraints mom = empirical_moments(bucket.first, bucket.second);

    std::vector<double> d_sq(c.cands.size());
    for (size_t i = 0; i < c.cands.size(); ++i)
      d_sq[i] = ws.context_energy(p, c, c.cands[i]);
    std::vector<double> s_hat = c.cand_s;

    // keep pooled constraints inside this context's feature hull
    auto hull_clamp = [](double v, const std::vector<double>& xs) {
      const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
      const double margin = 1e-3 * std::max(*hi - *lo, 1e-9);
      return clamp(v, *lo + margin, std::max(*lo + margin, *hi - margin));
    };
    mom.c_S = hull_clamp(mom.c_S, s_hat);
    mom.c_D = hull_clamp(mom.c_D, d_sq);

    FeatureMatrix f = make_feature_matrix(s_hat, d_sq);
    auto rep = check_nondegeneracy(f, ws.cfg.c_cond);
    if (!rep.ok()) {
      ++stats.degenerate;
      RepairContext rc;
      rc.candidates = c.cands;
      rc.pool.resize(ws.kg->n_entities());
      std::iota(rc.pool.begin(), rc.pool.end(), 0);
      rc.k_min = std::min(std::max(ws.cfg.k_min, ws.cfg.candidate_k + 4),
                          ws.kg->n_entities());
      rc.c_cond = ws.cfg.c_cond;
      rc.featurize = [&](int t) {
        return std::make_pair(ws.features.get(c.h, c.r, t, c.u),
                              ws.context_energy(p, c, t));
      };
      try {
        f = repair_degeneracy(f, rc, seed + ctx_id);
      } catch (const IrreparableDegeneracyError&) {
        ++stats.failed_repair;
        continue;
      }
    }

    SolveOptions opts;
    opts.tol = 1e-9;
    opts.max_iter = 120;
    opts.require_nondegenerate = false;  // checked/repaired above
    opts.c_cond = ws.cfg.c_cond;
    MaxEntSolution sol;
    try {
      sol = solve_maxent(f, mom, opts);
    } catch (const InfeasibleConstraintsError&) {
      ++stats.infeasible;
      continue;
    }
    const double cap = ws.cfg.multiplier_cap;
    sol.beta = clamp(sol.beta, -cap, cap);
    sol.tau = clamp(sol.tau, -cap, cap);
    alpha_acc[{c.r, c.u}].push_back(sol.alpha);
    beta_acc[c.r].push_back(sol.beta);
    tau_acc[c.r].push_back(sol.tau);
  }

  auto mean = [](const std::vector<double>& xs) {
    return std::accumulate(xs.begin(), xs.end(), 0.0) / double(xs.size());
  };
  for (int r = 0; r < p.beta.size(); ++r) {
    if (!beta_acc[r].empty()) p.beta(r) = mean(beta_acc[r]);
    if (!tau_acc[r].empty()) p.tau(r) = mean(tau_acc[r]);
  }

  calibrate_alpha(p, ws);
  return stats;
}

// alpha is the gauge freedom of the maxent distribution (probs are invariant
// to it); fix it per (r,u) by the 1-d convex nll calibration given (beta,tau)
void calibrate_alpha(ModelParams& p, const Workspace& ws) {
  std::set<std::pair<int, int>> cells;
  for (const Ctx& c : ws.contexts)
    if (!c.positives.empty()) cells.insert({c.r, c.u});
  for (const auto& [r, u] : cells) {
    std::vector<std::pair<double, double>> pos;   // (base score, delta)
    std::vector<std::tuple<double, double, double>> neg;  // (base, delta, weight/q)
    for (const Ctx& c : ws.contexts) {
      if (c.r != r || c.u != u) continue;
      const double delta = ws.kg->bin_width(u);
      for (size_t i = 0; i < c.positives.size(); ++i)
        pos.push_back({p.beta(r) * c.pos_s[i] -
                           p.tau(r) * ws.context_energy(p, c, c.positives[i]),
                       delta});
      for (size_t i = 0; i < c.negatives.size(); ++i)
        neg.push_back({p.beta(r) * c.neg_s[i] -
                           p.tau(r) * ws.context_energy(p, c, c.negatives[i]),
                       delta, c.neg_weight / c.neg_q});
    }
    if (pos.empty()) continue;
    // d nll / d alpha = sum_neg w*x - sum_pos x/(e^x - 1), strictly increasing
    auto slope = [&](double a) {
      double s = 0;
      for (const auto& [g, delta] : pos) {
        const double x = delta * std::exp(clamp(a + g, -kScoreClamp, kScoreClamp));
        s -= x * std::exp(-x) / (-std::expm1(-x));
      }
      for (const auto& [g, delta, w] : neg) {
        const double x = delta * std::exp(clamp(a + g, -kScoreClamp, kScoreClamp));
        s += w * x;
      }
      return s;
    };
    double lo = -30.0, hi = 10.0;
    if (slope(lo) > 0 || slope(hi) < 0) continue;  // calibration out of range
    for (int it = 0; it < 80; ++it) {
      const double mid = 0.5 * (lo + hi);
      (slope(mid) <= 0 ? lo : hi) = mid;
    }
    p.alpha(r, u - 1) = 0.5 * (lo + hi);
  }
}

}  // namespace

Regularizers regularizers(const ModelParams& params, const TemporalKG& kg, int u,
                          const FeatureConfig& features, double eps_gate) {
  TrainConfig cfg;
  cfg.features = features;
  cfg.eps_gate = eps_gate;
  cfg.train_bin_limit = u;
  Workspace ws;
  const TemporalKG sliced = kg.restricted_to(u);
  ws.build(sliced, cfg);
  return compute_regularizers(params, ws);
}

double surrogate_J(const ModelParams& params, const TemporalKG& kg,
                   const TrainConfig& cfg, double lambda) {
  Workspace ws;
  const TemporalKG sliced =
      cfg.train_bin_limit > 0 ? kg.restricted_to(cfg.train_bin_limit) : kg;
  ws.build(sliced, cfg);
  return full_J(params, ws, lambda);
}

std::vector<double> flatten_embeddings(const ModelParams& p, bool include_translations) {
  std::vector<double> flat;
  for (int m = 0; m < p.n_metrics(); ++m)
    for (const auto& copy : p.embeddings[m])
      for (const Point& x : copy)
        for (int i = 0; i < x.coords.size(); ++i) flat.push_back(x.coords(i));
  if (include_translations)
    for (const auto& row : p.transports)
      for (const Transport& tr : row) {
        if (tr.kind.tag == Manifold::Spherical) {
          // only the great-circle angle is learnable; the plane stays fixed
          flat.push_back(tr.translation(tr.translation.size() - 1));
        } else {
          for (int i = 0; i < tr.translation.size(); ++i)
            flat.push_back(tr.translation(i));
        }
      }
  return flat;
}

void unflatten_embeddings(ModelParams& p, const std::vector<double>& flat,
                          bool include_translations) {
  size_t k = 0;
  for (int m = 0; m < p.n_metrics(); ++m)
    for (auto& copy : p.embeddings[m])
      for (Point& x : copy) {
        for (int i = 0; i < x.coords.size(); ++i) x.coords(i) = flat.at(k++);
        if (p.metrics[m].tag == Manifold::Spherical) x.coords.normalize();
      }
  if (include_translations)
    for (auto& row : p.transports)
      for (Transport& tr : row) {
        if (tr.kind.tag == Manifold::Spherical) {
          tr.translation(tr.translation.size() - 1) = flat.at(k++);
        } else {
          for (int i = 0; i < tr.translation.size(); ++i)
            tr.translation(i) = flat.at(k++);
        }
      }
  if (k != flat.size()) throw MgtkError("flat parameter vector has wrong length");
}

double training_objective(const ModelParams& params, const TemporalKG& kg,
                          const TrainConfig& cfg) {
  Workspace ws;
  const TemporalKG sliced =
      cfg.train_bin_limit > 0 ? kg.restricted_to(cfg.train_bin_limit) : kg;
  ws.build(sliced, cfg);
  return step_objective(params, ws);
}

std::vector<double> training_gradient(const ModelParams& params,
                                      const TemporalKG& kg, const TrainConfig& cfg) {
  Workspace ws;
  const TemporalKG sliced =
      cfg.train_bin_limit > 0 ? kg.restricted_to(cfg.train_bin_limit) : kg;
  ws.build(sliced, cfg);
  const GradBuffer gb = objective_gradient(params, ws);
  std::vector<double> flat;
  for (int m = 0; m < params.n_metrics(); ++m)
    for (const auto& copy : gb.g[m])
      for (const Vec& g : copy)
        for (int i = 0; i < g.size(); ++i) flat.push_back(g(i));
  if (cfg.learn_translations)
    for (size_t r = 0; r < gb.g_trans.size(); ++r)
      for (size_t m = 0; m < gb.g_trans[r].size(); ++m) {
        const Vec& g = gb.g_trans[r][m];
        if (params.transports[r][m].kind.tag == Manifold::Spherical)
          flat.push_back(g(g.size() - 1));
        else
          for (int i = 0; i < g.size(); ++i) flat.push_back(g(i));
      }
  return flat;
}

double embedding_step(ModelParams& params, const TemporalKG& kg,
                      const TrainConfig& cfg, double learning_rate) {
  Workspace ws;
  const TemporalKG sliced =
      cfg.train_bin_limit > 0 ? kg.restricted_to(cfg.train_bin_limit) : kg;
  ws.build(sliced, cfg);
  return inner_step(params, ws, learning_rate,
                    [&](const ModelParams& p) { return step_objective(p, ws); });
}

TrainResult train(const TemporalKG& kg, const TrainConfig& cfg) {
  cfg.validate();
  if (kg.quads().empty()) throw MgtkError("cannot train on an empty graph");

  const TemporalKG kg_train =
      cfg.train_bin_limit > 0 ? kg.restricted_to(cfg.train_bin_limit) : kg;
  Workspace ws;
  ws.build(kg_train, cfg);

  TrainResult result;
  result.params = init_params(kg, cfg);
  ModelParams& p = result.params;
  TrainTrace& trace = result.trace;

  ModelParams best = p;
  double best_j = std::numeric_limits<double>::infinity();

  {
    TraceRow row;
    row.iteration = 0;
    row.lambda = cfg.anneal ? temperature(0, cfg.epochs, cfg.lambda0) : cfg.lambda0;
    const Regularizers reg = compute_regularizers(p, ws);
    row.nll = ws.nll_value(p);
    row.omega_gate = reg.gate;
    row.omega_rad = reg.rad;
    row.omega_corr = reg.corr;
    row.energies = ws.energy_table(p);
    row.weights = p.mixture.weights;
    row.J = full_J(p, ws, row.lambda);
    trace.rows.push_back(row);
    best_j = row.J;
  }

  for (int k = 0; k < cfg.epochs; ++k) {
    const double lambda =
        cfg.anneal ? temperature(k, cfg.epochs, cfg.lambda0) : cfg.lambda0;
    TraceRow row;
    row.iteration = k + 1;
    row.lambda = lambda;

    const double j_start = full_J(p, ws, lambda);

    // step 2: refresh maxent coefficients, guarded against nll increases
    {
      const double nll_before = ws.nll_value(p);
      ModelParams trial = p;
      const RefreshStats stats =
          refresh_coefficients(trial, ws, cfg.seed + 1000 + k);
      row.degenerate_contexts = stats.degenerate;
      row.infeasible_contexts = stats.infeasible;
      row.repair_failures = stats.failed_repair;
      trace.rank_deficiency_failures += stats.failed_repair;
      const double nll_after = ws.nll_value(trial);
      if (!cfg.monotone_safeguard || nll_after <= nll_before + 1e-12) {
        p = std::move(trial);
      } else {
        ++row.coeff_refresh_rejected;
        // keep the previous multipliers but recalibrate the alpha gauge; this
        // per-cell 1-d minimization never increases the likelihood
        ModelParams fallback = p;
        calibrate_alpha(fallback, ws);
        if (ws.nll_value(fallback) <= nll_before + 1e-12) p = std::move(fallback);
      }
    }

    // step 3: embedding gradient descent
    auto objective = [&](const ModelParams& q) {
      return cfg.monotone_safeguard ? full_J(q, ws, lambda)
                                    : step_objective(q, ws, lambda);
    };
    for (int s = 0; s < cfg.inner_steps; ++s)
      inner_step(p, ws, cfg.learning_rate, objective, lambda);

    // step 4: distortion energies
    row.energies = ws.energy_table(p);

    for (const auto& c : ws.contexts)
      for (int m = 0; m < p.n_metrics(); ++m) {
        bool clamped = false;
        apply_transport(p.transports[c.r][m], p.embedding(m, c.h, c.u),
                        p.bounds.R_H, &clamped);
        row.transport_clamps += clamped;
      }
    for (int m = 0; m < p.n_metrics(); ++m) {
      if (p.metrics[m].tag == Manifold::Spherical) continue;
      const double bound = p.metrics[m].tag == Manifold::Euclidean
                               ? p.bounds.R_E
                               : p.bounds.R_H * (1.0 - 1e-7);
      for (const auto& copy : p.embeddings[m])
        for (const Point& x : copy)
          row.pinned_embeddings += x.coords.norm() >= bound - 1e-6;
    }

    // step 5: softmax weight update
    double target_gap = 0.0;
    {
      const Mat w_old = p.mixture.weights;
      Mat target(w_old.rows(), w_old.cols());
      for (int r = 0; r < w_old.rows(); ++r) {
        std::vector<double> e(w_old.cols());
        for (int m = 0; m < w_old.cols(); ++m) e[m] = row.energies(r, m);
        const std::vector<double> w = softmax_weights(e, lambda);
        for (int m = 0; m < w_old.cols(); ++m) target(r, m) = w[m];
      }
      if (!cfg.monotone_safeguard) {
        p.mixture.weights = target;
      } else {
        const double j_before = full_J(p, ws, lambda);
        double scale = 1.0;
        bool applied = false;
        for (int tries = 0; tries < 6; ++tries) {
          ModelParams trial = p;
          trial.mixture.weights = (1.0 - scale) * w_old + scale * target;
          if (full_J(trial, ws, lambda) <= j_before + 1e-9) {
            p = std::move(trial);
            applied = true;
            if (tries > 0) ++row.weight_update_damped;
            break;
          }
          scale *= 0.5;
        }
        if (!applied) ++row.weight_update_damped;
      }
      p.mixture.logits = p.mixture.weights.array().max(1e-300).log().matrix();
      row.weight_change = (p.mixture.weights - w_old).norm();
      target_gap = (target - w_old).norm();
    }

    const Regularizers reg = compute_regularizers(p, ws);
    row.nll = ws.nll_value(p);
    row.omega_gate = reg.gate;
    row.omega_rad = reg.rad;
    row.omega_corr = reg.corr;
    row.weights = p.mixture.weights;
    row.J = full_J(p, ws, lambda);
    row.j_increased = row.J > j_start + 1e-6;
    trace.rows.push_back(row);

    if (row.J < best_j) {
      best_j = row.J;
      best = p;
    }
    // convergence: the softmax update is (close to) a fixed point
    if (target_gap < cfg.convergence_tol) {
      trace.converged = true;
      break;
    }
  }

  if (!trace.converged) p = best;
  return result;
}

EvalMetrics evaluate_ranking(const ModelParams& params, const TemporalKG& kg,
                             int u_from, int u_to, const FeatureConfig& features) {
  EvalMetrics out;
  const TemporalKG kg_feat = kg.restricted_to(u_from - 1);  // no test-time edges
  double mrr = 0, h1 = 0, h3 = 0, h10 = 0;
  for (const Quad& q : kg.quads()) {
    if (q.u < u_from || q.u > u_to) continue;
    const std::vector<int> known = kg.positive_tails(q.h, q.r, q.u);
    double target_score = 0;
    std::vector<std::pair<double, int>> scored;
    scored.reserve(kg.n_entities());
    for (int t = 0; t < kg.n_entities(); ++t) {
      const bool is_known =
          std::binary_search(known.begin(), known.end(), t) && t != q.t;
      if (is_known) continue;  // filtered ranking
      const double s = model_score(params, kg_feat, q.h, q.r, t, q.u, features);
      if (t == q.t) target_score = s;
      scored.push_back({s, t});
    }
    int rank = 1;
    for (const auto& [s, t] : scored) {
      if (t == q.t) continue;
      if (s > target_score || (s == target_score && t < q.t)) ++rank;
    }
    mrr += 1.0 / double(rank);
    h1 += rank <= 1;
    h3 += rank <= 3;
    h10 += rank <= 10;
    ++out.n_queries;
  }
  if (out.n_queries > 0) {
    mrr /= out.n_queries;
    h1 /= out.n_queries;
    h3 /= out.n_queries;
    h10 /= out.n_queries;
  }
  out.mrr = mrr;
  out.hits1 = h1;
  out.hits3 = h3;
  out.hits10 = h10;
  double harmonic = 0;
  for (int i = 1; i <= kg.n_entities(); ++i) harmonic += 1.0 / double(i);
  out.chance_mrr = kg.n_entities() > 0 ? harmonic / double(kg.n_entities()) : 0.0;
  return out;
}

}  // namespace mgtk
