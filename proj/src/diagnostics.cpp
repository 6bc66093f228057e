#include "mgtk/diagnostics.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

namespace mgtk {

BoundConstants lipschitz_constants(const DomainBounds& bounds, double tau_max,
                                   double beta_max, const LipschitzOptions& opts) {
  bounds.validate();
  BoundConstants c;
  c.L_E = 4.0 * bounds.R_E;
  c.L_Ssph = 2.0 * M_PI / std::sqrt(bounds.delta_S * (2.0 - bounds.delta_S));

  // hyperbolic constant has no closed form here: sample gradient norms in the
  // R_H ball, biased toward the boundary where the conformal factor peaks
  auto rng = seeded_rng(opts.seed, 0xd1a6);
  ManifoldKind kind{Manifold::Hyperbolic, 2};
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double max_norm = 0.0;
  for (long i = 0; i < opts.samples; ++i) {
    Point x = random_point(kind, rng, bounds, 1.0);
    Point y = random_point(kind, rng, bounds, 1.0);
    // push a share of samples onto the boundary shell
    if (i % 4 == 0 && x.coords.norm() > 0)
      x.coords *= bounds.R_H / x.coords.norm();
    if (i % 4 == 1 && y.coords.norm() > 0) {
      y.coords *= bounds.R_H / y.coords.norm();
      x.coords = -y.coords;  // antipodal configuration maximizes the distance
    }
    if ((x.coords - y.coords).norm() < 1e-6) continue;
    const double g = grad_sq_distance(x, y, bounds).norm();
    max_norm = std::max(max_norm, g);
  }
  c.L_H_samples = opts.samples;
  c.L_H_raw_max = max_norm;
  c.L_H = max_norm * opts.safety_factor;

  c.L_d = std::max({c.L_E, c.L_H, c.L_Ssph});
  c.L_S = opts.feature_lipschitz;
  c.C = tau_max * c.L_d + beta_max * c.L_S;
  c.B = 2.0 * std::max({bounds.R_E, bounds.R_H / (1.0 - bounds.R_H),
                        M_PI / std::sqrt(bounds.delta_S * (2.0 - bounds.delta_S))});
  return c;
}

namespace {
int integer_cbrt_floor(long n) {
  int m = 1;
  while (double(m + 1) * double(m + 1) * double(m + 1) <= double(n)) ++m;
  return m;
}
}  // namespace

EffectiveSample effective_sample_size(long n) {
  if (n < 8) throw MgtkError("effective sample size needs N >= 8");
  EffectiveSample es;
  es.m = integer_cbrt_floor(n);
  es.g = es.m;
  const double raw = double(n) / (2.0 * double(es.m + es.g));
  es.n_eff = long(std::ceil(raw));
  const double root = std::cbrt(double(n));
  es.lower_bound = root * root / 4.0;
  return es;
}

double cloglog_loss_lipschitz(double delta_min, double delta_max, double f_min,
                              double f_max) {
  if (!(delta_min > 0) || delta_max < delta_min || f_max < f_min)
    throw MgtkError("invalid constant ranges");
  const double denom = -std::expm1(-delta_min * std::exp(f_min));
  return delta_max * std::exp(f_max) * std::max(1.0, 1.0 / denom);
}

double generalization_bound(const BoundConstants& c, double delta) {
  if (!(delta > 0) || !(delta < 1)) throw MgtkError("confidence must be in (0,1)");
  if (c.N_eff < 1) throw MgtkError("bound needs N_eff >= 1");
  const double n_eff = double(c.N_eff);
  return c.L_ell * c.C * c.B / std::sqrt(n_eff) +
         std::sqrt(std::log(2.0 / delta) / (2.0 * n_eff));
}

double covering_bound(double a, double b, double tau_max, double s_max,
                      double d_max_sq, double eps) {
  if (!(eps > 0)) throw MgtkError("covering radius must be positive");
  if (a < 0 || b < 0 || tau_max < 0 || s_max < 0 || d_max_sq < 0)
    throw MgtkError("bounds must be nonnegative");
  const double cell = eps / 3.0;
  auto cells = [cell](double range) {
    return std::max(1.0, std::ceil(range / cell));
  };
  return std::log(cells(2.0 * a)) + std::log(cells(2.0 * b * s_max)) +
         std::log(cells(tau_max * d_max_sq));
}

namespace {
std::vector<double> autocorr(const std::vector<double>& x, int max_lag) {
  const int n = static_cast<int>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var = 0;
  for (double v : x) var += (v - mean) * (v - mean);
  std::vector<double> rho(max_lag + 1, 0.0);
  if (var <= 0) return rho;
  for (int k = 0; k <= max_lag; ++k) {
    double s = 0;
    for (int i = 0; i + k < n; ++i) s += (x[i] - mean) * (x[i + k] - mean);
    rho[k] = s / var;
  }
  return rho;
}
}  // namespace

MixingReport mixing_estimate(const std::vector<double>& series,
                             const std::vector<int>& block_sizes, int n_boot,
                             std::uint64_t seed) {
  const int n = static_cast<int>(series.size());
  if (n < 64) throw MgtkError("residual series too short (need >= 64)");
  MixingReport rep;

  const double mean = std::accumulate(series.begin(), series.end(), 0.0) / n;
  double var = 0;
  for (double v : series) var += (v - mean) * (v - mean);
  var /= n;
  if (var < 1e-14) {
    rep.verdict = MixingVerdict::Degenerate;
    return rep;
  }

  // moving-block bootstrap variance of the mean, per block size
  auto rng = seeded_rng(seed, 0xb0075);
  for (int b : block_sizes.empty() ? std::vector<int>{1, 2, 4, 8, 16}
                                   : block_sizes) {
    if (b < 1 || b > n / 4) continue;
    std::uniform_int_distribution<int> start(0, n - b);
    const int blocks_per_rep = n / b;
    double s1 = 0, s2 = 0;
    for (int it = 0; it < std::max(n_boot, 16); ++it) {
      double acc = 0;
      for (int j = 0; j < blocks_per_rep; ++j) {
        const int s = start(rng);
        for (int t = 0; t < b; ++t) acc += series[s + t];
      }
      const double m = acc / double(blocks_per_rep * b);
      s1 += m;
      s2 += m * m;
    }
    const int reps = std::max(n_boot, 16);
    const double vm = s2 / reps - (s1 / reps) * (s1 / reps);
    rep.block_sizes.push_back(b);
    // ratio ~ 1 for independent data, grows with b under long memory
    rep.variance_ratio.push_back(vm * double(blocks_per_rep * b) / var);
  }

  const int max_lag = std::min(n / 4, 64);
  const std::vector<double> rho = autocorr(series, max_lag);
  const double band = 4.0 / std::sqrt(double(n));
  int last_significant = 0;
  for (int k = 1; k <= max_lag; ++k) {
    rep.lags.push_back(k);
    rep.beta_hat.push_back(std::abs(rho[k]));
    if (std::abs(rho[k]) > band) {
      ++rep.significant_lags;
      last_significant = k;
    }
  }

  if (rep.significant_lags < 2) {
    // no detectable dependence: decay is at least as fast as the noise floor
    rep.decay_exponent = std::numeric_limits<double>::infinity();
    rep.verdict = MixingVerdict::Summable;
    return rep;
  }

  // fit log |rho(k)| ~ -p log k over the significant prefix
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int cnt = 0;
  for (int k = 1; k <= last_significant; ++k) {
    if (rep.beta_hat[k - 1] <= band / 2) continue;
    const double lx = std::log(double(k));
    const double ly = std::log(rep.beta_hat[k - 1]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++cnt;
  }
  if (cnt < 2) {
    rep.decay_exponent = std::numeric_limits<double>::infinity();
    rep.verdict = MixingVerdict::Summable;
    return rep;
  }
  const double slope = (sxy - sx * sy / cnt) / (sxx - sx * sx / cnt);
  rep.decay_exponent = -slope;
  // sum beta(k)^{1/3} converges iff the decay exponent p > 3
  rep.verdict = rep.decay_exponent > 3.0 ? MixingVerdict::Summable
                                         : MixingVerdict::NotSummable;
  return rep;
}

InstabilityFlags monitor(const TrainTrace& trace, const ModelParams& params,
                         const MonitorThresholds& thr) {
  if (trace.rows.empty()) throw MgtkError("empty training trace");
  InstabilityFlags flags;
  std::ostringstream detail;

  // oscillation means the weights reverse direction with magnitude, not the
  // monotone sharpening that annealing produces; a negative grace period means
  // "the last third of the run"
  const size_t grace =
      thr.grace_period >= 0
          ? size_t(std::max(thr.grace_period, 1))
          : std::max<size_t>(10, trace.rows.size() - trace.rows.size() / 3);
  if (trace.rows.size() >= grace + 2 && trace.rows[grace].weights.size() > 0) {
    const int rr = int(trace.rows[grace].weights.rows());
    const int mm = int(trace.rows[grace].weights.cols());
    for (int r = 0; r < rr && !flags.weight_oscillation; ++r)
      for (int m = 0; m < mm && !flags.weight_oscillation; ++m)
        for (size_t i = grace + 1; i + 1 < trace.rows.size(); ++i) {
          const double d1 = trace.rows[i].weights(r, m) -
                            trace.rows[i - 1].weights(r, m);
          const double d2 = trace.rows[i + 1].weights(r, m) -
                            trace.rows[i].weights(r, m);
          if (std::abs(d1) > thr.weight_change && std::abs(d2) > thr.weight_change &&
              d1 * d2 < 0) {
            flags.weight_oscillation = true;
            detail << "w_r" << r << "_m" << m << " reversed by " << d1 << " then "
                   << d2 << " at iteration " << trace.rows[i].iteration << "; ";
            break;
          }
        }
  }

  // benign upward drift of down-weighted components is endemic; only sustained
  // growth of an already-bad distortion energy counts as instability
  const size_t n = trace.rows.size();
  if (n >= 2) {
    const int rr = int(trace.rows[0].energies.rows());
    const int mm = int(trace.rows[0].energies.cols());
    for (int r = 0; r < rr && !flags.energy_growth; ++r)
      for (int m = 0; m < mm && !flags.energy_growth; ++m) {
        int run = 0;
        for (size_t i = 1; i < n; ++i) {
          const bool active = trace.rows[i].weights.size() == 0 ||
                              trace.rows[i].weights(r, m) >= thr.weight_floor;
          const bool grew =
              active &&
              trace.rows[i].energies(r, m) > trace.rows[i - 1].energies(r, m) &&
              trace.rows[i].energies(r, m) > thr.energy_level;
          run = grew ? run + 1 : 0;
          if (run > thr.energy_growth_run) {
            flags.energy_growth = true;
            detail << "E_r" << r << "_m" << m << " grew " << run
                   << " consecutive iterations to "
                   << trace.rows[i].energies(r, m) << "; ";
            break;
          }
        }
      }
  }

  // norm explosion: a mass of embeddings slams into the domain bound, either
  // in single excursions or for a sustained run of iterations
  {
    int slots = 0;
    for (int m = 0; m < params.n_metrics(); ++m) {
      if (params.metrics[m].tag == Manifold::Spherical) continue;
      for (const auto& copy : params.embeddings[m]) slots += int(copy.size());
    }
    int excursions = 0, run = 0;
    for (const TraceRow& row : trace.rows) {
      const bool mass = slots > 0 &&
                        double(row.pinned_embeddings) >= thr.norm_fraction * slots;
      excursions += mass;
      run = mass ? run + 1 : 0;
      if (excursions >= thr.norm_excursions || run >= thr.norm_explosion_run) {
        flags.norm_explosion = true;
        detail << row.pinned_embeddings << " of " << slots
               << " embeddings at their norm bound at iteration " << row.iteration
               << "; ";
        break;
      }
    }
  }

  if (trace.rank_deficiency_failures > 0) {
    flags.rank_deficiency = true;
    detail << trace.rank_deficiency_failures << " contexts failed repair; ";
  }
  flags.detail = detail.str();
  return flags;
}

std::vector<Point> sarkar_tree_layout(const std::vector<std::vector<int>>& adj,
                                      int root, double edge_length,
                                      double max_radius) {
  const int n = static_cast<int>(adj.size());
  std::vector<Point> pos(n);
  ManifoldKind kind{Manifold::Hyperbolic, 2};
  for (Point& p : pos) {
    p.kind = kind;
    p.coords = Vec::Zero(2);
  }
  const double rho = std::tanh(edge_length / 2.0);  // euclidean radius of step

  // place children by translating the parent to the origin, spreading the
  // neighbor directions uniformly
  struct Item {
    int node, parent;
  };
  std::vector<Item> stack{{root, -1}};
  while (!stack.empty()) {
    const auto [v, parent] = stack.back();
    stack.pop_back();
    const Vec center = pos[v].coords;
    // direction of the parent as seen from v moved to the origin
    double base_angle = 0.0;
    int degree = static_cast<int>(adj[v].size());
    if (parent >= 0) {
      const Vec q = mobius_add(-center, pos[parent].coords);
      base_angle = std::atan2(q(1), q(0));
    }
    const int slots = parent >= 0 ? degree : std::max(degree, 1);
    int slot = 1;
    for (int w : adj[v]) {
      if (w == parent) continue;
      const double angle =
          base_angle + 2.0 * M_PI * double(slot) / double(std::max(slots, 1));
      Vec local(2);
      local << rho * std::cos(angle), rho * std::sin(angle);
      Vec placed = mobius_add(center, local);
      const double nrm = placed.norm();
      if (nrm > max_radius) placed *= max_radius / nrm;
      pos[w].coords = placed;
      stack.push_back({w, v});
      ++slot;
    }
  }
  return pos;
}

namespace {
struct Tree {
  std::vector<std::vector<int>> adj;
  std::vector<int> depth;
};

Tree complete_binary_tree(int depth) {
  const int n = (1 << (depth + 1)) - 1;
  Tree t;
  t.adj.resize(n);
  t.depth.assign(n, 0);
  for (int v = 1; v < n; ++v) {
    const int parent = (v - 1) / 2;
    t.adj[parent].push_back(v);
    t.adj[v].push_back(parent);
    t.depth[v] = t.depth[parent] + 1;
  }
  return t;
}

std::vector<std::vector<int>> tree_distances(const Tree& t) {
  const int n = static_cast<int>(t.adj.size());
  std::vector<std::vector<int>> d(n, std::vector<int>(n, -1));
  for (int s = 0; s < n; ++s) {
    std::vector<int>& row = d[s];
    std::vector<int> queue{s};
    row[s] = 0;
    for (size_t qi = 0; qi < queue.size(); ++qi) {
      const int v = queue[qi];
      for (int w : t.adj[v])
        if (row[w] < 0) {
          row[w] = row[v] + 1;
          queue.push_back(w);
        }
    }
  }
  return d;
}

struct Distortion {
  double worst = 1.0;
  double avg = 1.0;
};

// multiplicative distortion: (max ratio / min ratio) over all pairs, with
// ratio = embedded distance / tree distance; avg uses the mean ratio
Distortion pair_distortion(const std::vector<double>& embedded,
                           const std::vector<double>& tree) {
  double rmin = std::numeric_limits<double>::infinity(), rmax = 0, rsum = 0;
  for (size_t i = 0; i < embedded.size(); ++i) {
    const double r = embedded[i] / tree[i];
    rmin = std::min(rmin, r);
    rmax = std::max(rmax, r);
    rsum += r;
  }
  Distortion d;
  if (rmin <= 0 || !std::isfinite(rmin)) {
    d.worst = std::numeric_limits<double>::infinity();
    d.avg = std::numeric_limits<double>::infinity();
    return d;
  }
  d.worst = rmax / rmin;
  d.avg = (rsum / double(embedded.size())) / rmin;
  return d;
}

// classical mds on the tree metric followed by stress-minimizing descent
std::vector<Vec> euclidean_stress_embedding(const std::vector<std::vector<int>>& dist,
                                            int dim, std::uint64_t seed,
                                            int iters) {
  const int n = static_cast<int>(dist.size());
  Mat d2(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) d2(i, j) = double(dist[i][j]) * double(dist[i][j]);
  Mat j_center = Mat::Identity(n, n) - Mat::Constant(n, n, 1.0 / n);
  Mat b = -0.5 * j_center * d2 * j_center;
  Eigen::SelfAdjointEigenSolver<Mat> eig(b);
  std::vector<Vec> x(n, Vec::Zero(dim));
  for (int k = 0; k < dim; ++k) {
    const int idx = n - 1 - k;  // eigenvalues ascend
    const double ev = std::max(eig.eigenvalues()(idx), 0.0);
    for (int i = 0; i < n; ++i)
      x[i](k) = eig.eigenvectors()(i, idx) * std::sqrt(ev);
  }
  auto rng = seeded_rng(seed, 0xeadd);
  std::normal_distribution<double> gauss(0.0, 1e-4);
  for (Vec& v : x)
    for (int k = 0; k < dim; ++k) v(k) += gauss(rng);  // break exact ties

  // gradient descent on sum (||xi-xj|| - dij)^2 with adaptive step
  double step = 0.05;
  std::vector<Vec> grad(n, Vec::Zero(dim));
  auto stress = [&](const std::vector<Vec>& pts) {
    double s = 0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        const double gap = (pts[i] - pts[j]).norm() - double(dist[i][j]);
        s += gap * gap;
      }
    return s;
  };
  double cur = stress(x);
  for (int it = 0; it < iters; ++it) {
    for (Vec& g : grad) g.setZero();
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        const Vec diff = x[i] - x[j];
        const double nd = std::max(diff.norm(), 1e-12);
        const Vec g = 2.0 * (nd - double(dist[i][j])) / nd * diff;
        grad[i] += g;
        grad[j] -= g;
      }
    std::vector<Vec> trial(n);
    for (int i = 0; i < n; ++i) trial[i] = x[i] - step * grad[i];
    const double ts = stress(trial);
    if (ts < cur) {
      x = std::move(trial);
      cur = ts;
      step *= 1.05;
    } else {
      step *= 0.5;
      if (step < 1e-9) break;
    }
  }
  return x;
}
}  // namespace

TreeBenchResult tree_distortion_bench(int depth, int dim, std::uint64_t seed) {
  if (depth < 1) throw MgtkError("tree depth must be >= 1");
  if (dim < 1) throw MgtkError("dimension must be >= 1");
  const Tree tree = complete_binary_tree(depth);
  const auto dist = tree_distances(tree);
  const int n = static_cast<int>(tree.adj.size());

  TreeBenchResult res;
  res.depth = depth;
  res.dim = dim;

  // constructive 2d hyperbolic layout; longer edges reduce bending error
  const double edge_length = 2.5;
  const auto hyp = sarkar_tree_layout(tree.adj, 0, edge_length, 1.0 - 1e-12);
  std::vector<double> hd, td;
  hd.reserve(size_t(n) * (n - 1) / 2);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      hd.push_back(geodesic_distance(hyp[i], hyp[j]));
      td.push_back(double(dist[i][j]));
    }
  const Distortion dh = pair_distortion(hd, td);
  res.hyperbolic_worst = dh.worst;
  res.hyperbolic_avg = dh.avg;

  const int iters = 400;
  const auto euc = euclidean_stress_embedding(dist, dim, seed, iters);
  std::vector<double> ed;
  ed.reserve(hd.size());
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) ed.push_back((euc[i] - euc[j]).norm());
  const Distortion de = pair_distortion(ed, td);
  res.euclidean_worst = de.worst;
  res.euclidean_avg = de.avg;
  return res;
}

std::vector<double> simulate_white_noise(int n, std::uint64_t seed) {
  auto rng = seeded_rng(seed, 0x3170);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> x(n);
  for (double& v : x) v = gauss(rng);
  return x;
}

std::vector<double> simulate_fgn(int n, double hurst, std::uint64_t seed) {
  if (hurst <= 0 || hurst >= 1) throw MgtkError("hurst exponent must be in (0,1)");
  // hosking's exact recursive method
  auto gamma = [hurst](int k) {
    const double a = std::pow(std::abs(k + 1), 2 * hurst);
    const double b = std::pow(std::abs(k), 2 * hurst);
    const double c = std::pow(std::abs(k - 1), 2 * hurst);
    return 0.5 * (a - 2 * b + c);
  };
  auto rng = seeded_rng(seed, 0xf97);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> x(n), phi(n, 0.0), prev(n, 0.0);
  double v = 1.0;
  x[0] = gauss(rng);
  for (int k = 1; k < n; ++k) {
    double acc = gamma(k);
    for (int j = 1; j < k; ++j) acc -= prev[j - 1] * gamma(k - j);
    const double pk = acc / v;
    phi[k - 1] = pk;
    for (int j = 0; j + 1 < k; ++j) phi[j] = prev[j] - pk * prev[k - 2 - j];
    v *= (1.0 - pk * pk);
    double mean = 0;
    for (int j = 0; j < k; ++j) mean += phi[j] * x[k - 1 - j];
    x[k] = mean + std::sqrt(std::max(v, 1e-12)) * gauss(rng);
    std::copy(phi.begin(), phi.begin() + k, prev.begin());
  }
  return x;
}

std::string diagnostics_report_json(const BoundConstants& c,
                                    const InstabilityFlags& flags,
                                    const MixingReport* mixing,
                                    double generalization, double covering) {
  nlohmann::json j;
  j["constants"] = {{"L_E", c.L_E},
                    {"L_H", c.L_H},
                    {"L_H_raw_max", c.L_H_raw_max},
                    {"L_H_samples", c.L_H_samples},
                    {"L_sph", c.L_Ssph},
                    {"L_d", c.L_d},
                    {"L_S", c.L_S},
                    {"C", c.C},
                    {"B", c.B},
                    {"F_min", c.F_min},
                    {"F_max", c.F_max},
                    {"delta_min", c.delta_min},
                    {"delta_max", c.delta_max},
                    {"L_ell", c.L_ell},
                    {"N", c.N},
                    {"N_eff", c.N_eff},
                    {"m_block", c.m_block},
                    {"g_gap", c.g_gap}};
  j["generalization_bound"] = generalization;
  j["covering_bound"] = covering;
  j["instability"] = {{"weight_oscillation", flags.weight_oscillation},
                      {"energy_growth", flags.energy_growth},
                      {"norm_explosion", flags.norm_explosion},
                      {"rank_deficiency", flags.rank_deficiency},
                      {"detail", flags.detail}};
  if (mixing) {
    const char* verdict = mixing->verdict == MixingVerdict::Summable
                              ? "summable"
                              : (mixing->verdict == MixingVerdict::NotSummable
                                     ? "not_summable"
                                     : "degenerate");
    j["mixing"] = {{"verdict", verdict},
                   {"decay_exponent", std::isfinite(mixing->decay_exponent)
                                          ? mixing->decay_exponent
                                          : 1e9},
                   {"significant_lags", mixing->significant_lags},
                   {"block_sizes", mixing->block_sizes},
                   {"variance_ratio", mixing->variance_ratio}};
  } else {
    j["mixing"] = nullptr;
  }
  return j.dump(2);
}

}  // namespace mgtk
