#include "mgtk/generate.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "mgtk/diagnostics.hpp"
#include "mgtk/temporal.hpp"

namespace mgtk {

namespace {

struct Layout {
  std::vector<Point> points;                 // per block entity
  std::vector<std::pair<int, int>> edges;    // structural adjacency (local ids)
  double adjacent_sq_dist = 1.0;
};

Layout tree_layout(int n, double edge_length, std::mt19937_64& rng) {
  Layout lay;
  std::vector<std::vector<int>> adj(n);
  std::vector<int> open;  // nodes with capacity for more children
  open.push_back(0);
  for (int v = 1; v < n; ++v) {
    const int idx = std::uniform_int_distribution<int>(0, int(open.size()) - 1)(rng);
    const int parent = open[idx];
    adj[parent].push_back(v);
    adj[v].push_back(parent);
    lay.edges.push_back({parent, v});
    if (int(adj[parent].size()) >= 3) open.erase(open.begin() + idx);
    open.push_back(v);
  }
  lay.points = sarkar_tree_layout(adj, 0, edge_length, 1.0 - 1e-9);
  lay.adjacent_sq_dist = edge_length * edge_length;
  return lay;
}

Layout grid_layout(int n, double spacing, double r_e) {
  Layout lay;
  const int side = int(std::ceil(std::sqrt(double(n))));
  double s = spacing;
  const double corner = s * std::sqrt(2.0) * double(side - 1) / 2.0;
  if (corner > 0.85 * r_e) s *= 0.85 * r_e / corner;
  ManifoldKind kind{Manifold::Euclidean, 2};
  for (int i = 0; i < n; ++i) {
    const int gx = i % side, gy = i / side;
    Point p;
    p.kind = kind;
    p.coords = Vec(2);
    p.coords << s * (gx - (side - 1) / 2.0), s * (gy - (side - 1) / 2.0);
    lay.points.push_back(p);
    if (gx > 0) lay.edges.push_back({i - 1, i});
    if (gy > 0) lay.edges.push_back({i - side, i});
  }
  lay.adjacent_sq_dist = s * s;
  return lay;
}

Layout ring_layout(int n) {
  Layout lay;
  ManifoldKind kind{Manifold::Spherical, 2};
  for (int i = 0; i < n; ++i) {
    const double a = 2.0 * M_PI * double(i) / double(n);
    Point p;
    p.kind = kind;
    p.coords = Vec(3);
    p.coords << std::cos(a), std::sin(a), 0.0;
    lay.points.push_back(p);
    lay.edges.push_back({i, (i + 1) % n});
  }
  const double step = 2.0 * M_PI / double(n);
  lay.adjacent_sq_dist = step * step;
  return lay;
}

}  // namespace

GeneratedData generate_planted(const GenerateConfig& cfg) {
  if (cfg.n_bins < 1 || !(cfg.bin_width > 0)) throw MgtkError("invalid bin schedule");
  if (!(cfg.adjacent_prob > 0) || !(cfg.adjacent_prob < 1))
    throw MgtkError("adjacent_prob must lie in (0,1)");
  int n_entities = 0;
  for (const auto& plan : cfg.relations) {
    if (plan.lo < 0 || plan.hi <= plan.lo) throw MgtkError("bad entity block");
    n_entities = std::max(n_entities, plan.hi);
  }

  TemporalKG kg(n_entities, int(cfg.relations.size()),
                std::vector<double>(cfg.n_bins, cfg.bin_width));
  auto rng = seeded_rng(cfg.seed, 0x9e4e);
  nlohmann::json truth;
  truth["seed"] = cfg.seed;
  truth["tau"] = cfg.tau;
  truth["n_bins"] = cfg.n_bins;
  truth["bin_width"] = cfg.bin_width;
  truth["relations"] = nlohmann::json::array();

  const BinSchedule schedule{std::vector<double>(cfg.n_bins, cfg.bin_width)};
  for (size_t r = 0; r < cfg.relations.size(); ++r) {
    const RelationPlan& plan = cfg.relations[r];
    const int n = plan.hi - plan.lo;
    Layout lay;
    switch (plan.structure) {
      case RelationPlan::Tree:
        lay = tree_layout(n, cfg.edge_length, rng);
        break;
      case RelationPlan::Grid:
        lay = grid_layout(n, cfg.grid_spacing, cfg.bounds.R_E);
        break;
      case RelationPlan::Ring:
        lay = ring_layout(n);
        break;
    }
    // calibrate alpha so an adjacent pair fires with cfg.adjacent_prob per bin
    const double alpha =
        std::log(-std::log1p(-cfg.adjacent_prob) / cfg.bin_width) +
        cfg.tau * lay.adjacent_sq_dist;

    nlohmann::json jr;
    jr["geometry"] = manifold_name(plan.geometry);
    jr["structure"] = plan.structure == RelationPlan::Tree   ? "tree"
                      : plan.structure == RelationPlan::Grid ? "grid"
                                                             : "ring";
    jr["entities"] = {plan.lo, plan.hi};
    jr["alpha"] = alpha;
    jr["adjacent_sq_dist"] = lay.adjacent_sq_dist;
    jr["embeddings"] = nlohmann::json::array();
    for (const Point& p : lay.points) {
      nlohmann::json coords = nlohmann::json::array();
      for (int i = 0; i < p.coords.size(); ++i) coords.push_back(p.coords(i));
      jr["embeddings"].push_back(coords);
    }

    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) {
        if (a == b) continue;
        const double d2 = squared_distance(lay.points[a], lay.points[b]);
        const double f = alpha - cfg.tau * d2;
        if (cloglog_prob(f, cfg.bin_width) < 1e-8) continue;  // negligible mass
        const std::uint64_t pair_seed =
            cfg.seed ^ (std::uint64_t(r + 1) << 52) ^ (std::uint64_t(a) << 26) ^
            std::uint64_t(b);
        const auto sim = simulate_bin_events(std::vector<double>(cfg.n_bins, f),
                                             schedule, pair_seed);
        for (int u = 0; u < cfg.n_bins; ++u)
          if (sim.indicators[u])
            kg.add({plan.lo + a, int(r), plan.lo + b, u + 1});
      }
    truth["relations"].push_back(jr);
  }
  return {std::move(kg), truth.dump(2)};
}

}  // namespace mgtk
