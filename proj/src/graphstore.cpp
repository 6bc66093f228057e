#include "mgtk/graphstore.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

namespace mgtk {

TemporalKG::TemporalKG(int n_entities, int n_relations, std::vector<double> bin_widths)
    : n_entities_(n_entities), n_relations_(n_relations), bin_widths_(std::move(bin_widths)) {
  if (n_entities_ < 0 || n_relations_ < 0) throw MgtkError("negative counts");
  for (double w : bin_widths_)
    if (!(w > 0) || !std::isfinite(w)) throw MgtkError("bin widths must be positive");
}

void TemporalKG::add(const Quad& q) {
  if (q.h < 0 || q.h >= n_entities_ || q.t < 0 || q.t >= n_entities_)
    throw MgtkError("entity index out of range");
  if (q.r < 0 || q.r >= n_relations_) throw MgtkError("relation index out of range");
  if (q.u < 1 || q.u > n_bins()) throw MgtkError("bin index out of range");
  auto it = std::lower_bound(quads_.begin(), quads_.end(), q);
  if (it != quads_.end() && *it == q) throw MgtkError("duplicate quadruple");
  quads_.insert(it, q);
}

double TemporalKG::bin_width(int u) const {
  if (u < 1 || u > n_bins()) throw MgtkError("bin index out of range");
  return bin_widths_[u - 1];
}

bool TemporalKG::has(const Quad& q) const {
  return std::binary_search(quads_.begin(), quads_.end(), q);
}

std::vector<int> TemporalKG::positive_tails(int h, int r, int u) const {
  std::vector<int> out;
  Quad lo{h, r, 0, 0};
  auto it = std::lower_bound(quads_.begin(), quads_.end(), lo);
  for (; it != quads_.end() && it->h == h && it->r == r; ++it)
    if (it->u == u) out.push_back(it->t);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

TemporalKG TemporalKG::restricted_to(int u_max) const {
  TemporalKG out(n_entities_, n_relations_, bin_widths_);
  for (const Quad& q : quads_)
    if (q.u <= u_max) out.quads_.push_back(q);
  return out;
}

GraphView::GraphView(const TemporalKG& kg, int u) : adj_(kg.n_entities()) {
  for (const Quad& q : kg.quads()) {
    if (q.u > u) continue;
    if (q.h == q.t) continue;
    adj_[q.h].push_back(q.t);
    adj_[q.t].push_back(q.h);
  }
  for (auto& nb : adj_) {
    std::sort(nb.begin(), nb.end());
    nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
  }
}

std::vector<int> GraphView::distances_from(int h) const {
  std::vector<int> dist(adj_.size(), -1);
  std::deque<int> queue;
  dist[h] = 0;
  queue.push_back(h);
  while (!queue.empty()) {
    const int v = queue.front();
    queue.pop_front();
    for (int w : adj_[v])
      if (dist[w] < 0) {
        dist[w] = dist[v] + 1;
        queue.push_back(w);
      }
  }
  return dist;
}

std::optional<int> GraphView::distance(int h, int t) const {
  if (h == t) return 0;
  const auto dist = distances_from(h);
  if (dist[t] < 0) return std::nullopt;
  return dist[t];
}

std::optional<int> graph_distance(const TemporalKG& kg, int h, int t, int u) {
  if (h < 0 || h >= kg.n_entities() || t < 0 || t >= kg.n_entities())
    throw MgtkError("entity index out of range");
  return GraphView(kg, u).distance(h, t);
}

std::vector<PairProb> pair_distribution(const TemporalKG& kg, int r, int u) {
  if (r < 0 || r >= kg.n_relations()) throw MgtkError("relation index out of range");
  std::map<std::pair<int, int>, int> counts;
  int total = 0;
  for (const Quad& q : kg.quads()) {
    if (q.r != r || q.u > u) continue;
    ++counts[{q.h, q.t}];
    ++total;
  }
  if (total == 0)
    throw EmptySupportError("relation has no events up to the requested bin");
  std::vector<PairProb> out;
  out.reserve(counts.size());
  for (const auto& [pair, c] : counts)
    out.push_back({pair.first, pair.second, double(c) / double(total)});
  return out;
}

namespace {
// simple paths (no repeated vertex) from v to target with <= budget edges
long count_paths(const std::vector<std::vector<int>>& adj, std::vector<char>& used,
                 int v, int target, int budget) {
  if (budget == 0) return 0;
  long total = 0;
  for (int w : adj[v]) {
    if (w == target) {
      ++total;
      continue;
    }
    if (used[w]) continue;
    used[w] = 1;
    total += count_paths(adj, used, w, target, budget - 1);
    used[w] = 0;
  }
  return total;
}
}  // namespace

double structural_feature(const TemporalKG& kg, int h, int r, int t, int u,
                          const FeatureConfig& cfg) {
  if (h < 0 || h >= kg.n_entities() || t < 0 || t >= kg.n_entities())
    throw MgtkError("entity index out of range");
  if (r < 0 || r >= kg.n_relations()) throw MgtkError("relation index out of range");
  if (cfg.window < 0 || cfg.max_path_len < 1 || cfg.S_max <= 0)
    throw MgtkError("invalid feature config");
  if (h == t) return 0.0;
  const int lo = std::max(1, u - cfg.window);
  std::vector<std::vector<int>> adj(kg.n_entities());
  for (const Quad& q : kg.quads()) {
    if (q.u < lo || q.u > u || q.h == q.t) continue;
    adj[q.h].push_back(q.t);
    adj[q.t].push_back(q.h);
  }
  for (auto& nb : adj) {
    std::sort(nb.begin(), nb.end());
    nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
  }
  std::vector<char> used(kg.n_entities(), 0);
  used[h] = 1;
  const long paths = count_paths(adj, used, h, t, cfg.max_path_len);
  return std::min(std::log1p(double(paths)), cfg.S_max);
}

std::vector<int> candidate_set(const TemporalKG& kg, int h, int r, int u,
                               int k, std::uint64_t seed) {
  if (k < 2) throw MgtkError("candidate set needs K >= 2");
  if (k > kg.n_entities()) throw MgtkError("K exceeds entity count");
  std::vector<int> cands = kg.positive_tails(h, r, u);
  if (static_cast<int>(cands.size()) > k) cands.resize(k);
  std::vector<char> taken(kg.n_entities(), 0);
  for (int t : cands) taken[t] = 1;
  auto rng = seeded_rng(seed, (std::uint64_t(h) << 40) ^ (std::uint64_t(r) << 20) ^ std::uint64_t(u));
  std::uniform_int_distribution<int> pick(0, kg.n_entities() - 1);
  while (static_cast<int>(cands.size()) < k) {
    const int t = pick(rng);
    if (taken[t]) continue;
    taken[t] = 1;
    cands.push_back(t);
  }
  return cands;
}

TemporalKG load_tsv(const std::string& path, const std::string& bins_json_path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<Quad> quads;
  std::string line;
  int lineno = 0;
  int max_e = -1, max_r = -1, max_u = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    Quad q;
    if (!(ss >> q.h >> q.r >> q.t >> q.u))
      throw IoError(path + ":" + std::to_string(lineno) + ": malformed line");
    if (q.h < 0 || q.r < 0 || q.t < 0 || q.u < 1)
      throw IoError(path + ":" + std::to_string(lineno) + ": index out of range");
    max_e = std::max({max_e, q.h, q.t});
    max_r = std::max(max_r, q.r);
    max_u = std::max(max_u, q.u);
    quads.push_back(q);
  }

  std::vector<double> widths;
  if (!bins_json_path.empty()) {
    std::ifstream bj(bins_json_path);
    if (!bj) throw IoError("cannot open " + bins_json_path);
    nlohmann::json j;
    bj >> j;
    std::map<int, double> by_u;
    for (const auto& item : j) {
      const int u = item.at("u").get<int>();
      const double delta = item.at("delta").get<double>();
      if (u < 1 || !(delta > 0)) throw IoError("bad bin sidecar entry");
      by_u[u] = delta;
      max_u = std::max(max_u, u);
    }
    widths.assign(max_u, 1.0);
    for (const auto& [u, delta] : by_u) widths[u - 1] = delta;
  } else {
    widths.assign(std::max(max_u, 0), 1.0);
  }

  TemporalKG kg(max_e + 1, max_r + 1, widths);
  for (const Quad& q : quads) {
    if (kg.has(q)) continue;  // tolerate duplicates in files
    kg.add(q);
  }
  return kg;
}

void save_tsv(const TemporalKG& kg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  for (const Quad& q : kg.quads())
    out << q.h << '\t' << q.r << '\t' << q.t << '\t' << q.u << '\n';
  if (!out) throw IoError("write failed: " + path);
}

void save_bins_json(const TemporalKG& kg, const std::string& path) {
  nlohmann::json j = nlohmann::json::array();
  for (int u = 1; u <= kg.n_bins(); ++u)
    j.push_back({{"u", u}, {"delta", kg.bin_width(u)}});
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << j.dump(2) << '\n';
}

}  // namespace mgtk
