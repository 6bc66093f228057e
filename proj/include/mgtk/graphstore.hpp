#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mgtk/common.hpp"

namespace mgtk {

struct Quad {
  int h = 0, r = 0, t = 0, u = 0;  // head, relation, tail, time bin (1-based)
  bool operator==(const Quad&) const = default;
  auto operator<=>(const Quad&) const = default;
};

struct FeatureConfig {
  int window = 2;        // w: bins [u-w, u] feed the structural feature
  int max_path_len = 3;  // L: count simple paths up to this length
  double S_max = 10.0;   // clipping bound
};

// immutable after construction; all queries are read-only
class TemporalKG {
 public:
  TemporalKG() = default;
  TemporalKG(int n_entities, int n_relations, std::vector<double> bin_widths);

  void add(const Quad& q);  // rejects duplicates and out-of-range indices

  int n_entities() const { return n_entities_; }
  int n_relations() const { return n_relations_; }
  int n_bins() const { return static_cast<int>(bin_widths_.size()); }
  double bin_width(int u) const;
  const std::vector<double>& bin_widths() const { return bin_widths_; }
  const std::vector<Quad>& quads() const { return quads_; }

  bool has(const Quad& q) const;
  // observed tails for context (h, r, u), sorted ascending
  std::vector<int> positive_tails(int h, int r, int u) const;
  // kg restricted to bins <= u_max (same entity/relation counts and widths)
  TemporalKG restricted_to(int u_max) const;

 private:
  int n_entities_ = 0;
  int n_relations_ = 0;
  std::vector<double> bin_widths_;
  std::vector<Quad> quads_;  // kept sorted
};

// undirected, relation-agnostic view of all edges with bin <= u
class GraphView {
 public:
  GraphView(const TemporalKG& kg, int u);
  // BFS hop count; nullopt when unreachable
  std::optional<int> distance(int h, int t) const;
  std::vector<int> distances_from(int h) const;  // -1 for unreachable
  int n_nodes() const { return static_cast<int>(adj_.size()); }
  const std::vector<int>& neighbors(int v) const { return adj_[v]; }

 private:
  std::vector<std::vector<int>> adj_;
};

std::optional<int> graph_distance(const TemporalKG& kg, int h, int t, int u);

struct PairProb {
  int h = 0, t = 0;
  double prob = 0.0;
};

// empirical distribution of (h,t) pairs of relation r seen up to bin u,
// counted with multiplicity; throws EmptySupportError when none exist
std::vector<PairProb> pair_distribution(const TemporalKG& kg, int r, int u);

// log(1 + #simple paths h..t of length <= L over edges in bins [u-w, u]),
// clipped to S_max
double structural_feature(const TemporalKG& kg, int h, int r, int t, int u,
                          const FeatureConfig& cfg);

// observed positive tails of (h,r,u) padded with distinct uniform negatives
std::vector<int> candidate_set(const TemporalKG& kg, int h, int r, int u,
                               int k, std::uint64_t seed);

// lines `head<TAB>relation<TAB>tail<TAB>bin`; entity/relation/bin counts are
// inferred unless a sidecar json fixes the bin widths
TemporalKG load_tsv(const std::string& path,
                    const std::string& bins_json_path = "");
void save_tsv(const TemporalKG& kg, const std::string& path);
void save_bins_json(const TemporalKG& kg, const std::string& path);

}  // namespace mgtk
