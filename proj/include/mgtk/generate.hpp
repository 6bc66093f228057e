#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mgtk/geometry.hpp"
#include "mgtk/graphstore.hpp"

namespace mgtk {

struct RelationPlan {
  enum Structure { Tree, Grid, Ring };
  Manifold geometry = Manifold::Euclidean;
  Structure structure = Grid;
  int lo = 0, hi = 0;  // entity block [lo, hi)
};

struct GenerateConfig {
  int n_bins = 30;
  double bin_width = 1.0;
  int dim = 2;
  double tau = 2.0;            // planted geometric weight
  double adjacent_prob = 0.35;  // per-bin event probability of an adjacent pair
  double edge_length = 1.0;     // hyperbolic tree edge length; matching the
                                // unit graph-distance scale keeps distortion
                                // energies meaningful
  double grid_spacing = 1.0;
  std::uint64_t seed = 1;
  DomainBounds bounds;
  std::vector<RelationPlan> relations;
};

struct GeneratedData {
  TemporalKG kg;
  std::string truth_json;  // planted geometry, embeddings, coefficients
};

// plants per-relation geometric structure (tree / grid / ring), scores ordered
// pairs with f = alpha_r - tau * d^2 in the planted metric and simulates bin
// events from the piecewise-constant poisson process
GeneratedData generate_planted(const GenerateConfig& cfg);

}  // namespace mgtk
