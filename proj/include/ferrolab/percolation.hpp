#ifndef FERROLAB_PERCOLATION_HPP
#define FERROLAB_PERCOLATION_HPP

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "ferrolab/config_space.hpp"
#include "ferrolab/interaction.hpp"
#include "ferrolab/rng.hpp"
#include "ferrolab/sampler.hpp"

namespace ferrolab {

struct GeometricGraph {
  std::vector<Position> vertices;
  std::vector<std::size_t> point_index;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;  // i < j, sorted
  double R = 0.0;

  std::size_t vertex_count() const { return vertices.size(); }
  std::size_t edge_count() const { return edges.size(); }
};

// Edges between all pairs at distance <= R.
GeometricGraph build_rgg(const MarkedConfiguration& config, double R);

// Keeps each edge independently with probability q.
GeometricGraph thin_edges(const GeometricGraph& g, double q, Rng& rng);
// Keeps edge e iff uniforms[e] < q; one uniform per edge couples all q.
GeometricGraph thin_edges_coupled(const GeometricGraph& g, double q, std::span<const double> uniforms);

class UnionFind {
 public:
  explicit UnionFind(std::size_t n);
  std::size_t find(std::size_t x);
  bool unite(std::size_t a, std::size_t b);
  std::size_t component_size(std::size_t x) { return size_[find(x)]; }
  std::size_t components() const { return components_; }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> size_;
  std::size_t components_;
};

struct ClusterLabels {
  std::vector<std::size_t> label;  // dense ids 0..count-1 in order of first vertex
  std::vector<std::size_t> sizes;
  std::vector<bool> touches_boundary;  // per vertex: its cluster contains a flagged vertex
  std::size_t count() const { return sizes.size(); }
};

// boundary_flags may be empty (no vertex flagged).
ClusterLabels connected_components(const GeometricGraph& g, const std::vector<bool>& boundary_flags = {});

// Per vertex: lies in an outer-layer cell of the region.
std::vector<bool> outer_layer_flags(const GeometricGraph& g, const Region& region, double cell_side);

struct BlockField {
  std::map<CellKey, int> theta;
  // Axis-adjacent pairs (k1 < k2) of occupied cells.
  std::map<std::pair<CellKey, CellKey>, int> varsigma;
};

// Throws when the configuration's cell side differs from R/(2 sqrt(d)).
BlockField block_variables(const MarkedConfiguration& config, const GeometricGraph& g, std::size_t n_star);
// theta_k = 1{N_k >= n_star} and varsigma = 1 on every listed pair.
bool block_field_is_complete(const MarkedConfiguration& config, const BlockField& field, std::size_t n_star);

inline constexpr std::size_t kExactConnectivityMax = 12;

struct Connectivity {
  std::optional<double> exact;
  double lower_bound = 0.0;
};

// Probability that the q-thinned complete graph K_n stays connected.
Connectivity connectivity_probability(std::size_t n, double q);
double connectivity_bound(std::size_t n, double q);

// The same probability as an exact fraction numerator / den^{n(n-1)/2} at q = num/den.
// Supports n <= 8 and small denominators.
__int128 connectivity_numerator(std::size_t n, std::int64_t num, std::int64_t den);

double psi(std::size_t n1, std::size_t n2, double q);
double rho(std::size_t n, double q);
double h_value(std::size_t n, double q);

// Site percolation threshold on Z^d (literature values, d <= 6).
double site_threshold(int d);

struct ThresholdEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::size_t trials = 0;
};

// Mean occupation at which a cluster first spans axis 0 of an L^d box (Newman-Ziff sweep).
ThresholdEstimate estimate_site_threshold(int d, int L, std::size_t trials, Rng& rng);

struct PercolationOptions {
  std::size_t chains = 4;
  std::size_t sweeps = 200;
  std::size_t burn_in = 50;
  std::size_t thin = 5;
  std::size_t start_per_cell = 1;
  std::uint64_t seed = 1;
  MoveMix mix;
  double translate_step = -1.0;
};

struct PercolationEstimate {
  double q = 0.0;
  double estimate = 0.0;
  double stderr_ = 0.0;
  std::size_t samples = 0;
};

// Event: the origin cell is occupied and each of its points joins a cluster of the
// q-thinned interior graph that reaches the outer cell layer of the region.
bool percolation_event(const MarkedConfiguration& config, const GeometricGraph& thinned, const Region& region);

std::vector<PercolationEstimate> percolation_probability(const ModelSpec& spec, const Region& region,
                                                         const BoundaryCondition& boundary, std::span<const double> qs,
                                                         const PercolationOptions& options);

struct DominationRow {
  CellKey cell;
  int neighbour_class = 0;  // axis neighbours in the region with N >= n_star
  std::size_t samples = 0;
  std::size_t hits = 0;
  double p = 0.0;
  double stderr_ = 0.0;
  bool inconclusive = false;
  bool passes = false;
};

struct DominationReport {
  std::vector<DominationRow> rows;
  double q0 = 0.0;
  double floor = 0.0;
  double pooled_p = 0.0;
  double pooled_stderr = 0.0;
  std::size_t pooled_samples = 0;
  std::size_t inconclusive = 0;
  std::size_t below_threshold = 0;
  bool pooled_pass = false;
};

// cell_counts per chain, each a list of per-sample occupation vectors in region order.
// Only cells off the outer layer enter. floor = 1 - 1/(z t_star).
DominationReport check_domination(const Region& region,
                                  std::span<const std::vector<std::vector<std::uint32_t>>> cell_counts,
                                  std::size_t n_star, double q0, double floor, std::size_t min_samples = 30);

void write_graph(std::ostream& out, const GeometricGraph& g);

}  // namespace ferrolab

#endif  // FERROLAB_PERCOLATION_HPP
