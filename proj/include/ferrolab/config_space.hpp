#ifndef FERROLAB_CONFIG_SPACE_HPP
#define FERROLAB_CONFIG_SPACE_HPP

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace ferrolab {

inline constexpr int kMaxDim = 6;

// Point of R^d, 1 <= d <= kMaxDim. Fixed storage so positions are cheap to copy
// in the sampler hot loops.
struct Position {
  std::array<double, kMaxDim> x{};
  int dim = 0;

  Position() = default;
  Position(std::initializer_list<double> coords);
  static Position zeros(int d);

  double& operator[](int i) { return x[static_cast<std::size_t>(i)]; }
  double operator[](int i) const { return x[static_cast<std::size_t>(i)]; }
  bool operator==(const Position& other) const;
};

double distance_squared(const Position& a, const Position& b);
inline double distance(const Position& a, const Position& b) { return std::sqrt(distance_squared(a, b)); }

// Integer label k of the cube Xi_k = prod_i [l(k_i - 1/2), l(k_i + 1/2)).
struct CellKey {
  std::array<int, kMaxDim> k{};
  int dim = 0;

  CellKey() = default;
  CellKey(std::initializer_list<int> coords);
  static CellKey origin(int d);

  int& operator[](int i) { return k[static_cast<std::size_t>(i)]; }
  int operator[](int i) const { return k[static_cast<std::size_t>(i)]; }
  bool operator==(const CellKey& other) const;
  bool operator<(const CellKey& other) const;
  int max_norm() const;
  double euclidean_norm() const;
};

struct CellKeyHash {
  std::size_t operator()(const CellKey& key) const noexcept;
};

CellKey cell_index(const Position& x, double l);
Position cell_center(const CellKey& k, double l);

struct MarkedPoint {
  Position position;
  double spin = 0.0;
};

// Finite marked configuration with a cell list keyed by the cube partition.
// Positions are pairwise distinct; removal swaps the last point into the hole.
class MarkedConfiguration {
 public:
  MarkedConfiguration(int dim, double cell_side);

  int dim() const { return dim_; }
  double cell_side() const { return cell_side_; }
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }

  const MarkedPoint& operator[](std::size_t i) const { return points_[i]; }
  std::span<const MarkedPoint> points() const { return points_; }
  const CellKey& cell_of(std::size_t i) const { return cells_[i]; }

  // Throws std::invalid_argument on dimension mismatch, non-finite data or a
  // position already present.
  std::size_t insert(const MarkedPoint& p);
  // Removes point i. The former last point (if any) now lives at index i.
  MarkedPoint remove(std::size_t i);
  void set_spin(std::size_t i, double spin);
  void move(std::size_t i, const Position& to);
  bool contains_position(const Position& x) const;

  std::span<const std::size_t> cell_points(const CellKey& k) const;
  std::size_t count_in_cell(const CellKey& k) const { return cell_points(k).size(); }
  // Occupied cells in lexicographic order.
  std::vector<CellKey> occupied_cells() const;

  // Invokes fn(index, squared_distance) for every point y with |x - y| <= range,
  // including a point sitting exactly at x. Visiting order is deterministic.
  template <class Fn>
  void for_each_within(const Position& x, double range, Fn&& fn) const;

  // Points y != x with |x - y| <= range.
  std::vector<std::size_t> neighbors_within(const Position& x, double range) const;

  // Cell index consistent with every stored position.
  bool check_invariants() const;

 private:
  int dim_;
  double cell_side_;
  std::vector<MarkedPoint> points_;
  std::vector<CellKey> cells_;
  std::vector<std::size_t> slot_;
  std::unordered_map<CellKey, std::vector<std::size_t>, CellKeyHash> cell_map_;
};

// Lambda as a finite union of cells. Non-empty regions contain the origin cell.
class Region {
 public:
  Region(int dim, std::vector<CellKey> cells);
  static Region box(int dim, int radius);
  static Region empty(int dim);

  int dim() const { return dim_; }
  std::span<const CellKey> cells() const { return cells_; }
  std::size_t cell_count() const { return cells_.size(); }
  bool contains(const CellKey& k) const;
  bool contains_point(const Position& x, double l) const { return contains(cell_index(x, l)); }
  double volume(double l) const { return static_cast<double>(cells_.size()) * std::pow(l, dim_); }
  std::optional<int> box_radius() const { return box_radius_; }
  // Cells of the region with an axis neighbour outside it.
  bool is_outer_layer(const CellKey& k) const;
  // Axis-aligned bounding box [lo, hi) of the region in space.
  void bounding_box(double l, Position& lo, Position& hi) const;

 private:
  int dim_;
  std::vector<CellKey> cells_;
  std::unordered_map<CellKey, char, CellKeyHash> lookup_;
  std::optional<int> box_radius_;
};

// Exponent pair check w >= 2(v-1)/(v-2) with integer v > 2.
void check_temperedness_exponents(int v, int w);
bool temperedness_exponents_valid(int v, int w);

double temperedness_F(std::span<const MarkedPoint> cell_points, int v, int w);
double temperedness_F(const MarkedConfiguration& config, const CellKey& k, int v, int w);
// sup over cells k of the window of F(gamma_k) exp(-alpha |k|).
double temperedness_F_alpha(const MarkedConfiguration& config, int v, int w, double alpha, const Region& window);

// Snapshot format: "d l N" then one "x1 ... xd sigma" line per point.
void write_snapshot(std::ostream& out, const MarkedConfiguration& config);
MarkedConfiguration read_snapshot(std::istream& in);

// Shortest round-trip decimal representation.
std::string format_double(double value);

template <class Fn>
void MarkedConfiguration::for_each_within(const Position& x, double range, Fn&& fn) const {
  if (points_.empty() || !(range >= 0.0)) return;
  const CellKey center = cell_index(x, cell_side_);
  const int shells = static_cast<int>(std::ceil(range / cell_side_));
  const double range2 = range * range;
  // Sparse configurations in high dimension: a direct scan beats the stencil.
  const double stencil = std::pow(2.0 * shells + 1.0, dim_);
  if (stencil > 4.0 * static_cast<double>(points_.size())) {
    for (std::size_t idx = 0; idx < points_.size(); ++idx) {
      const double d2 = distance_squared(x, points_[idx].position);
      if (d2 <= range2) fn(idx, d2);
    }
    return;
  }
  CellKey probe = center;
  std::array<int, kMaxDim> offset{};
  for (int i = 0; i < dim_; ++i) offset[static_cast<std::size_t>(i)] = -shells;
  while (true) {
    // Lower bound on the distance from x to the probed cell.
    double gap2 = 0.0;
    for (int i = 0; i < dim_; ++i) {
      const int o = offset[static_cast<std::size_t>(i)];
      probe[i] = center[i] + o;
      const double lo = cell_side_ * (probe[i] - 0.5);
      const double hi = cell_side_ * (probe[i] + 0.5);
      double g = 0.0;
      if (x[i] < lo) g = lo - x[i];
      else if (x[i] > hi) g = x[i] - hi;
      gap2 += g * g;
    }
    if (gap2 <= range2) {
      auto it = cell_map_.find(probe);
      if (it != cell_map_.end()) {
        for (std::size_t idx : it->second) {
          const double d2 = distance_squared(x, points_[idx].position);
          if (d2 <= range2) fn(idx, d2);
        }
      }
    }
    int axis = 0;
    while (axis < dim_) {
      auto& o = offset[static_cast<std::size_t>(axis)];
      if (++o <= shells) break;
      o = -shells;
      ++axis;
    }
    if (axis == dim_) break;
  }
}

}  // namespace ferrolab

#endif  // FERROLAB_CONFIG_SPACE_HPP
