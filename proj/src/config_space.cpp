#include "ferrolab/config_space.hpp"

#include <algorithm>
#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace ferrolab {

namespace {

void check_dim(int d) {
  if (d < 1 || d > kMaxDim) {
    throw std::invalid_argument("dimension must be in [1, " + std::to_string(kMaxDim) + "], got " +
                                std::to_string(d));
  }
}

}  // namespace

Position::Position(std::initializer_list<double> coords) {
  check_dim(static_cast<int>(coords.size()));
  dim = static_cast<int>(coords.size());
  std::copy(coords.begin(), coords.end(), x.begin());
}

Position Position::zeros(int d) {
  check_dim(d);
  Position p;
  p.dim = d;
  return p;
}

bool Position::operator==(const Position& other) const {
  if (dim != other.dim) return false;
  for (int i = 0; i < dim; ++i) {
    if ((*this)[i] != other[i]) return false;
  }
  return true;
}

double distance_squared(const Position& a, const Position& b) {
  double s = 0.0;
  for (int i = 0; i < a.dim; ++i) {
    const double t = a[i] - b[i];
    s += t * t;
  }
  return s;
}

CellKey::CellKey(std::initializer_list<int> coords) {
  check_dim(static_cast<int>(coords.size()));
  dim = static_cast<int>(coords.size());
  std::copy(coords.begin(), coords.end(), k.begin());
}

CellKey CellKey::origin(int d) {
  check_dim(d);
  CellKey key;
  key.dim = d;
  return key;
}

bool CellKey::operator==(const CellKey& other) const {
  if (dim != other.dim) return false;
  for (int i = 0; i < dim; ++i) {
    if ((*this)[i] != other[i]) return false;
  }
  return true;
}

bool CellKey::operator<(const CellKey& other) const {
  if (dim != other.dim) return dim < other.dim;
  for (int i = 0; i < dim; ++i) {
    if ((*this)[i] != other[i]) return (*this)[i] < other[i];
  }
  return false;
}

int CellKey::max_norm() const {
  int m = 0;
  for (int i = 0; i < dim; ++i) m = std::max(m, std::abs((*this)[i]));
  return m;
}

double CellKey::euclidean_norm() const {
  double s = 0.0;
  for (int i = 0; i < dim; ++i) s += static_cast<double>((*this)[i]) * (*this)[i];
  return std::sqrt(s);
}

std::size_t CellKeyHash::operator()(const CellKey& key) const noexcept {
  std::uint64_t h = 0x9e3779b97f4a7c15ULL ^ static_cast<std::uint64_t>(key.dim);
  for (int i = 0; i < key.dim; ++i) {
    h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(key[i])) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  }
  return static_cast<std::size_t>(h);
}

CellKey cell_index(const Position& x, double l) {
  CellKey k;
  k.dim = x.dim;
  for (int i = 0; i < x.dim; ++i) {
    auto ki = static_cast<int>(std::floor(x[i] / l + 0.5));
    // Settle rounding at the faces so that l(k-1/2) <= x < l(k+1/2) holds in
    // floating point exactly as written.
    if (x[i] < l * (ki - 0.5)) --ki;
    else if (x[i] >= l * (ki + 0.5)) ++ki;
    k[i] = ki;
  }
  return k;
}

Position cell_center(const CellKey& k, double l) {
  Position p = Position::zeros(k.dim);
  for (int i = 0; i < k.dim; ++i) p[i] = l * k[i];
  return p;
}

MarkedConfiguration::MarkedConfiguration(int dim, double cell_side) : dim_(dim), cell_side_(cell_side) {
  check_dim(dim);
  if (!(cell_side > 0.0) || !std::isfinite(cell_side)) {
    throw std::invalid_argument("cell side must be positive and finite");
  }
}

bool MarkedConfiguration::contains_position(const Position& x) const {
  for (std::size_t idx : cell_points(cell_index(x, cell_side_))) {
    if (points_[idx].position == x) return true;
  }
  return false;
}

std::size_t MarkedConfiguration::insert(const MarkedPoint& p) {
  if (p.position.dim != dim_) throw std::invalid_argument("point dimension does not match configuration");
  for (int i = 0; i < dim_; ++i) {
    if (!std::isfinite(p.position[i])) throw std::invalid_argument("non-finite coordinate");
  }
  if (!std::isfinite(p.spin)) throw std::invalid_argument("non-finite spin");
  const CellKey key = cell_index(p.position, cell_side_);
  auto& bucket = cell_map_[key];
  for (std::size_t idx : bucket) {
    if (points_[idx].position == p.position) throw std::invalid_argument("duplicate position");
  }
  const std::size_t index = points_.size();
  points_.push_back(p);
  cells_.push_back(key);
  slot_.push_back(bucket.size());
  bucket.push_back(index);
  return index;
}

MarkedPoint MarkedConfiguration::remove(std::size_t i) {
  if (i >= points_.size()) throw std::out_of_range("point index out of range");
  const MarkedPoint removed = points_[i];
  {
    auto it = cell_map_.find(cells_[i]);
    auto& bucket = it->second;
    const std::size_t s = slot_[i];
    const std::size_t moved = bucket.back();
    bucket[s] = moved;
    slot_[moved] = s;
    bucket.pop_back();
    if (bucket.empty()) cell_map_.erase(it);
  }
  const std::size_t last = points_.size() - 1;
  if (i != last) {
    points_[i] = points_[last];
    cells_[i] = cells_[last];
    slot_[i] = slot_[last];
    cell_map_.find(cells_[i])->second[slot_[i]] = i;
  }
  points_.pop_back();
  cells_.pop_back();
  slot_.pop_back();
  return removed;
}

void MarkedConfiguration::set_spin(std::size_t i, double spin) {
  if (!std::isfinite(spin)) throw std::invalid_argument("non-finite spin");
  points_.at(i).spin = spin;
}

void MarkedConfiguration::move(std::size_t i, const Position& to) {
  if (i >= points_.size()) throw std::out_of_range("point index out of range");
  if (to.dim != dim_) throw std::invalid_argument("point dimension does not match configuration");
  for (int j = 0; j < dim_; ++j) {
    if (!std::isfinite(to[j])) throw std::invalid_argument("non-finite coordinate");
  }
  const CellKey key = cell_index(to, cell_side_);
  for (std::size_t idx : cell_points(key)) {
    if (idx != i && points_[idx].position == to) throw std::invalid_argument("duplicate position");
  }
  if (!(key == cells_[i])) {
    auto it = cell_map_.find(cells_[i]);
    auto& bucket = it->second;
    const std::size_t s = slot_[i];
    const std::size_t moved = bucket.back();
    bucket[s] = moved;
    slot_[moved] = s;
    bucket.pop_back();
    if (bucket.empty()) cell_map_.erase(it);
    auto& target = cell_map_[key];
    cells_[i] = key;
    slot_[i] = target.size();
    target.push_back(i);
  }
  points_[i].position = to;
}

std::span<const std::size_t> MarkedConfiguration::cell_points(const CellKey& k) const {
  auto it = cell_map_.find(k);
  if (it == cell_map_.end()) return {};
  return it->second;
}

std::vector<CellKey> MarkedConfiguration::occupied_cells() const {
  std::vector<CellKey> keys;
  keys.reserve(cell_map_.size());
  for (const auto& [key, bucket] : cell_map_) keys.push_back(key);
  std::sort(keys.begin(), keys.end());
  return keys;
}

std::vector<std::size_t> MarkedConfiguration::neighbors_within(const Position& x, double range) const {
  std::vector<std::size_t> out;
  for_each_within(x, range, [&](std::size_t idx, double d2) {
    if (d2 > 0.0 || !(points_[idx].position == x)) out.push_back(idx);
  });
  return out;
}

bool MarkedConfiguration::check_invariants() const {
  std::size_t total = 0;
  for (const auto& [key, bucket] : cell_map_) {
    if (bucket.empty()) return false;
    for (std::size_t s = 0; s < bucket.size(); ++s) {
      const std::size_t idx = bucket[s];
      if (idx >= points_.size() || !(cells_[idx] == key) || slot_[idx] != s) return false;
      if (!(cell_index(points_[idx].position, cell_side_) == key)) return false;
    }
    total += bucket.size();
  }
  return total == points_.size();
}

Region::Region(int dim, std::vector<CellKey> cells) : dim_(dim), cells_(std::move(cells)) {
  check_dim(dim);
  std::sort(cells_.begin(), cells_.end());
  cells_.erase(std::unique(cells_.begin(), cells_.end()), cells_.end());
  for (const auto& c : cells_) {
    if (c.dim != dim) throw std::invalid_argument("cell dimension does not match region");
    lookup_.emplace(c, 1);
  }
  if (!cells_.empty() && !contains(CellKey::origin(dim))) {
    throw std::invalid_argument("region must contain the origin cell");
  }
}

Region Region::box(int dim, int radius) {
  check_dim(dim);
  if (radius < 0) throw std::invalid_argument("box radius must be non-negative");
  std::vector<CellKey> cells;
  CellKey k = CellKey::origin(dim);
  for (int i = 0; i < dim; ++i) k[i] = -radius;
  while (true) {
    cells.push_back(k);
    int axis = 0;
    while (axis < dim) {
      if (++k[axis] <= radius) break;
      k[axis] = -radius;
      ++axis;
    }
    if (axis == dim) break;
  }
  Region r(dim, std::move(cells));
  r.box_radius_ = radius;
  return r;
}

Region Region::empty(int dim) { return Region(dim, {}); }

bool Region::contains(const CellKey& k) const { return lookup_.find(k) != lookup_.end(); }

bool Region::is_outer_layer(const CellKey& k) const {
  if (!contains(k)) return false;
  CellKey n = k;
  for (int i = 0; i < dim_; ++i) {
    for (int s : {-1, 1}) {
      n[i] = k[i] + s;
      if (!contains(n)) return true;
    }
    n[i] = k[i];
  }
  return false;
}

void Region::bounding_box(double l, Position& lo, Position& hi) const {
  lo = Position::zeros(dim_);
  hi = Position::zeros(dim_);
  if (cells_.empty()) return;
  for (int i = 0; i < dim_; ++i) {
    int mn = cells_.front()[i], mx = cells_.front()[i];
    for (const auto& c : cells_) {
      mn = std::min(mn, c[i]);
      mx = std::max(mx, c[i]);
    }
    lo[i] = l * (mn - 0.5);
    hi[i] = l * (mx + 0.5);
  }
}

bool temperedness_exponents_valid(int v, int w) {
  return v > 2 && static_cast<double>(w) * (v - 2) >= 2.0 * (v - 1);
}

void check_temperedness_exponents(int v, int w) {
  if (!temperedness_exponents_valid(v, w)) {
    throw std::invalid_argument("temperedness exponents require v > 2 and w >= 2(v-1)/(v-2); got v=" +
                                std::to_string(v) + ", w=" + std::to_string(w));
  }
}

double temperedness_F(std::span<const MarkedPoint> cell_points, int v, int w) {
  check_temperedness_exponents(v, w);
  double f = std::pow(static_cast<double>(cell_points.size()), v);
  for (const auto& p : cell_points) f += std::pow(std::abs(p.spin), w);
  return f;
}

double temperedness_F(const MarkedConfiguration& config, const CellKey& k, int v, int w) {
  std::vector<MarkedPoint> pts;
  for (std::size_t idx : config.cell_points(k)) pts.push_back(config[idx]);
  return temperedness_F(pts, v, w);
}

double temperedness_F_alpha(const MarkedConfiguration& config, int v, int w, double alpha, const Region& window) {
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  check_temperedness_exponents(v, w);
  double best = 0.0;
  for (const auto& k : window.cells()) {
    if (config.count_in_cell(k) == 0) continue;
    best = std::max(best, temperedness_F(config, k, v, w) * std::exp(-alpha * k.euclidean_norm()));
  }
  return best;
}

std::string format_double(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

void write_snapshot(std::ostream& out, const MarkedConfiguration& config) {
  out << config.dim() << ' ' << format_double(config.cell_side()) << ' ' << config.size() << '\n';
  for (const auto& p : config.points()) {
    for (int i = 0; i < config.dim(); ++i) out << format_double(p.position[i]) << ' ';
    out << format_double(p.spin) << '\n';
  }
}

namespace {

double parse_double(const std::string& token) {
  double value = 0.0;
  auto res = std::from_chars(token.data(), token.data() + token.size(), value);
  if (res.ec != std::errc() || res.ptr != token.data() + token.size()) {
    throw std::invalid_argument("malformed number in snapshot: '" + token + "'");
  }
  return value;
}

}  // namespace

MarkedConfiguration read_snapshot(std::istream& in) {
  int d = 0;
  std::string l_token;
  std::size_t n = 0;
  if (!(in >> d >> l_token >> n)) throw std::invalid_argument("malformed snapshot header");
  MarkedConfiguration config(d, parse_double(l_token));
  for (std::size_t j = 0; j < n; ++j) {
    MarkedPoint p;
    p.position = Position::zeros(d);
    std::string token;
    for (int i = 0; i < d; ++i) {
      if (!(in >> token)) throw std::invalid_argument("truncated snapshot");
      p.position[i] = parse_double(token);
    }
    if (!(in >> token)) throw std::invalid_argument("truncated snapshot");
    p.spin = parse_double(token);
    config.insert(p);
  }
  return config;
}

}  // namespace ferrolab
