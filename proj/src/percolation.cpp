#include "ferrolab/percolation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <unordered_map>

namespace ferrolab {

GeometricGraph build_rgg(const MarkedConfiguration& config, double R) {
  GeometricGraph g;
  g.R = R;
  g.vertices.reserve(config.size());
  g.point_index.reserve(config.size());
  for (std::size_t i = 0; i < config.size(); ++i) {
    g.vertices.push_back(config[i].position);
    g.point_index.push_back(i);
  }
  for (std::size_t i = 0; i < config.size(); ++i) {
    config.for_each_within(config[i].position, R, [&](std::size_t j, double) {
      if (j > i) g.edges.emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));
    });
  }
  std::sort(g.edges.begin(), g.edges.end());
  return g;
}

GeometricGraph thin_edges(const GeometricGraph& g, double q, Rng& rng) {
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("thinning probability must lie in [0, 1]");
  GeometricGraph out = g;
  out.edges.clear();
  for (const auto& e : g.edges) {
    if (rng.uniform01() < q) out.edges.push_back(e);
  }
  return out;
}

GeometricGraph thin_edges_coupled(const GeometricGraph& g, double q, std::span<const double> uniforms) {
  if (uniforms.size() != g.edges.size()) throw std::invalid_argument("one uniform per edge required");
  GeometricGraph out = g;
  out.edges.clear();
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    if (uniforms[e] < q) out.edges.push_back(g.edges[e]);
  }
  return out;
}

UnionFind::UnionFind(std::size_t n) : parent_(n), size_(n, 1), components_(n) {
  std::iota(parent_.begin(), parent_.end(), std::size_t{0});
}

std::size_t UnionFind::find(std::size_t x) {
  std::size_t root = x;
  while (parent_[root] != root) root = parent_[root];
  while (parent_[x] != root) {
    const std::size_t next = parent_[x];
    parent_[x] = root;
    x = next;
  }
  return root;
}

bool UnionFind::unite(std::size_t a, std::size_t b) {
  a = find(a);
  b = find(b);
  if (a == b) return false;
  if (size_[a] < size_[b]) std::swap(a, b);
  parent_[b] = a;
  size_[a] += size_[b];
  --components_;
  return true;
}

ClusterLabels connected_components(const GeometricGraph& g, const std::vector<bool>& boundary_flags) {
  const std::size_t n = g.vertex_count();
  if (!boundary_flags.empty() && boundary_flags.size() != n) {
    throw std::invalid_argument("boundary flags must match the vertex count");
  }
  UnionFind uf(n);
  for (const auto& [a, b] : g.edges) uf.unite(a, b);
  ClusterLabels out;
  out.label.assign(n, 0);
  std::unordered_map<std::size_t, std::size_t> dense;
  for (std::size_t v = 0; v < n; ++v) {
    const std::size_t root = uf.find(v);
    auto [it, inserted] = dense.try_emplace(root, out.sizes.size());
    if (inserted) out.sizes.push_back(0);
    out.label[v] = it->second;
    out.sizes[it->second]++;
  }
  std::vector<bool> cluster_touch(out.sizes.size(), false);
  if (!boundary_flags.empty()) {
    for (std::size_t v = 0; v < n; ++v) {
      if (boundary_flags[v]) cluster_touch[out.label[v]] = true;
    }
  }
  out.touches_boundary.resize(n);
  for (std::size_t v = 0; v < n; ++v) out.touches_boundary[v] = cluster_touch[out.label[v]];
  return out;
}

std::vector<bool> outer_layer_flags(const GeometricGraph& g, const Region& region, double cell_side) {
  std::vector<bool> flags(g.vertex_count());
  for (std::size_t v = 0; v < g.vertex_count(); ++v) {
    flags[v] = region.is_outer_layer(cell_index(g.vertices[v], cell_side));
  }
  return flags;
}

namespace {

bool axis_adjacent(const CellKey& a, const CellKey& b) {
  int diff = 0;
  for (int i = 0; i < a.dim; ++i) {
    const int t = std::abs(a[i] - b[i]);
    if (t > 1) return false;
    diff += t;
  }
  return diff == 1;
}

}  // namespace

BlockField block_variables(const MarkedConfiguration& config, const GeometricGraph& g, std::size_t n_star) {
  const double expected = g.R / (2.0 * std::sqrt(static_cast<double>(config.dim())));
  if (std::abs(config.cell_side() - expected) > 1e-12 * expected) {
    throw std::invalid_argument("block variables need cell side R/(2 sqrt(d))");
  }
  if (g.vertex_count() != config.size()) throw std::invalid_argument("graph does not match the configuration");
  const std::size_t n = g.vertex_count();
  std::vector<CellKey> cell(n);
  for (std::size_t v = 0; v < n; ++v) cell[v] = config.cell_of(g.point_index[v]);

  UnionFind uf(n);
  std::map<std::pair<CellKey, CellKey>, int> cross;
  for (const auto& [a, b] : g.edges) {
    if (cell[a] == cell[b]) {
      uf.unite(a, b);
    } else if (axis_adjacent(cell[a], cell[b])) {
      auto key = cell[a] < cell[b] ? std::make_pair(cell[a], cell[b]) : std::make_pair(cell[b], cell[a]);
      cross[key] = 1;
    }
  }
  std::vector<std::size_t> vertex_of(config.size());
  for (std::size_t v = 0; v < n; ++v) vertex_of.at(g.point_index[v]) = v;
  BlockField field;
  for (const auto& k : config.occupied_cells()) {
    const auto pts = config.cell_points(k);
    bool connected = true;
    std::optional<std::size_t> root;
    for (std::size_t idx : pts) {
      const std::size_t r = uf.find(vertex_of[idx]);
      if (root && *root != r) connected = false;
      root = r;
    }
    field.theta[k] = (connected && pts.size() >= n_star) ? 1 : 0;
  }
  const auto occupied = config.occupied_cells();
  for (const auto& k : occupied) {
    for (int i = 0; i < config.dim(); ++i) {
      CellKey nb = k;
      nb[i] += 1;
      if (config.count_in_cell(nb) == 0) continue;
      auto key = std::make_pair(k, nb);
      field.varsigma[key] = cross.count(key) ? 1 : 0;
    }
  }
  return field;
}

bool block_field_is_complete(const MarkedConfiguration& config, const BlockField& field, std::size_t n_star) {
  for (const auto& [k, theta] : field.theta) {
    if (theta != (config.count_in_cell(k) >= n_star ? 1 : 0)) return false;
  }
  for (const auto& [pair, s] : field.varsigma) {
    if (s != 1) return false;
  }
  return true;
}

double connectivity_bound(std::size_t n, double q) {
  if (n < 2) return 1.0;
  return 1.0 - static_cast<double>(n - 1) * std::pow(1.0 - q * q, static_cast<double>(n) - 2.0);
}

namespace {

double binomial(std::size_t n, std::size_t k) {
  double b = 1.0;
  for (std::size_t i = 1; i <= k; ++i) b = b * static_cast<double>(n - k + i) / static_cast<double>(i);
  return b;
}

std::vector<double> exact_connectivity_table(std::size_t n_max, double q) {
  std::vector<double> phi(n_max + 1, 0.0);
  if (n_max >= 1) phi[1] = 1.0;
  for (std::size_t m = 2; m <= n_max; ++m) {
    double s = 0.0;
    for (std::size_t k = 1; k < m; ++k) {
      s += binomial(m - 1, k - 1) * phi[k] * std::pow(1.0 - q, static_cast<double>(k * (m - k)));
    }
    phi[m] = 1.0 - s;
  }
  return phi;
}

__int128 checked_mul(__int128 a, __int128 b) {
  __int128 out;
  if (__builtin_mul_overflow(a, b, &out)) throw std::overflow_error("exact connectivity overflows 128 bits");
  return out;
}

__int128 checked_pow(__int128 base, std::size_t e) {
  __int128 out = 1;
  for (std::size_t i = 0; i < e; ++i) out = checked_mul(out, base);
  return out;
}

}  // namespace

Connectivity connectivity_probability(std::size_t n, double q) {
  if (n < 1) throw std::invalid_argument("connectivity needs n >= 1");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("q must lie in [0, 1]");
  Connectivity c;
  c.lower_bound = connectivity_bound(n, q);
  if (n <= kExactConnectivityMax) c.exact = exact_connectivity_table(n, q)[n];
  return c;
}

__int128 connectivity_numerator(std::size_t n, std::int64_t num, std::int64_t den) {
  if (n < 1 || n > 8) throw std::invalid_argument("exact rational connectivity supports 1 <= n <= 8");
  if (den <= 0 || num < 0 || num > den) throw std::invalid_argument("q = num/den must lie in [0, 1]");
  auto edges = [](std::size_t m) { return m * (m - 1) / 2; };
  std::vector<__int128> N(n + 1, 0);
  N[1] = 1;
  for (std::size_t m = 2; m <= n; ++m) {
    __int128 s = 0;
    for (std::size_t k = 1; k < m; ++k) {
      __int128 term = static_cast<__int128>(binomial(m - 1, k - 1) + 0.5);
      term = checked_mul(term, N[k]);
      term = checked_mul(term, checked_pow(den - num, k * (m - k)));
      term = checked_mul(term, checked_pow(den, edges(m - k)));
      s += term;
    }
    N[m] = checked_pow(den, edges(m)) - s;
  }
  return N[n];
}

double psi(std::size_t n1, std::size_t n2, double q) {
  return 1.0 - std::pow(1.0 - q, static_cast<double>(n1) * static_cast<double>(n2));
}

double rho(std::size_t n, double q) {
  if (n < 1) throw std::invalid_argument("rho needs n >= 1");
  if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("rho needs q in (0, 1)");
  double best = 1.0;
  if (n <= kExactConnectivityMax) {
    const auto phi = exact_connectivity_table(kExactConnectivityMax, q);
    for (std::size_t m = n; m <= kExactConnectivityMax; ++m) best = std::min(best, phi[m]);
  }
  // Bound deficit (m-1)(1-q^2)^{m-2} decreases once m q^2 > 1.
  const std::size_t start = std::max<std::size_t>(n, kExactConnectivityMax + 1);
  const auto turn = static_cast<std::size_t>(std::floor(1.0 / (q * q))) + 2;
  const std::size_t stop = std::max(start, turn);
  double deficit = 0.0;
  for (std::size_t m = start; m <= stop; ++m) deficit = std::max(deficit, 1.0 - connectivity_bound(m, q));
  best = std::min(best, std::max(0.0, 1.0 - deficit));
  return best;
}

double h_value(std::size_t n, double q) { return rho(n, q) * psi(n, n, q); }

double site_threshold(int d) {
  switch (d) {
    case 1:
      return 1.0;
    case 2:
      return 0.592746;
    case 3:
      return 0.311608;
    case 4:
      return 0.196889;
    case 5:
      return 0.140797;
    case 6:
      return 0.109017;
    default:
      throw std::invalid_argument("no site threshold for d=" + std::to_string(d));
  }
}

ThresholdEstimate estimate_site_threshold(int d, int L, std::size_t trials, Rng& rng) {
  if (d < 1 || d > kMaxDim || L < 2 || trials < 1) throw std::invalid_argument("bad threshold estimator arguments");
  std::size_t sites = 1;
  for (int i = 0; i < d; ++i) sites *= static_cast<std::size_t>(L);
  std::vector<std::size_t> stride(static_cast<std::size_t>(d));
  stride[0] = 1;
  for (int i = 1; i < d; ++i) stride[static_cast<std::size_t>(i)] = stride[static_cast<std::size_t>(i - 1)] * L;
  const std::size_t left = sites, right = sites + 1;
  std::vector<double> samples;
  samples.reserve(trials);
  std::vector<std::size_t> order(sites);
  std::vector<char> occupied(sites);
  for (std::size_t t = 0; t < trials; ++t) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = sites - 1; i > 0; --i) std::swap(order[i], order[rng.index(i + 1)]);
    std::fill(occupied.begin(), occupied.end(), 0);
    UnionFind uf(sites + 2);
    for (std::size_t added = 0; added < sites; ++added) {
      const std::size_t s = order[added];
      occupied[s] = 1;
      const std::size_t x0 = s % static_cast<std::size_t>(L);
      if (x0 == 0) uf.unite(s, left);
      if (x0 == static_cast<std::size_t>(L) - 1) uf.unite(s, right);
      for (int i = 0; i < d; ++i) {
        const std::size_t st = stride[static_cast<std::size_t>(i)];
        const std::size_t xi = (s / st) % static_cast<std::size_t>(L);
        if (xi > 0 && occupied[s - st]) uf.unite(s, s - st);
        if (xi + 1 < static_cast<std::size_t>(L) && occupied[s + st]) uf.unite(s, s + st);
      }
      if (uf.find(left) == uf.find(right)) {
        samples.push_back(static_cast<double>(added + 1) / static_cast<double>(sites));
        break;
      }
    }
  }
  ThresholdEstimate est;
  est.trials = samples.size();
  est.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
  double var = 0.0;
  for (double s : samples) var += (s - est.mean) * (s - est.mean);
  if (samples.size() > 1) est.stderr_ = std::sqrt(var / static_cast<double>(samples.size() - 1) / samples.size());
  return est;
}

bool percolation_event(const MarkedConfiguration& config, const GeometricGraph& thinned, const Region& region) {
  const auto origin = config.cell_points(CellKey::origin(config.dim()));
  if (origin.empty()) return false;
  if (thinned.vertex_count() != config.size()) throw std::invalid_argument("graph does not match the configuration");
  const auto labels = connected_components(thinned, outer_layer_flags(thinned, region, config.cell_side()));
  std::vector<std::size_t> vertex_of(config.size());
  for (std::size_t v = 0; v < thinned.vertex_count(); ++v) vertex_of.at(thinned.point_index[v]) = v;
  for (std::size_t idx : origin) {
    if (!labels.touches_boundary[vertex_of[idx]]) return false;
  }
  return true;
}

namespace {

void mean_and_stderr(const std::vector<double>& chain_means, const std::vector<std::size_t>& chain_samples,
                     double& mean, double& se) {
  const std::size_t c = chain_means.size();
  double total = 0.0;
  std::size_t samples = 0;
  for (std::size_t i = 0; i < c; ++i) {
    total += chain_means[i] * static_cast<double>(chain_samples[i]);
    samples += chain_samples[i];
  }
  mean = samples > 0 ? total / static_cast<double>(samples) : 0.0;
  if (c >= 2) {
    double avg = 0.0;
    for (double m : chain_means) avg += m;
    avg /= static_cast<double>(c);
    double var = 0.0;
    for (double m : chain_means) var += (m - avg) * (m - avg);
    se = std::sqrt(var / static_cast<double>(c - 1) / static_cast<double>(c));
  } else {
    se = samples > 0 ? std::sqrt(std::max(0.0, mean * (1.0 - mean)) / static_cast<double>(samples)) : 0.0;
  }
}

}  // namespace

std::vector<PercolationEstimate> percolation_probability(const ModelSpec& spec, const Region& region,
                                                         const BoundaryCondition& boundary, std::span<const double> qs,
                                                         const PercolationOptions& options) {
  if (spec.d < 2) throw std::invalid_argument("percolation estimate needs d >= 2");
  if (options.chains < 1) throw std::invalid_argument("percolation estimate needs at least one chain");
  if (options.burn_in >= options.sweeps) throw std::invalid_argument("burn_in must be smaller than sweeps");
  options.mix.validate();
  const double scale = spec.chi.atomic() ? spec.chi.param : 1.0;
  std::vector<std::vector<double>> chain_means(qs.size(), std::vector<double>(options.chains, 0.0));
  std::vector<std::size_t> chain_samples(options.chains, 0);
  for (std::size_t c = 0; c < options.chains; ++c) {
    double sign = boundary.kind == BoundaryKind::minus ? -1.0 : 1.0;
    if (boundary.kind == BoundaryKind::free || boundary.kind == BoundaryKind::custom) {
      sign = (splitmix64(options.seed ^ (c + 0x51ed)) & 1U) ? 1.0 : -1.0;
    }
    ChainState state = make_chain(spec, region, boundary, options.start_per_cell, sign * scale, options.seed, c);
    std::vector<std::size_t> hits(qs.size(), 0);
    std::vector<double> uniforms;
    for (std::size_t sweep = 1; sweep <= options.sweeps; ++sweep) {
      sweep_once(state, options.mix, options.translate_step, true);
      if (sweep <= options.burn_in || (sweep - options.burn_in) % options.thin != 0) continue;
      const GeometricGraph g = build_rgg(state.config(), spec.coupling.R);
      uniforms.resize(g.edge_count());
      for (auto& u : uniforms) u = state.rng().uniform01();
      for (std::size_t iq = 0; iq < qs.size(); ++iq) {
        if (percolation_event(state.config(), thin_edges_coupled(g, qs[iq], uniforms), region)) hits[iq]++;
      }
      chain_samples[c]++;
    }
    for (std::size_t iq = 0; iq < qs.size(); ++iq) {
      chain_means[iq][c] =
          chain_samples[c] > 0 ? static_cast<double>(hits[iq]) / static_cast<double>(chain_samples[c]) : 0.0;
    }
  }
  std::vector<PercolationEstimate> out;
  for (std::size_t iq = 0; iq < qs.size(); ++iq) {
    PercolationEstimate e;
    e.q = qs[iq];
    mean_and_stderr(chain_means[iq], chain_samples, e.estimate, e.stderr_);
    e.samples = std::accumulate(chain_samples.begin(), chain_samples.end(), std::size_t{0});
    out.push_back(e);
  }
  return out;
}

DominationReport check_domination(const Region& region,
                                  std::span<const std::vector<std::vector<std::uint32_t>>> cell_counts,
                                  std::size_t n_star, double q0, double floor, std::size_t min_samples) {
  DominationReport report;
  report.q0 = q0;
  report.floor = floor;
  const double threshold = std::max(q0, floor);
  const auto cells = region.cells();
  std::map<CellKey, std::size_t> index;
  for (std::size_t i = 0; i < cells.size(); ++i) index[cells[i]] = i;
  std::vector<std::size_t> interior;
  std::vector<std::vector<std::size_t>> neighbours(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (region.is_outer_layer(cells[i])) continue;
    interior.push_back(i);
    for (int ax = 0; ax < region.dim(); ++ax) {
      for (int s : {-1, 1}) {
        CellKey nb = cells[i];
        nb[ax] += s;
        auto it = index.find(nb);
        if (it != index.end()) neighbours[i].push_back(it->second);
      }
    }
  }
  std::map<std::pair<std::size_t, int>, std::pair<std::size_t, std::size_t>> tally;
  std::vector<double> chain_means;
  std::vector<std::size_t> chain_samples;
  for (const auto& chain : cell_counts) {
    std::size_t hits = 0, samples = 0;
    for (const auto& counts : chain) {
      if (counts.size() != cells.size()) throw std::invalid_argument("cell count vector does not match the region");
      for (std::size_t i : interior) {
        int cls = 0;
        for (std::size_t nb : neighbours[i]) cls += counts[nb] >= n_star ? 1 : 0;
        auto& t = tally[{i, cls}];
        t.first++;
        const bool hit = counts[i] >= n_star;
        t.second += hit ? 1 : 0;
        hits += hit ? 1 : 0;
        ++samples;
      }
    }
    if (samples > 0) {
      chain_means.push_back(static_cast<double>(hits) / static_cast<double>(samples));
      chain_samples.push_back(samples);
    }
  }
  for (const auto& [key, t] : tally) {
    DominationRow row;
    row.cell = cells[key.first];
    row.neighbour_class = key.second;
    row.samples = t.first;
    row.hits = t.second;
    row.p = static_cast<double>(t.second) / static_cast<double>(t.first);
    row.stderr_ = std::sqrt(row.p * (1.0 - row.p) / static_cast<double>(t.first));
    row.inconclusive = t.first < min_samples;
    row.passes = !row.inconclusive && row.p >= threshold - 3.0 * row.stderr_;
    if (row.inconclusive) report.inconclusive++;
    else if (!row.passes) report.below_threshold++;
    report.rows.push_back(row);
  }
  mean_and_stderr(chain_means, chain_samples, report.pooled_p, report.pooled_stderr);
  report.pooled_samples = std::accumulate(chain_samples.begin(), chain_samples.end(), std::size_t{0});
  report.pooled_pass = report.pooled_samples > 0 && report.pooled_p >= threshold - 3.0 * report.pooled_stderr;
  return report;
}

void write_graph(std::ostream& out, const GeometricGraph& g) {
  out << g.vertex_count() << ' ' << g.edge_count() << '\n';
  for (const auto& v : g.vertices) {
    for (int i = 0; i < v.dim; ++i) out << (i ? " " : "") << format_double(v[i]);
    out << '\n';
  }
  for (const auto& [a, b] : g.edges) out << a << ' ' << b << '\n';
}

}  // namespace ferrolab
