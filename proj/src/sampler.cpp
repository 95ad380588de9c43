#include "ferrolab/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace ferrolab {

Position uniform_position(const Region& region, double cell_side, Rng& rng) {
  const auto cells = region.cells();
  if (cells.empty()) throw std::invalid_argument("uniform position in an empty region");
  while (true) {
    const CellKey& k = cells[rng.index(cells.size())];
    Position p = Position::zeros(region.dim());
    for (int i = 0; i < region.dim(); ++i) p[i] = cell_side * (k[i] - 0.5 + rng.uniform01());
    if (region.contains_point(p, cell_side)) return p;
  }
}

MarkedConfiguration sample_poisson_marked(double z, const Region& region, double cell_side, const SpinMeasure& chi,
                                          Rng& rng) {
  MarkedConfiguration config(region.dim(), cell_side);
  const double mean = z * region.volume(cell_side);
  if (!(mean > 0.0)) return config;
  const std::uint64_t n = rng.poisson(mean);
  while (config.size() < n) {
    MarkedPoint p{uniform_position(region, cell_side, rng), 0.0};
    if (config.contains_position(p.position)) continue;
    p.spin = chi.sample(rng);
    config.insert(p);
  }
  return config;
}

std::vector<CellKey> collar_cells(const Region& region, double cell_side, double range) {
  const int d = region.dim();
  const auto cells = region.cells();
  std::vector<CellKey> out;
  if (cells.empty()) return out;
  const int pad = static_cast<int>(std::ceil(range / cell_side)) + 1;
  CellKey lo = cells.front(), hi = cells.front();
  for (const auto& c : cells) {
    for (int i = 0; i < d; ++i) {
      lo[i] = std::min(lo[i], c[i]);
      hi[i] = std::max(hi[i], c[i]);
    }
  }
  const double range2 = range * range;
  auto gap2_to = [&](const CellKey& a, const CellKey& b) {
    double g = 0.0;
    for (int i = 0; i < d; ++i) {
      const int steps = std::max(0, std::abs(a[i] - b[i]) - 1);
      g += (steps * cell_side) * (steps * cell_side);
    }
    return g;
  };
  CellKey k = lo;
  for (int i = 0; i < d; ++i) k[i] = lo[i] - pad;
  while (true) {
    if (!region.contains(k)) {
      double best;
      if (auto n = region.box_radius()) {
        best = 0.0;
        for (int i = 0; i < d; ++i) {
          const int steps = std::max(0, std::abs(k[i]) - *n - 1);
          best += (steps * cell_side) * (steps * cell_side);
        }
      } else {
        best = std::numeric_limits<double>::infinity();
        for (const auto& c : cells) {
          best = std::min(best, gap2_to(k, c));
          if (best == 0.0) break;
        }
      }
      if (best <= range2) out.push_back(k);
    }
    int axis = 0;
    while (axis < d) {
      if (++k[axis] <= hi[axis] + pad) break;
      k[axis] = lo[axis] - pad;
      ++axis;
    }
    if (axis == d) break;
  }
  return out;
}

MarkedConfiguration subgrid_pattern(int dim, std::span<const CellKey> cells, double cell_side, std::size_t n,
                                    double spin, double min_spacing) {
  MarkedConfiguration config(dim, cell_side);
  if (n == 0) return config;
  std::size_t m = 1;
  while (std::pow(static_cast<double>(m), dim) < static_cast<double>(n)) ++m;
  const double spacing = cell_side / static_cast<double>(m);
  if (!(spacing > min_spacing)) {
    throw std::invalid_argument("sub-grid spacing " + format_double(spacing) + " does not exceed " +
                                format_double(min_spacing));
  }
  for (const auto& k : cells) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(dim), 0);
    for (std::size_t placed = 0; placed < n; ++placed) {
      Position p = Position::zeros(dim);
      for (int i = 0; i < dim; ++i) {
        p[i] = cell_side * (k[i] - 0.5 + (static_cast<double>(idx[static_cast<std::size_t>(i)]) + 0.5) / m);
      }
      config.insert({p, spin});
      int axis = 0;
      while (axis < dim) {
        if (++idx[static_cast<std::size_t>(axis)] < m) break;
        idx[static_cast<std::size_t>(axis)] = 0;
        ++axis;
      }
    }
  }
  return config;
}

const char* boundary_name(BoundaryKind kind) {
  switch (kind) {
    case BoundaryKind::plus:
      return "plus";
    case BoundaryKind::minus:
      return "minus";
    case BoundaryKind::free:
      return "free";
    case BoundaryKind::custom:
      return "custom";
  }
  return "?";
}

BoundaryCondition BoundaryCondition::signed_class(const Region& region, const ModelSpec& spec, std::size_t n_star,
                                                  double a, int sign) {
  if (n_star < 1 || !(a > 0.0)) throw std::invalid_argument("boundary class needs n_star >= 1 and a > 0");
  if (sign != 1 && sign != -1) throw std::invalid_argument("boundary sign must be +1 or -1");
  const double l = spec.cell_side();
  const auto cells = collar_cells(region, l, spec.interaction_range());
  BoundaryCondition bc;
  bc.kind = sign > 0 ? BoundaryKind::plus : BoundaryKind::minus;
  bc.collar = subgrid_pattern(spec.d, cells, l, n_star, sign * a, spec.potential.range());
  bc.n_star = n_star;
  bc.a = a;
  return bc;
}

BoundaryCondition BoundaryCondition::free_boundary(const ModelSpec& spec) {
  BoundaryCondition bc;
  bc.kind = BoundaryKind::free;
  bc.collar = MarkedConfiguration(spec.d, spec.cell_side());
  return bc;
}

BoundaryCondition BoundaryCondition::custom(MarkedConfiguration collar) {
  BoundaryCondition bc;
  bc.kind = BoundaryKind::custom;
  bc.collar = std::move(collar);
  return bc;
}

BoundaryCondition BoundaryCondition::mirrored() const {
  BoundaryCondition bc = *this;
  for (std::size_t i = 0; i < bc.collar.size(); ++i) bc.collar.set_spin(i, -bc.collar[i].spin);
  if (kind == BoundaryKind::plus) bc.kind = BoundaryKind::minus;
  else if (kind == BoundaryKind::minus) bc.kind = BoundaryKind::plus;
  return bc;
}

bool BoundaryCondition::satisfies_class(const Region& region, const ModelSpec& spec) const {
  if (kind == BoundaryKind::free) return collar.empty();
  if (kind == BoundaryKind::custom) return true;
  const double target = kind == BoundaryKind::plus ? a : -a;
  for (const auto& p : collar.points()) {
    if (p.spin != target) return false;
    if (region.contains_point(p.position, collar.cell_side())) return false;
  }
  for (const auto& k : collar_cells(region, spec.cell_side(), spec.interaction_range())) {
    if (collar.count_in_cell(k) < n_star) return false;
  }
  return true;
}

void MoveMix::validate() const {
  const double total = birth + death + translate + spin_resample;
  if (birth < 0.0 || death < 0.0 || translate < 0.0 || spin_resample < 0.0) {
    throw std::invalid_argument("move probabilities must be non-negative");
  }
  if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("move probabilities must sum to 1");
  if (birth != death) throw std::invalid_argument("birth and death probabilities must be equal");
}

TiltedSpinSampler::TiltedSpinSampler(SpinMeasure chi, std::size_t nodes, double bucket)
    : chi_(chi), nodes_(nodes), bucket_(bucket) {
  if (chi.atomic()) throw std::invalid_argument("tilted table sampler needs a continuous spin measure");
  if (nodes < 3 || !(bucket > 0.0)) throw std::invalid_argument("tilted sampler needs >= 3 nodes and bucket > 0");
}

const TiltedSpinSampler::Table& TiltedSpinSampler::table(double h) {
  const long long key = std::llround(h / bucket_);
  auto it = tables_.find(key);
  if (it != tables_.end()) return it->second;
  if (tables_.size() >= 8192) tables_.clear();
  const double hb = static_cast<double>(key) * bucket_;
  double S;
  std::function<double(double)> logd;
  double peak;
  if (chi_.family == SpinFamily::uniform) {
    S = chi_.param;
    logd = [hb](double s) { return hb * s; };
    peak = std::abs(hb) * S;
  } else {
    const double beta = chi_.param;
    logd = [hb, beta](double s) { return hb * s - beta * s * s * s * s; };
    const double s0 = std::cbrt(hb / (4.0 * beta));
    peak = logd(s0);
    S = std::abs(s0) + 1.0;
    while (std::max(logd(S), logd(-S)) > peak - 46.0) S *= 1.5;
  }
  Table t;
  t.s.resize(nodes_);
  t.cdf.resize(nodes_);
  const double step = 2.0 * S / static_cast<double>(nodes_ - 1);
  double prev_w = 0.0;
  for (std::size_t j = 0; j < nodes_; ++j) {
    t.s[j] = j + 1 == nodes_ ? S : -S + step * static_cast<double>(j);
    const double w = std::exp(logd(t.s[j]) - peak);
    t.cdf[j] = j == 0 ? 0.0 : t.cdf[j - 1] + 0.5 * (w + prev_w) * step;
    prev_w = w;
  }
  const double total = t.cdf.back();
  for (auto& c : t.cdf) c /= total;
  return tables_.emplace(key, std::move(t)).first->second;
}

double TiltedSpinSampler::sample(double h, double u) {
  const Table& t = table(h);
  auto it = std::upper_bound(t.cdf.begin(), t.cdf.end(), u);
  std::size_t j = static_cast<std::size_t>(it - t.cdf.begin());
  if (j == 0) j = 1;
  if (j >= t.cdf.size()) return t.s.back();
  const double c0 = t.cdf[j - 1], c1 = t.cdf[j];
  const double frac = c1 > c0 ? (u - c0) / (c1 - c0) : 0.5;
  return t.s[j - 1] + frac * (t.s[j] - t.s[j - 1]);
}

double TiltedSpinSampler::table_mean(double h) {
  const Table& t = table(h);
  double mean = 0.0;
  for (std::size_t j = 1; j < t.s.size(); ++j) mean += (t.cdf[j] - t.cdf[j - 1]) * 0.5 * (t.s[j] + t.s[j - 1]);
  return mean;
}

double draw_tilted(const SpinMeasure& chi, double h, double u, TiltedSpinSampler* continuous) {
  if (chi.atomic()) {
    const double a = chi.param;
    const double p_plus = 1.0 / (1.0 + std::exp(-2.0 * a * h));
    return u < p_plus ? a : -a;
  }
  if (continuous == nullptr) throw std::invalid_argument("continuous spin measure needs a tilted sampler");
  return continuous->sample(h, u);
}

ChainState::ChainState(Region region, BoundaryCondition boundary, const ModelSpec& spec, MarkedConfiguration initial,
                       Rng rng, double mirror)
    : region_(std::move(region)),
      boundary_(std::move(boundary)),
      spec_(spec),
      config_(std::move(initial)),
      rng_(rng),
      mirror_(mirror) {
  const double l = spec_.cell_side();
  if (config_.cell_side() != l || boundary_.collar.cell_side() != l) {
    throw std::invalid_argument("configuration cell side must equal R/(2 sqrt(d))");
  }
  if (mirror_ != 1.0 && mirror_ != -1.0) throw std::invalid_argument("mirror factor must be +1 or -1");
  for (const auto& p : config_.points()) {
    if (!region_.contains_point(p.position, l)) throw std::invalid_argument("initial point outside the region");
  }
  volume_ = region_.volume(l);
  region_.bounding_box(l, lo_, hi_);
  energies_ = recompute();
  if (!std::isfinite(energies_.H)) throw std::invalid_argument("initial configuration has infinite energy");
  if (!spec_.chi.atomic()) tilted_.emplace(spec_.chi);
  sweep_length_ = std::max<std::size_t>({config_.size(), region_.cell_count(), 1});
}

void ChainState::set_sweep_length(std::size_t n) {
  if (n < 1) throw std::invalid_argument("sweep length must be at least 1");
  sweep_length_ = n;
}

Energies ChainState::recompute() const { return conditional_energies(config_, boundary_.collar, spec_); }

double ChainState::cache_drift() const {
  const Energies exact = recompute();
  const double dh = std::abs(energies_.H - exact.H) / std::max(1.0, std::abs(exact.H));
  const double de = std::abs(energies_.E - exact.E) / std::max(1.0, std::abs(exact.E));
  return std::max(dh, de);
}

double ChainState::magnetization() const {
  double m = 0.0;
  for (std::size_t idx : config_.cell_points(CellKey::origin(spec_.d))) m += config_[idx].spin;
  return m;
}

ChainState make_chain(const ModelSpec& spec, const Region& region, const BoundaryCondition& boundary,
                      std::size_t start_per_cell, double start_spin, std::uint64_t seed, std::uint64_t chain_index,
                      double mirror) {
  auto initial = subgrid_pattern(spec.d, region.cells(), spec.cell_side(), start_per_cell, start_spin,
                                 spec.potential.range());
  return ChainState(region, boundary, spec, std::move(initial), Rng::for_chain(seed, chain_index), mirror);
}

double log_birth_ratio(double z, double volume, std::size_t n, double dH, double dE) {
  if (!std::isfinite(dH)) return -std::numeric_limits<double>::infinity();
  return std::log(z) + std::log(volume) - std::log(static_cast<double>(n + 1)) - dH - dE;
}

double log_death_ratio(double z, double volume, std::size_t n, double dH, double dE) {
  if (!std::isfinite(dH)) return -std::numeric_limits<double>::infinity();
  return std::log(static_cast<double>(n)) - std::log(z) - std::log(volume) - dH - dE;
}

namespace {

double reflect(double x, double lo, double hi) {
  const double w = hi - lo;
  double y = std::fmod(x - lo, 2.0 * w);
  if (y < 0.0) y += 2.0 * w;
  if (y > w) y = 2.0 * w - y;
  return lo + y;
}

bool accept(Rng& rng, double log_ratio) {
  const double u = rng.uniform01();
  return log_ratio >= 0.0 || (u > 0.0 && std::log(u) < log_ratio);
}

}  // namespace

MoveRecord mcmc_move(ChainState& state, MoveType type, double translate_step) {
  MoveRecord rec;
  rec.type = type;
  auto& config = state.mutable_config();
  const auto& spec = state.spec();
  const auto* collar = &state.boundary().collar;
  Rng& rng = state.rng();
  const auto t = static_cast<std::size_t>(type);
  state.counters().proposed[t]++;
  rec.n_before = config.size();
  rec.volume = state.volume();
  const double m = state.mirror();

  switch (type) {
    case MoveType::birth: {
      if (!(state.volume() > 0.0)) return rec;
      const Position x = uniform_position(state.region(), config.cell_side(), rng);
      const double s = m * spec.chi.sample(rng);
      const LocalTerms lt = local_terms(config, collar, x, spec);
      rec.proposed = true;
      rec.dH = lt.H;
      rec.dE = -s * lt.field;
      rec.log_acceptance = log_birth_ratio(spec.z, state.volume(), config.size(), rec.dH, rec.dE);
      if (accept(rng, rec.log_acceptance)) {
        config.insert({x, s});
        state.mutable_energies().H += rec.dH;
        state.mutable_energies().E += rec.dE;
        rec.accepted = true;
      }
      break;
    }
    case MoveType::death: {
      if (config.empty()) return rec;
      const std::size_t i = rng.index(config.size());
      const LocalTerms lt = local_terms(config, collar, config[i].position, spec, i);
      rec.proposed = true;
      rec.dH = -lt.H;
      rec.dE = config[i].spin * lt.field;
      rec.log_acceptance = log_death_ratio(spec.z, state.volume(), config.size(), rec.dH, rec.dE);
      if (accept(rng, rec.log_acceptance)) {
        config.remove(i);
        state.mutable_energies().H += rec.dH;
        state.mutable_energies().E += rec.dE;
        rec.accepted = true;
      }
      break;
    }
    case MoveType::translate: {
      if (config.empty()) return rec;
      const std::size_t i = rng.index(config.size());
      const double step = translate_step < 0.0 ? config.cell_side() / 4.0 : translate_step;
      const Position x = config[i].position;
      Position y = x;
      for (int k = 0; k < spec.d; ++k) y[k] = reflect(x[k] + step * rng.normal(), state.box_lo()[k], state.box_hi()[k]);
      if (!state.region().contains_point(y, config.cell_side())) return rec;
      const LocalTerms before = local_terms(config, collar, x, spec, i);
      const LocalTerms after = local_terms(config, collar, y, spec, i);
      rec.proposed = true;
      rec.dH = after.H - before.H;
      rec.dE = -config[i].spin * (after.field - before.field);
      rec.log_acceptance = std::isfinite(after.H) ? -rec.dH - rec.dE : -std::numeric_limits<double>::infinity();
      if (accept(rng, rec.log_acceptance)) {
        config.move(i, y);
        state.mutable_energies().H += rec.dH;
        state.mutable_energies().E += rec.dE;
        rec.accepted = true;
      }
      break;
    }
    case MoveType::spin_resample: {
      if (config.empty()) return rec;
      const std::size_t i = rng.index(config.size());
      const double s = m * spec.chi.sample(rng);
      const double h = local_field(config, collar, i, spec);
      rec.proposed = true;
      rec.dE = -(s - config[i].spin) * h;
      rec.log_acceptance = -rec.dE;
      if (accept(rng, rec.log_acceptance)) {
        config.set_spin(i, s);
        state.mutable_energies().E += rec.dE;
        rec.accepted = true;
      }
      break;
    }
  }
  if (rec.accepted) state.counters().accepted[t]++;
  return rec;
}

MoveRecord mcmc_step(ChainState& state, const MoveMix& mix, double translate_step) {
  const double u = state.rng().uniform01();
  MoveType type;
  if (u < mix.birth) type = MoveType::birth;
  else if (u < mix.birth + mix.death) type = MoveType::death;
  else if (u < mix.birth + mix.death + mix.translate) type = MoveType::translate;
  else type = MoveType::spin_resample;
  return mcmc_move(state, type, translate_step);
}

double quenched_spin_sweep(MarkedConfiguration& config, const MarkedConfiguration* boundary, const ModelSpec& spec,
                           Rng& rng, TiltedSpinSampler* continuous, double mirror) {
  double dE = 0.0;
  for (std::size_t i = 0; i < config.size(); ++i) {
    const double h = local_field(config, boundary, i, spec);
    const double u = rng.uniform01();
    const double s = mirror * draw_tilted(spec.chi, mirror * h, u, continuous);
    dE -= (s - config[i].spin) * h;
    config.set_spin(i, s);
  }
  return dE;
}

double ExactSpinMeasure::marginal_plus(std::size_t i) const {
  double p = 0.0;
  for (std::size_t state = 0; state < probability.size(); ++state) {
    if (state >> i & 1U) p += probability[state];
  }
  return p;
}

double ExactSpinMeasure::pair_correlation(std::size_t i, std::size_t j) const {
  double c = 0.0;
  for (std::size_t state = 0; state < probability.size(); ++state) {
    const bool same = ((state >> i) & 1U) == ((state >> j) & 1U);
    c += same ? probability[state] : -probability[state];
  }
  return c;
}

double ExactSpinMeasure::mean_spin(std::size_t i) const { return a * (2.0 * marginal_plus(i) - 1.0); }

ExactSpinMeasure exact_spin_measure(const MarkedConfiguration& positions, const MarkedConfiguration* boundary,
                                    const ModelSpec& spec, bool floor_coupling) {
  const std::size_t n = positions.size();
  if (n > 20) throw std::length_error("exact spin enumeration supports at most 20 points");
  if (!spec.chi.atomic()) throw std::invalid_argument("exact spin enumeration needs two_point spins");
  const double a = spec.chi.param;
  auto phi = [&](double d2) { return floor_coupling ? spec.coupling.floor_value_sq(d2) : spec.coupling.value_sq(d2); };
  std::vector<std::array<double, 3>> bonds;  // i, j, J
  std::vector<double> field(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double J = phi(distance_squared(positions[i].position, positions[j].position)) * a * a;
      if (J != 0.0) bonds.push_back({static_cast<double>(i), static_cast<double>(j), J});
    }
    if (boundary != nullptr) {
      for (const auto& y : boundary->points()) {
        field[i] += a * phi(distance_squared(positions[i].position, y.position)) * y.spin;
      }
    }
  }
  ExactSpinMeasure out;
  out.n = n;
  out.a = a;
  const std::size_t states = std::size_t{1} << n;
  out.probability.resize(states);
  double max_log = -std::numeric_limits<double>::infinity();
  for (std::size_t state = 0; state < states; ++state) {
    double lw = 0.0;
    for (std::size_t i = 0; i < n; ++i) lw += (state >> i & 1U ? 1.0 : -1.0) * field[i];
    for (const auto& b : bonds) {
      const auto i = static_cast<std::size_t>(b[0]);
      const auto j = static_cast<std::size_t>(b[1]);
      lw += (((state >> i) & 1U) == ((state >> j) & 1U) ? 1.0 : -1.0) * b[2];
    }
    out.probability[state] = lw;
    max_log = std::max(max_log, lw);
  }
  double total = 0.0;
  for (auto& p : out.probability) {
    p = std::exp(p - max_log);
    total += p;
  }
  for (auto& p : out.probability) p /= total;
  return out;
}

void sweep_once(ChainState& state, const MoveMix& mix, double translate_step, bool spin_sweep) {
  for (std::size_t k = 0; k < state.sweep_length(); ++k) mcmc_step(state, mix, translate_step);
  if (spin_sweep) {
    state.mutable_energies().E += quenched_spin_sweep(state.mutable_config(), &state.boundary().collar, state.spec(),
                                                      state.rng(), state.tilted(), state.mirror());
  }
  // Without a collar the target is invariant under flipping every spin, so a
  // global flip with probability 1/2 is an exact move between the two sectors.
  if (state.boundary().collar.size() == 0 && state.rng().uniform01() < 0.5) {
    MarkedConfiguration& c = state.mutable_config();
    for (std::size_t i = 0; i < c.size(); ++i) c.set_spin(i, -c[i].spin);
  }
}

Trace run_chain(ChainState& state, const RunOptions& options) {
  Trace trace;
  if (options.sweeps == 0) return trace;
  if (options.burn_in >= options.sweeps) throw std::invalid_argument("burn_in must be smaller than sweeps");
  if (options.thin < 1) throw std::invalid_argument("thin must be at least 1");
  options.mix.validate();
  const auto& region = state.region();
  const CellKey origin = CellKey::origin(state.spec().d);
  for (std::size_t sweep = 1; sweep <= options.sweeps; ++sweep) {
    sweep_once(state, options.mix, options.translate_step, options.spin_sweep);
    if (options.resync_every != 0 && sweep % options.resync_every == 0) {
      trace.max_drift = std::max(trace.max_drift, state.cache_drift());
      state.resync();
    }
    if (sweep > options.burn_in && (sweep - options.burn_in) % options.thin == 0) {
      const auto& cfg = state.config();
      trace.rows.push_back({sweep, cfg.size(), state.magnetization(), state.energies().H, state.energies().E,
                            cfg.count_in_cell(origin)});
      if (options.record_cells) {
        std::vector<std::uint32_t> counts;
        counts.reserve(region.cell_count());
        for (const auto& k : region.cells()) counts.push_back(static_cast<std::uint32_t>(cfg.count_in_cell(k)));
        trace.cell_counts.push_back(std::move(counts));
      }
    }
  }
  trace.counters = state.counters();
  return trace;
}

void write_trace_csv(std::ostream& out, const Trace& trace) {
  out << "sweep,N,M,H,E,cell0_count\n";
  for (const auto& r : trace.rows) {
    out << r.sweep << ',' << r.N << ',' << format_double(r.M) << ',' << format_double(r.H) << ','
        << format_double(r.E) << ',' << r.cell0_count << '\n';
  }
}

}  // namespace ferrolab
