#ifndef FERROLAB_SAMPLER_HPP
#define FERROLAB_SAMPLER_HPP

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <unordered_map>
#include <vector>

#include "ferrolab/config_space.hpp"
#include "ferrolab/interaction.hpp"
#include "ferrolab/rng.hpp"

namespace ferrolab {

MarkedConfiguration sample_poisson_marked(double z, const Region& region, double cell_side, const SpinMeasure& chi,
                                          Rng& rng);

// Uniform position in the region (cells have equal volume).
Position uniform_position(const Region& region, double cell_side, Rng& rng);

// Cells outside the region whose Euclidean gap to it is at most `range`.
std::vector<CellKey> collar_cells(const Region& region, double cell_side, double range);

// n points per cell on a centered sub-grid of each listed cell, with spin `spin`.
// Throws when the sub-grid spacing would not exceed min_spacing.
MarkedConfiguration subgrid_pattern(int dim, std::span<const CellKey> cells, double cell_side, std::size_t n,
                                    double spin, double min_spacing);

enum class BoundaryKind { plus, minus, free, custom };

const char* boundary_name(BoundaryKind kind);

struct BoundaryCondition {
  BoundaryKind kind = BoundaryKind::free;
  MarkedConfiguration collar{1, 1.0};
  std::size_t n_star = 0;
  double a = 0.0;

  // Requires n_star >= 1 and a > 0.
  static BoundaryCondition signed_class(const Region& region, const ModelSpec& spec, std::size_t n_star, double a,
                                        int sign);
  static BoundaryCondition free_boundary(const ModelSpec& spec);
  static BoundaryCondition custom(MarkedConfiguration collar);

  // Same positions, spins negated; plus and minus swap.
  BoundaryCondition mirrored() const;
  // N >= n_star in every collar cell and every spin equal to +a (plus) or -a (minus).
  bool satisfies_class(const Region& region, const ModelSpec& spec) const;
};

enum class MoveType : int { birth = 0, death = 1, translate = 2, spin_resample = 3 };

struct MoveMix {
  double birth = 0.35;
  double death = 0.35;
  double translate = 0.20;
  double spin_resample = 0.10;

  void validate() const;
};

struct MoveCounters {
  std::array<std::uint64_t, 4> proposed{};
  std::array<std::uint64_t, 4> accepted{};
};

// Heat-bath sampler for exp(h s) chi(ds) with continuous chi, via tabulated inverse
// CDFs on 2048 nodes, rebuilt per field bucket of width 1e-3.
class TiltedSpinSampler {
 public:
  explicit TiltedSpinSampler(SpinMeasure chi, std::size_t nodes = 2048, double bucket = 1e-3);
  double sample(double h, double u);
  // Mean of the tabulated law, for tests.
  double table_mean(double h);
  std::size_t cached_tables() const { return tables_.size(); }

 private:
  struct Table {
    std::vector<double> s;
    std::vector<double> cdf;
  };
  const Table& table(double h);

  SpinMeasure chi_;
  std::size_t nodes_;
  double bucket_;
  std::unordered_map<long long, Table> tables_;
};

// Draw from the tilted law exp(h s) chi(ds). Two-point uses the closed form;
// the continuous families use `continuous` (required for them).
double draw_tilted(const SpinMeasure& chi, double h, double u, TiltedSpinSampler* continuous);

class ChainState {
 public:
  // `mirror` = -1 flips every spin proposal so that a mirrored start and
  // boundary yield the exact spin-flip image of the +1 run.
  ChainState(Region region, BoundaryCondition boundary, const ModelSpec& spec, MarkedConfiguration initial, Rng rng,
             double mirror = 1.0);

  const Region& region() const { return region_; }
  const MarkedConfiguration& config() const { return config_; }
  MarkedConfiguration& mutable_config() { return config_; }
  const BoundaryCondition& boundary() const { return boundary_; }
  const ModelSpec& spec() const { return spec_; }
  const Energies& energies() const { return energies_; }
  Energies& mutable_energies() { return energies_; }
  Rng& rng() { return rng_; }
  double mirror() const { return mirror_; }
  double volume() const { return volume_; }
  const Position& box_lo() const { return lo_; }
  const Position& box_hi() const { return hi_; }
  MoveCounters& counters() { return counters_; }
  const MoveCounters& counters() const { return counters_; }
  TiltedSpinSampler* tilted() { return tilted_ ? &*tilted_ : nullptr; }
  // Moves per sweep. Fixed for the life of the chain: a count read off the
  // current state would break stationarity.
  std::size_t sweep_length() const { return sweep_length_; }
  void set_sweep_length(std::size_t n);

  Energies recompute() const;
  // Relative disagreement between cached and recomputed energies.
  double cache_drift() const;
  void resync() { energies_ = recompute(); }

  // Sum of spins in the origin cell.
  double magnetization() const;

 private:
  Region region_;
  BoundaryCondition boundary_;
  ModelSpec spec_;
  MarkedConfiguration config_;
  Rng rng_;
  double mirror_;
  double volume_;
  Position lo_, hi_;
  Energies energies_;
  MoveCounters counters_;
  std::optional<TiltedSpinSampler> tilted_;
  std::size_t sweep_length_ = 1;
};

// Chain on `region` started from the deterministic sub-grid pattern with
// start_per_cell points per cell and spins start_spin; RNG stream from
// (seed, chain_index).
ChainState make_chain(const ModelSpec& spec, const Region& region, const BoundaryCondition& boundary,
                      std::size_t start_per_cell, double start_spin, std::uint64_t seed, std::uint64_t chain_index,
                      double mirror = 1.0);

struct MoveRecord {
  MoveType type = MoveType::birth;
  bool accepted = false;
  // Feasible proposal (birth position inside the region, point available, ...).
  bool proposed = false;
  double dH = 0.0;
  double dE = 0.0;
  double log_acceptance = 0.0;
  std::size_t n_before = 0;
  double volume = 0.0;
};

// Birth x, sigma into a configuration with n points; log of z V/(n+1) e^{-dH-dE}.
double log_birth_ratio(double z, double volume, std::size_t n, double dH, double dE);
// Death from n points; log of n/(z V) e^{-dH-dE}.
double log_death_ratio(double z, double volume, std::size_t n, double dH, double dE);

// translate_step < 0 selects l/4.
MoveRecord mcmc_step(ChainState& state, const MoveMix& mix, double translate_step = -1.0);
MoveRecord mcmc_move(ChainState& state, MoveType type, double translate_step);

// Systematic single-site heat-bath sweep over the spins at fixed positions.
// Returns the change of the spin energy.
double quenched_spin_sweep(MarkedConfiguration& config, const MarkedConfiguration* boundary, const ModelSpec& spec,
                           Rng& rng, TiltedSpinSampler* continuous, double mirror = 1.0);

// Exact law of the two-point spin layer on fixed positions (N <= 20).
struct ExactSpinMeasure {
  std::size_t n = 0;
  double a = 1.0;
  std::vector<double> probability;  // indexed by bit pattern, bit i set means sigma_i = +a

  double marginal_plus(std::size_t i) const;
  // E[s_i s_j] for the rescaled spins s = sigma / a.
  double pair_correlation(std::size_t i, std::size_t j) const;
  double mean_spin(std::size_t i) const;
};

ExactSpinMeasure exact_spin_measure(const MarkedConfiguration& positions, const MarkedConfiguration* boundary,
                                    const ModelSpec& spec, bool floor_coupling = false);

struct RunOptions {
  std::size_t sweeps = 0;
  std::size_t burn_in = 0;
  std::size_t thin = 1;
  MoveMix mix;
  double translate_step = -1.0;  // negative selects l/4
  bool spin_sweep = true;
  std::size_t resync_every = 10;  // sweeps, 0 disables
  bool record_cells = false;
};

// One sweep: sweep_length() mcmc steps, then a quenched spin sweep if requested,
// then a global spin flip with probability 1/2 when the boundary has no points.
void sweep_once(ChainState& state, const MoveMix& mix, double translate_step, bool spin_sweep);

struct TraceRow {
  std::size_t sweep = 0;
  std::size_t N = 0;
  double M = 0.0;
  double H = 0.0;
  double E = 0.0;
  std::size_t cell0_count = 0;
};

struct Trace {
  std::vector<TraceRow> rows;
  // Per recorded row, occupation of each region cell in region order.
  std::vector<std::vector<std::uint32_t>> cell_counts;
  MoveCounters counters;
  double max_drift = 0.0;
};

Trace run_chain(ChainState& state, const RunOptions& options);

void write_trace_csv(std::ostream& out, const Trace& trace);

}  // namespace ferrolab

#endif  // FERROLAB_SAMPLER_HPP
