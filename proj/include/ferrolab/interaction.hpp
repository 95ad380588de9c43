#ifndef FERROLAB_INTERACTION_HPP
#define FERROLAB_INTERACTION_HPP

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "ferrolab/config_space.hpp"
#include "ferrolab/rng.hpp"

namespace ferrolab {

inline constexpr double kInfiniteEnergy = std::numeric_limits<double>::infinity();

enum class PotentialFamily { singular_truncated, zero };

// Phi(x) = c(|x|^{-d(1+eps)} - r^{-d(1+eps)}) on 0 < |x| <= r, zero beyond r,
// +infinity at the origin.
struct PositionPotential {
  PotentialFamily family = PotentialFamily::singular_truncated;
  double c = 1.0;
  double eps = 2.0;
  double r = 0.35;

  static PositionPotential singular_truncated(double c, double eps, double r);
  static PositionPotential zero();

  double value_sq(double dist2, int d) const;
  double range() const { return family == PotentialFamily::zero ? 0.0 : r; }
  // Exact integral of Phi_+ over |x| >= delta in R^d.
  double tail_integral(double delta, int d) const;
  // Same integral by adaptive radial quadrature.
  double tail_integral_quadrature(double delta, int d) const;
  std::string name() const;
};

// phi(x) = phi_star on |x| <= R (indicator profile), or a step table on (0, R].
struct SpinCoupling {
  double phi_star = 2.0;
  double R = 2.5;
  // Optional step profile: value table_values[i] on (table_radii[i-1], table_radii[i]].
  std::vector<double> table_radii;
  std::vector<double> table_values;

  static SpinCoupling indicator(double phi_star, double R);
  static SpinCoupling tabulated(double phi_star, std::vector<double> radii, std::vector<double> values);

  double value(double dist) const;
  double value_sq(double dist2) const;
  // phi_star times the indicator of the closed ball B_R.
  double floor_value_sq(double dist2) const { return dist2 <= R * R ? phi_star : 0.0; }
  double phi_max() const;
  bool has_table() const { return !table_radii.empty(); }
};

enum class SpinFamily { two_point, uniform, quartic };

// Symmetric single-spin law: (delta_{-a} + delta_a)/2, uniform on [-b, b], or
// density proportional to exp(-beta s^4).
struct SpinMeasure {
  SpinFamily family = SpinFamily::two_point;
  double param = 1.0;

  static SpinMeasure two_point(double a);
  static SpinMeasure uniform(double b);
  static SpinMeasure quartic(double beta);

  double sample(Rng& rng) const;
  bool atomic() const { return family == SpinFamily::two_point; }
  double mass_at_zero() const { return 0.0; }
  // chi([x, inf)) and chi([0, x]) for x >= 0; atoms at the endpoints count.
  double upper_tail(double x) const;
  double mass_zero_to(double x) const;
  // Largest |s| in the support; infinity for quartic.
  double support_bound() const;
  // Lebesgue density of the continuous families.
  double density(double s) const;
  double abs_moment(double k) const;
  // Integral of exp(kappa |s|^u) d chi; infinity when divergent.
  double exp_moment(double kappa, double u) const;
  std::string name() const;
};

struct ModelSpec {
  int d = 2;
  PositionPotential potential;
  SpinCoupling coupling;
  SpinMeasure chi;
  double z = 1.0;
  int v = 3;
  int w = 4;
  double u = 5.0;
  double kappa = 1.0;
  // Margin in the superstability exponent v + eps.
  double eps = 1.0;

  static ModelSpec defaults();

  double cell_side() const;
  double interaction_range() const;
};

double pair_energy(const Position& x, double sx, const Position& y, double sy, const ModelSpec& spec);

double position_energy(const MarkedConfiguration& config, const ModelSpec& spec);
double spin_energy(const MarkedConfiguration& config, const ModelSpec& spec);

struct Energies {
  double H = 0.0;
  double E = 0.0;
  double total() const { return H + E; }
};

// H(eta | gamma) and E(sigma_eta | sigma_gamma). Throws when eta and gamma share a position.
Energies conditional_energies(const MarkedConfiguration& inside, const MarkedConfiguration& boundary,
                              const ModelSpec& spec);

// Position energy and spin field felt by a point at x from inside (skipping
// index `skip`) and boundary points. Field h = sum phi(x - y) sigma_y.
struct LocalTerms {
  double H = 0.0;
  double field = 0.0;
};

LocalTerms local_terms(const MarkedConfiguration& inside, const MarkedConfiguration* boundary, const Position& x,
                       const ModelSpec& spec, std::optional<std::size_t> skip = std::nullopt);

// Field only, with either the full coupling or the floor coupling.
double local_field(const MarkedConfiguration& inside, const MarkedConfiguration* boundary, std::size_t i,
                   const ModelSpec& spec, bool floor_coupling = false);

struct ValidationClause {
  std::string id;
  std::string description;
  bool passed = false;
  std::string detail;
  // Informational clauses do not enter the overall verdict.
  bool informational = false;
};

struct SuperstabilityFit {
  double A_fit = 0.0;
  double B_fit = 0.0;
  bool pass = false;
  std::size_t trials = 0;
  std::size_t recheck_trials = 0;
  std::size_t violations = 0;
};

struct ValidationReport {
  std::vector<ValidationClause> clauses;
  // (delta, C_delta closed form, C_delta quadrature)
  struct CDeltaRow {
    double delta;
    double closed_form;
    double quadrature;
  };
  std::vector<CDeltaRow> c_delta;
  std::optional<SuperstabilityFit> superstability;

  bool passed() const;
  const ValidationClause* find(const std::string& id) const;
  bool clause_passed(const std::string& id) const;
};

struct ValidationOptions {
  std::vector<double> deltas;
  std::size_t symmetry_samples = 20000;
  std::size_t superstability_trials = 400;
  std::uint64_t seed = 0x5eed;
};

ValidationReport validate_model(const ModelSpec& spec, const ValidationOptions& options = {});

// Sample of the functional inequality H >= A S - B N, S = sum_k N_k^{v+eps}.
struct SuperstabilitySample {
  double H = 0.0;
  double S = 0.0;
  double N = 0.0;
  std::size_t max_cell_count = 0;
};

SuperstabilitySample superstability_sample(const MarkedConfiguration& config, const ModelSpec& spec);
SuperstabilityFit validate_superstability(const ModelSpec& spec, std::size_t trials, Rng& rng);
bool superstability_holds(const SuperstabilitySample& s, double A, double B);

}  // namespace ferrolab

#endif  // FERROLAB_INTERACTION_HPP
