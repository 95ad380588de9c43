#include "ferrolab/interaction.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>

namespace ferrolab {

namespace {

double unit_sphere_area(int d) {
  return 2.0 * std::pow(std::numbers::pi, 0.5 * d) / std::tgamma(0.5 * d);
}

std::string fmt(double x) { return format_double(x); }

}  // namespace

PositionPotential PositionPotential::singular_truncated(double c, double eps, double r) {
  if (!(c > 0.0) || !(eps > 0.0) || !(r > 0.0)) {
    throw std::invalid_argument("singular_truncated needs c > 0, eps > 0, r > 0");
  }
  return PositionPotential{PotentialFamily::singular_truncated, c, eps, r};
}

PositionPotential PositionPotential::zero() { return PositionPotential{PotentialFamily::zero, 0.0, 0.0, 0.0}; }

double PositionPotential::value_sq(double dist2, int d) const {
  if (dist2 == 0.0) return kInfiniteEnergy;
  if (family == PotentialFamily::zero || dist2 > r * r) return 0.0;
  const double p = d * (1.0 + eps);
  return c * (std::pow(dist2, -0.5 * p) - std::pow(r, -p));
}

double PositionPotential::tail_integral(double delta, int d) const {
  if (family == PotentialFamily::zero) return 0.0;
  if (!(delta > 0.0)) return kInfiniteEnergy;
  if (delta >= r) return 0.0;
  const double de = d * eps;
  const double p = d * (1.0 + eps);
  const double first = (std::pow(delta, -de) - std::pow(r, -de)) / de;
  const double second = std::pow(r, -p) * (std::pow(r, d) - std::pow(delta, d)) / d;
  return c * unit_sphere_area(d) * (first - second);
}

double PositionPotential::tail_integral_quadrature(double delta, int d) const {
  if (family == PotentialFamily::zero) return 0.0;
  if (!(delta > 0.0)) return kInfiniteEnergy;
  if (delta >= r) return 0.0;
  const double p = d * (1.0 + eps);
  const double rp = std::pow(r, -p);
  // Radial integrand in t = log s, which tames the singular end.
  auto f = [&](double t) {
    const double s = std::exp(t);
    return c * (std::pow(s, -p) - rp) * std::pow(s, d);
  };
  const double value = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
      f, std::log(delta), std::log(r), 20, 1e-13);
  return unit_sphere_area(d) * value;
}

std::string PositionPotential::name() const {
  if (family == PotentialFamily::zero) return "zero";
  return "singular_truncated(c=" + fmt(c) + ", eps=" + fmt(eps) + ", r=" + fmt(r) + ")";
}

SpinCoupling SpinCoupling::indicator(double phi_star, double R) {
  if (!(phi_star >= 0.0) || !(R > 0.0)) throw std::invalid_argument("coupling needs phi_star >= 0 and R > 0");
  SpinCoupling c;
  c.phi_star = phi_star;
  c.R = R;
  return c;
}

SpinCoupling SpinCoupling::tabulated(double phi_star, std::vector<double> radii, std::vector<double> values) {
  if (radii.empty() || radii.size() != values.size()) {
    throw std::invalid_argument("coupling table needs matching non-empty radii and values");
  }
  for (std::size_t i = 1; i < radii.size(); ++i) {
    if (!(radii[i] > radii[i - 1])) throw std::invalid_argument("coupling table radii must increase");
  }
  if (!(radii.front() > 0.0)) throw std::invalid_argument("coupling table radii must be positive");
  SpinCoupling c;
  c.phi_star = phi_star;
  c.R = radii.back();
  c.table_radii = std::move(radii);
  c.table_values = std::move(values);
  return c;
}

double SpinCoupling::value(double dist) const {
  if (dist > R) return 0.0;
  if (table_radii.empty()) return phi_star;
  auto it = std::lower_bound(table_radii.begin(), table_radii.end(), dist);
  return table_values[static_cast<std::size_t>(it - table_radii.begin())];
}

double SpinCoupling::value_sq(double dist2) const {
  if (dist2 > R * R) return 0.0;
  if (table_radii.empty()) return phi_star;
  return value(std::sqrt(dist2));
}

double SpinCoupling::phi_max() const {
  if (table_values.empty()) return phi_star;
  return *std::max_element(table_values.begin(), table_values.end());
}

SpinMeasure SpinMeasure::two_point(double a) {
  if (!(a > 0.0)) throw std::invalid_argument("two_point needs a > 0");
  return SpinMeasure{SpinFamily::two_point, a};
}

SpinMeasure SpinMeasure::uniform(double b) {
  if (!(b > 0.0)) throw std::invalid_argument("uniform needs b > 0");
  return SpinMeasure{SpinFamily::uniform, b};
}

SpinMeasure SpinMeasure::quartic(double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("quartic needs beta > 0");
  return SpinMeasure{SpinFamily::quartic, beta};
}

double SpinMeasure::sample(Rng& rng) const {
  switch (family) {
    case SpinFamily::two_point:
      return rng.uniform01() < 0.5 ? -param : param;
    case SpinFamily::uniform:
      return rng.uniform(-param, param);
    case SpinFamily::quartic: {
      const double sign = rng.uniform01() < 0.5 ? -1.0 : 1.0;
      return sign * std::pow(rng.gamma(0.25) / param, 0.25);
    }
  }
  return 0.0;
}

double SpinMeasure::upper_tail(double x) const {
  x = std::max(x, 0.0);
  switch (family) {
    case SpinFamily::two_point:
      return x <= param ? 0.5 : 0.0;
    case SpinFamily::uniform:
      return x <= param ? (param - x) / (2.0 * param) : 0.0;
    case SpinFamily::quartic:
      if (x == 0.0) return 0.5;
      return 0.5 * boost::math::gamma_q(0.25, param * std::pow(x, 4));
  }
  return 0.0;
}

double SpinMeasure::mass_zero_to(double x) const {
  x = std::max(x, 0.0);
  switch (family) {
    case SpinFamily::two_point:
      return x >= param ? 0.5 : 0.0;
    case SpinFamily::uniform:
      return std::min(x, param) / (2.0 * param);
    case SpinFamily::quartic:
      if (x == 0.0) return 0.0;
      return 0.5 * boost::math::gamma_p(0.25, param * std::pow(x, 4));
  }
  return 0.0;
}

double SpinMeasure::support_bound() const {
  return family == SpinFamily::quartic ? std::numeric_limits<double>::infinity() : param;
}

double SpinMeasure::density(double s) const {
  switch (family) {
    case SpinFamily::two_point:
      return 0.0;
    case SpinFamily::uniform:
      return std::abs(s) <= param ? 0.5 / param : 0.0;
    case SpinFamily::quartic: {
      const double norm = 2.0 * std::tgamma(1.25) * std::pow(param, -0.25);
      return std::exp(-param * s * s * s * s) / norm;
    }
  }
  return 0.0;
}

double SpinMeasure::abs_moment(double k) const {
  switch (family) {
    case SpinFamily::two_point:
      return std::pow(param, k);
    case SpinFamily::uniform:
      return std::pow(param, k) / (k + 1.0);
    case SpinFamily::quartic:
      return std::tgamma((k + 1.0) / 4.0) * std::pow(param, -k / 4.0) / std::tgamma(0.25);
  }
  return 0.0;
}

double SpinMeasure::exp_moment(double kappa, double u) const {
  using boost::math::quadrature::gauss_kronrod;
  switch (family) {
    case SpinFamily::two_point:
      return std::exp(kappa * std::pow(param, u));
    case SpinFamily::uniform: {
      auto f = [&](double s) { return std::exp(kappa * std::pow(s, u)); };
      return gauss_kronrod<double, 61>::integrate(f, 0.0, param, 15, 1e-12) / param;
    }
    case SpinFamily::quartic: {
      if (u > 4.0 || (u == 4.0 && kappa >= param)) return std::numeric_limits<double>::infinity();
      if (u == 4.0) return std::pow(param / (param - kappa), 0.25);
      auto f = [&](double s) { return std::exp(kappa * std::pow(s, u) - param * std::pow(s, 4)); };
      const double integral =
          gauss_kronrod<double, 61>::integrate(f, 0.0, std::numeric_limits<double>::infinity(), 15, 1e-12);
      return integral / (std::tgamma(1.25) * std::pow(param, -0.25));
    }
  }
  return 0.0;
}

std::string SpinMeasure::name() const {
  switch (family) {
    case SpinFamily::two_point:
      return "two_point(" + fmt(param) + ")";
    case SpinFamily::uniform:
      return "uniform(" + fmt(param) + ")";
    case SpinFamily::quartic:
      return "quartic(" + fmt(param) + ")";
  }
  return "?";
}

ModelSpec ModelSpec::defaults() {
  ModelSpec spec;
  spec.d = 2;
  spec.potential = PositionPotential::singular_truncated(1.0, 2.0, 0.35);
  spec.coupling = SpinCoupling::indicator(2.0, 2.5);
  spec.chi = SpinMeasure::two_point(1.0);
  spec.z = 1.0;
  return spec;
}

double ModelSpec::cell_side() const { return coupling.R / (2.0 * std::sqrt(static_cast<double>(d))); }

double ModelSpec::interaction_range() const { return std::max(potential.range(), coupling.R); }

double pair_energy(const Position& x, double sx, const Position& y, double sy, const ModelSpec& spec) {
  if (x == y) throw std::invalid_argument("pair energy of coincident positions");
  const double d2 = distance_squared(x, y);
  return spec.potential.value_sq(d2, spec.d) - spec.coupling.value_sq(d2) * sx * sy;
}

double position_energy(const MarkedConfiguration& config, const ModelSpec& spec) {
  const double range = spec.potential.range();
  if (range <= 0.0) return 0.0;
  double H = 0.0;
  for (std::size_t i = 0; i < config.size(); ++i) {
    config.for_each_within(config[i].position, range, [&](std::size_t j, double d2) {
      if (j > i) H += spec.potential.value_sq(d2, spec.d);
    });
  }
  return H;
}

double spin_energy(const MarkedConfiguration& config, const ModelSpec& spec) {
  double E = 0.0;
  for (std::size_t i = 0; i < config.size(); ++i) {
    const double si = config[i].spin;
    config.for_each_within(config[i].position, spec.coupling.R, [&](std::size_t j, double d2) {
      if (j > i) E -= spec.coupling.value_sq(d2) * si * config[j].spin;
    });
  }
  return E;
}

Energies conditional_energies(const MarkedConfiguration& inside, const MarkedConfiguration& boundary,
                              const ModelSpec& spec) {
  for (const auto& p : boundary.points()) {
    if (inside.contains_position(p.position)) {
      throw std::invalid_argument("inside and boundary configurations share a position");
    }
  }
  Energies e{position_energy(inside, spec), spin_energy(inside, spec)};
  const double r = spec.potential.range();
  const double R = spec.coupling.R;
  const double range = std::max(r, R);
  for (const auto& p : inside.points()) {
    boundary.for_each_within(p.position, range, [&](std::size_t j, double d2) {
      if (d2 <= r * r) e.H += spec.potential.value_sq(d2, spec.d);
      if (d2 <= R * R) e.E -= spec.coupling.value_sq(d2) * p.spin * boundary[j].spin;
    });
  }
  return e;
}

LocalTerms local_terms(const MarkedConfiguration& inside, const MarkedConfiguration* boundary, const Position& x,
                       const ModelSpec& spec, std::optional<std::size_t> skip) {
  LocalTerms t;
  const double r = spec.potential.range();
  const double R = spec.coupling.R;
  const double r2 = r * r;
  const double R2 = R * R;
  const double range = std::max(r, R);
  auto visit = [&](const MarkedConfiguration& cfg, bool is_inside) {
    cfg.for_each_within(x, range, [&](std::size_t j, double d2) {
      if (is_inside && skip && j == *skip) return;
      if (d2 == 0.0) {
        t.H = kInfiniteEnergy;
        return;
      }
      if (d2 <= r2) t.H += spec.potential.value_sq(d2, spec.d);
      if (d2 <= R2) t.field += spec.coupling.value_sq(d2) * cfg[j].spin;
    });
  };
  visit(inside, true);
  if (boundary != nullptr) visit(*boundary, false);
  return t;
}

double local_field(const MarkedConfiguration& inside, const MarkedConfiguration* boundary, std::size_t i,
                   const ModelSpec& spec, bool floor_coupling) {
  const Position& x = inside[i].position;
  const double R = spec.coupling.R;
  double h = 0.0;
  auto visit = [&](const MarkedConfiguration& cfg, bool is_inside) {
    cfg.for_each_within(x, R, [&](std::size_t j, double d2) {
      if (is_inside && j == i) return;
      const double phi = floor_coupling ? spec.coupling.floor_value_sq(d2) : spec.coupling.value_sq(d2);
      h += phi * cfg[j].spin;
    });
  };
  visit(inside, true);
  if (boundary != nullptr) visit(*boundary, false);
  return h;
}

bool ValidationReport::passed() const {
  for (const auto& c : clauses) {
    if (!c.informational && !c.passed) return false;
  }
  return true;
}

const ValidationClause* ValidationReport::find(const std::string& id) const {
  for (const auto& c : clauses) {
    if (c.id == id) return &c;
  }
  return nullptr;
}

bool ValidationReport::clause_passed(const std::string& id) const {
  const auto* c = find(id);
  return c != nullptr && c->passed;
}

SuperstabilitySample superstability_sample(const MarkedConfiguration& config, const ModelSpec& spec) {
  SuperstabilitySample s;
  s.H = position_energy(config, spec);
  s.N = static_cast<double>(config.size());
  for (const auto& k : config.occupied_cells()) {
    const std::size_t n = config.count_in_cell(k);
    s.S += std::pow(static_cast<double>(n), spec.v + spec.eps);
    s.max_cell_count = std::max(s.max_cell_count, n);
  }
  return s;
}

bool superstability_holds(const SuperstabilitySample& s, double A, double B) {
  return s.H >= A * s.S - B * s.N;
}

namespace {

// Smallest count that forces a pair closer than r inside one cell.
std::size_t dense_count(const ModelSpec& spec) {
  const double l = spec.cell_side();
  const double r = spec.potential.range();
  if (r <= 0.0) return 2;
  const double m = std::ceil(l * std::sqrt(static_cast<double>(spec.d)) / r);
  return static_cast<std::size_t>(std::pow(m, spec.d)) + 1;
}

Position point_in_cell(const CellKey& k, double l, Rng& rng, const Position* cluster_center, double spread) {
  Position p = Position::zeros(k.dim);
  for (int i = 0; i < k.dim; ++i) {
    const double lo = l * (k[i] - 0.5);
    const double hi = l * (k[i] + 0.5);
    double x;
    do {
      x = cluster_center != nullptr ? (*cluster_center)[i] + spread * rng.normal() : rng.uniform(lo, hi);
    } while (!(x >= lo && x < hi));
    p[i] = x;
  }
  return p;
}

MarkedConfiguration superstability_trial(const ModelSpec& spec, Rng& rng, bool dense, std::size_t n_dense) {
  const double l = spec.cell_side();
  MarkedConfiguration config(spec.d, l);
  std::vector<CellKey> cells;
  if (dense) {
    cells.push_back(CellKey::origin(spec.d));
  } else {
    const std::size_t n_cells = 1 + rng.index(3);
    while (cells.size() < n_cells) {
      CellKey k = CellKey::origin(spec.d);
      for (int i = 0; i < spec.d; ++i) k[i] = static_cast<int>(rng.index(3)) - 1;
      if (std::find(cells.begin(), cells.end(), k) == cells.end()) cells.push_back(k);
    }
  }
  const bool clustered = rng.bernoulli(0.5);
  for (const auto& k : cells) {
    const std::size_t n = dense ? n_dense + rng.index(n_dense + 1) : 1 + rng.index(n_dense + 4);
    Position center = point_in_cell(k, l, rng, nullptr, 0.0);
    std::size_t placed = 0;
    while (placed < n) {
      MarkedPoint p{point_in_cell(k, l, rng, clustered ? &center : nullptr, l / 6.0), 0.0};
      if (config.contains_position(p.position)) continue;
      config.insert(p);
      ++placed;
    }
  }
  return config;
}

}  // namespace

SuperstabilityFit validate_superstability(const ModelSpec& spec, std::size_t trials, Rng& rng) {
  if (trials < 1) throw std::invalid_argument("superstability fit needs at least one trial");
  const std::size_t n_dense = dense_count(spec);
  std::vector<SuperstabilitySample> fit_samples;
  fit_samples.reserve(trials + n_dense);
  for (std::size_t t = 0; t < trials; ++t) {
    fit_samples.push_back(superstability_sample(superstability_trial(spec, rng, t % 2 == 0, n_dense), spec));
  }
  // Lattice probes: n^d points spread evenly over one cell.
  const double l = spec.cell_side();
  for (std::size_t n = 1; std::pow(static_cast<double>(n), spec.d) < static_cast<double>(n_dense); ++n) {
    MarkedConfiguration config(spec.d, l);
    std::vector<int> idx(static_cast<std::size_t>(spec.d), 0);
    while (true) {
      Position p = Position::zeros(spec.d);
      for (int i = 0; i < spec.d; ++i) p[i] = l * ((idx[static_cast<std::size_t>(i)] + 0.5) / n - 0.5);
      config.insert({p, 0.0});
      int axis = 0;
      while (axis < spec.d) {
        if (++idx[static_cast<std::size_t>(axis)] < static_cast<int>(n)) break;
        idx[static_cast<std::size_t>(axis)] = 0;
        ++axis;
      }
      if (axis == spec.d) break;
    }
    fit_samples.push_back(superstability_sample(config, spec));
  }

  SuperstabilityFit fit;
  fit.trials = fit_samples.size();
  double min_ratio = std::numeric_limits<double>::infinity();
  for (const auto& s : fit_samples) {
    if (s.max_cell_count >= n_dense && s.S > 0.0) min_ratio = std::min(min_ratio, s.H / s.S);
  }
  fit.A_fit = std::isfinite(min_ratio) ? 0.5 * min_ratio : 0.0;
  // Sparse cells carry no guaranteed repulsion; bound their share analytically.
  double B = fit.A_fit * std::pow(static_cast<double>(n_dense - 1), spec.v + spec.eps - 1.0);
  for (const auto& s : fit_samples) {
    if (s.N > 0.0) B = std::max(B, (fit.A_fit * s.S - s.H) / s.N);
  }
  fit.B_fit = std::max(B, fit.A_fit);

  for (const auto& s : fit_samples) {
    if (!superstability_holds(s, fit.A_fit, fit.B_fit)) ++fit.violations;
  }
  fit.recheck_trials = trials;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto s = superstability_sample(superstability_trial(spec, rng, t % 2 == 0, n_dense), spec);
    if (!superstability_holds(s, fit.A_fit, fit.B_fit)) ++fit.violations;
  }
  fit.pass = fit.A_fit > 0.0 && fit.violations == 0;
  return fit;
}

ValidationReport validate_model(const ModelSpec& spec, const ValidationOptions& options) {
  ValidationReport report;
  auto add = [&](std::string id, std::string description, bool passed, std::string detail,
                 bool informational = false) {
    report.clauses.push_back({std::move(id), std::move(description), passed, std::move(detail), informational});
  };
  const auto& pot = spec.potential;
  const auto& cpl = spec.coupling;

  add("dimension", "1 <= d <= " + std::to_string(kMaxDim), spec.d >= 1 && spec.d <= kMaxDim,
      "d=" + std::to_string(spec.d));
  add("activity", "z > 0", spec.z > 0.0 && std::isfinite(spec.z), "z=" + fmt(spec.z));

  {
    const bool ok = pot.family == PotentialFamily::zero ||
                    (pot.r > 0.0 && std::isfinite(pot.r) && pot.c > 0.0 && pot.eps > 0.0);
    add("M1_finite_range", "Phi bounded below, Phi_+ = 0 beyond r", ok, pot.name());
  }

  {
    std::vector<double> deltas = options.deltas;
    if (deltas.empty() && pot.range() > 0.0) deltas = {pot.range() / 2.0, pot.range() / 4.0};
    bool ok = true;
    std::ostringstream detail;
    for (double delta : deltas) {
      const double exact = pot.tail_integral(delta, spec.d);
      const double quad = pot.tail_integral_quadrature(delta, spec.d);
      report.c_delta.push_back({delta, exact, quad});
      const bool agree = std::isfinite(exact) && std::abs(exact - quad) <= 1e-8 * std::max(1.0, std::abs(exact));
      ok = ok && agree;
      detail << "C(" << fmt(delta) << ")=" << fmt(exact) << " quad=" << fmt(quad) << "; ";
    }
    add("M2_integrability", "C_delta finite for every tested delta > 0", ok, detail.str());
  }

  {
    Rng rng(options.seed);
    const auto fit = validate_superstability(spec, options.superstability_trials, rng);
    report.superstability = fit;
    add("M3_superstability", "empirical H >= A sum N_k^{v+eps} - B N with A > 0", fit.pass,
        "A_fit=" + fmt(fit.A_fit) + " B_fit=" + fmt(fit.B_fit) + " violations=" + std::to_string(fit.violations));
    if (pot.family == PotentialFamily::singular_truncated) {
      const double growth = 2.0 + pot.eps;
      add("M3_growth_exponent", "dense-packing growth 2 + eps_Phi >= v + eps", growth >= spec.v + spec.eps,
          "2+eps_Phi=" + fmt(growth) + " v+eps=" + fmt(spec.v + spec.eps), true);
    }
  }

  {
    bool ok = cpl.phi_star > 0.0 && cpl.R > 0.0 && std::isfinite(cpl.phi_max());
    std::string detail = "phi_star=" + fmt(cpl.phi_star) + " R=" + fmt(cpl.R);
    for (double value : cpl.table_values) {
      if (!(value >= cpl.phi_star) || !std::isfinite(value)) ok = false;
    }
    if (cpl.has_table()) {
      ok = ok && cpl.table_radii.back() == cpl.R;
      detail += " phi_max=" + fmt(cpl.phi_max());
    }
    add("M4_coupling", "phi >= phi_star > 0 on B_R, zero outside, bounded", ok, detail);
  }

  {
    Rng rng(options.seed ^ 0xa5a5a5a5ULL);
    const std::size_t n = std::max<std::size_t>(options.symmetry_samples, 2);
    double m1 = 0.0, m3 = 0.0, m2 = 0.0, m6 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double s = spec.chi.sample(rng);
      m1 += s;
      m2 += s * s;
      m3 += s * s * s;
      m6 += s * s * s * s * s * s;
    }
    const double nn = static_cast<double>(n);
    const double z1 = (m1 / nn) / std::sqrt(m2 / nn / nn);
    const double z3 = (m3 / nn) / std::sqrt(m6 / nn / nn);
    const bool ok = std::abs(z1) < 5.0 && std::abs(z3) < 5.0;
    add("M5_symmetry", "chi symmetric under s -> -s (sampled odd moments vanish)", ok,
        spec.chi.name() + " z(m1)=" + fmt(z1) + " z(m3)=" + fmt(z3));
  }
  add("M5_zero_atom", "chi({0}) < 1", spec.chi.mass_at_zero() < 1.0, "chi({0})=" + fmt(spec.chi.mass_at_zero()));
  {
    const double moment = spec.chi.exp_moment(spec.kappa, spec.u);
    add("M5_exp_moment", "integral of exp(kappa |s|^u) d chi finite", spec.kappa > 0.0 && std::isfinite(moment),
        "kappa=" + fmt(spec.kappa) + " u=" + fmt(spec.u) + " value=" + fmt(moment));
  }
  add("M5_u_gt_w", "u > w", spec.u > spec.w, "u=" + fmt(spec.u) + " w=" + std::to_string(spec.w));
  add("M6_r_lt_R4", "r < R/4", pot.range() < cpl.R / 4.0, "r=" + fmt(pot.range()) + " R/4=" + fmt(cpl.R / 4.0));
  add("temperedness_vw", "v > 2 and w >= 2(v-1)/(v-2)", temperedness_exponents_valid(spec.v, spec.w),
      "v=" + std::to_string(spec.v) + " w=" + std::to_string(spec.w));
  {
    const double ve = spec.v + spec.eps;
    const double bound = ve > 2.0 ? 2.0 * (ve - 1.0) / (ve - 2.0) : std::numeric_limits<double>::infinity();
    add("remark_u", "u > 2(v+eps-1)/(v+eps-2)", spec.u > bound, "bound=" + fmt(bound), true);
  }
  return report;
}

}  // namespace ferrolab
