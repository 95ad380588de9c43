#include "ferrolab/criteria.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <queue>
#include <stdexcept>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "ferrolab/percolation.hpp"

namespace ferrolab {

double wells_threshold(const std::function<double(double)>& upper, const std::function<double(double)>& lower,
                       bool atomic, double tol) {
  if (!(tol > 0.0)) throw std::invalid_argument("Wells tolerance must be positive");
  auto deficit = [&](double a) { return upper(a * std::numbers::sqrt2) - lower(a); };
  if (deficit(0.0) < 0.0) throw std::runtime_error("Wells rule fails already at a = 0");
  double lo = 0.0, hi = 1.0;
  int doublings = 0;
  while (deficit(hi) >= 0.0) {
    lo = hi;
    hi *= 2.0;
    if (++doublings > 60) throw std::runtime_error("Wells rule holds on the whole search bracket");
  }
  while (hi - lo > 0.25 * tol) {
    const double mid = 0.5 * (lo + hi);
    if (deficit(mid) >= 0.0) lo = mid;
    else hi = mid;
  }
  if (atomic) return hi - tol;
  return lo;
}

double wells_threshold(const SpinMeasure& chi, double tol) {
  return wells_threshold([&](double x) { return chi.upper_tail(x); }, [&](double x) { return chi.mass_zero_to(x); },
                         chi.atomic(), tol);
}

CouplingCheck coupling_condition(double phi_star, double a, double q) {
  if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("coupling condition needs q in (0, 1)");
  CouplingCheck c;
  c.threshold = 0.5 * a * a * std::log((1.0 + q) / (1.0 - q));
  c.slack = phi_star - c.threshold;
  c.holds = phi_star > c.threshold;
  return c;
}

double core_volume(const ModelSpec& spec) {
  const double side = spec.cell_side() - 2.0 * spec.potential.range();
  return side > 0.0 ? std::pow(side, spec.d) : 0.0;
}

double ball_volume(int d, double radius) {
  return std::pow(std::numbers::pi, 0.5 * d) * std::pow(radius, d) / std::tgamma(0.5 * d + 1.0);
}

double g_star_objective(double c, double v_star, double K) {
  if (!(c > 0.0)) return K > 0.0 ? -std::numeric_limits<double>::infinity() : 0.5 * v_star;
  return 0.5 * std::exp(-c) * (v_star - K / c);
}

double g_star_maximize(double v_star, double K) {
  if (K <= 0.0) return 0.0;
  // f > 0 needs c > K/v*, and the stationary point is below K/v* + 2.
  const double c_min = K / v_star;
  double a = std::log(c_min), b = std::log(c_min + 2.0);
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  // log of the objective, so that large K / v* does not underflow to a flat zero
  auto f = [&](double t) {
    const double c = std::exp(t);
    const double margin = v_star - K / c;
    return margin > 0.0 ? -c + std::log(margin) : -std::numeric_limits<double>::infinity();
  };
  double x1 = b - invphi * (b - a), x2 = a + invphi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  for (int it = 0; it < 200 && b - a > 1e-15; ++it) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + invphi * (b - a);
      f2 = f(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - invphi * (b - a);
      f1 = f(x1);
    }
  }
  return std::exp(0.5 * (a + b));
}

GStar g_star(const ModelSpec& spec, std::size_t n_star, std::optional<double> delta) {
  if (n_star < 1) throw std::invalid_argument("g_star needs n_star >= 1");
  GStar out;
  out.core_volume = core_volume(spec);
  if (!(out.core_volume > 0.0)) {
    throw std::domain_error("core volume (l - 2r)^d is not positive; reduce r below R/(4 sqrt(d))");
  }
  const double K_factor = static_cast<double>(n_star - 1);
  auto v_star_for = [&](double dlt) { return out.core_volume - K_factor * ball_volume(spec.d, dlt); };
  double dlt;
  if (delta) {
    dlt = *delta;
    if (!(dlt > 0.0)) throw std::invalid_argument("delta must be positive");
    if (!(v_star_for(dlt) > 0.0)) throw std::domain_error("v* <= 0; shrink delta or n_star");
  } else {
    dlt = spec.potential.range() > 0.0 ? spec.potential.range() / 2.0 : spec.cell_side() / 4.0;
    int halvings = 0;
    while (!(v_star_for(dlt) > 0.0)) {
      dlt *= 0.5;
      if (++halvings > 200) throw std::domain_error("no delta gives v* > 0");
    }
  }
  out.delta = dlt;
  out.v_star = v_star_for(dlt);
  out.C_delta = spec.potential.tail_integral(dlt, spec.d);
  const double K = K_factor * out.C_delta;
  out.c_opt = g_star_maximize(out.v_star, K);
  out.g_star = g_star_objective(out.c_opt, out.v_star, K);
  out.ok = out.g_star > 0.0 && std::isfinite(out.g_star);
  return out;
}

double spin_laplace(const SpinMeasure& chi, double h) {
  switch (chi.family) {
    case SpinFamily::two_point:
      return std::cosh(chi.param * h);
    case SpinFamily::uniform: {
      const double x = chi.param * h;
      return x == 0.0 ? 1.0 : std::sinh(x) / x;
    }
    case SpinFamily::quartic: {
      const double beta = chi.param;
      auto f = [&](double s) { return std::exp(h * s - beta * s * s * s * s) + std::exp(-h * s - beta * s * s * s * s); };
      const double integral = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
          f, 0.0, std::numeric_limits<double>::infinity(), 15, 1e-12);
      return integral / (2.0 * std::tgamma(1.25) * std::pow(beta, -0.25));
    }
  }
  return 1.0;
}

namespace {

struct Rule {
  std::vector<double> x;  // on [-1, 1]
  std::vector<double> w;
};

Rule gauss_legendre10() {
  using G = boost::math::quadrature::gauss<double, 10>;
  Rule rule;
  const auto& abs = G::abscissa();
  const auto& wts = G::weights();
  for (std::size_t i = 0; i < abs.size(); ++i) {
    if (abs[i] == 0.0) {
      rule.x.push_back(0.0);
      rule.w.push_back(wts[i]);
    } else {
      rule.x.push_back(-abs[i]);
      rule.w.push_back(wts[i]);
      rule.x.push_back(abs[i]);
      rule.w.push_back(wts[i]);
    }
  }
  return rule;
}

double integrate_core(const MarkedConfiguration& config, const Position& lo, const Position& hi,
                      const ModelSpec& spec, std::size_t panels, double& min_G, std::size_t& nodes) {
  static const Rule rule = gauss_legendre10();
  const int d = spec.d;
  std::vector<std::vector<double>> ax(static_cast<std::size_t>(d)), aw(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) {
    const double width = (hi[i] - lo[i]) / static_cast<double>(panels);
    for (std::size_t p = 0; p < panels; ++p) {
      const double a = lo[i] + width * static_cast<double>(p);
      for (std::size_t j = 0; j < rule.x.size(); ++j) {
        ax[static_cast<std::size_t>(i)].push_back(a + 0.5 * width * (rule.x[j] + 1.0));
        aw[static_cast<std::size_t>(i)].push_back(0.5 * width * rule.w[j]);
      }
    }
  }
  const std::size_t per_axis = ax[0].size();
  const double r = spec.potential.range();
  const double R = spec.coupling.R;
  const double range = std::max(r, R);
  std::vector<std::size_t> idx(static_cast<std::size_t>(d), 0);
  double total = 0.0;
  while (true) {
    Position x = Position::zeros(d);
    double weight = 1.0;
    for (int i = 0; i < d; ++i) {
      x[i] = ax[static_cast<std::size_t>(i)][idx[static_cast<std::size_t>(i)]];
      weight *= aw[static_cast<std::size_t>(i)][idx[static_cast<std::size_t>(i)]];
    }
    double H = 0.0, field = 0.0;
    config.for_each_within(x, range, [&](std::size_t j, double d2) {
      if (d2 <= r * r) H += spec.potential.value_sq(d2, d);
      if (d2 <= R * R) field += spec.coupling.value_sq(d2) * config[j].spin;
    });
    const double G = spin_laplace(spec.chi, field);
    min_G = std::min(min_G, G);
    total += weight * std::exp(-H) * G;
    ++nodes;
    int axis = 0;
    while (axis < d) {
      if (++idx[static_cast<std::size_t>(axis)] < per_axis) break;
      idx[static_cast<std::size_t>(axis)] = 0;
      ++axis;
    }
    if (axis == d) break;
  }
  return total;
}

}  // namespace

GIntegral g_integral(const MarkedConfiguration& config, const CellKey& cell, const ModelSpec& spec,
                     std::size_t panels) {
  if (panels < 1) throw std::invalid_argument("g_integral needs at least one panel");
  const double l = spec.cell_side();
  const double r = spec.potential.range();
  Position lo = Position::zeros(spec.d), hi = Position::zeros(spec.d);
  GIntegral out;
  out.min_G = std::numeric_limits<double>::infinity();
  for (int i = 0; i < spec.d; ++i) {
    lo[i] = l * (cell[i] - 0.5) + r;
    hi[i] = l * (cell[i] + 0.5) - r;
    if (!(hi[i] > lo[i])) return out;
  }
  out.value = integrate_core(config, lo, hi, spec, panels, out.min_G, out.nodes);
  std::size_t coarse_nodes = 0;
  double coarse_min = out.min_G;
  out.coarse_value = integrate_core(config, lo, hi, spec, std::max<std::size_t>(1, panels / 2), coarse_min,
                                    coarse_nodes);
  out.error_estimate = std::abs(out.value - out.coarse_value);
  out.converged = out.error_estimate <= 1e-3 * std::abs(out.value);
  return out;
}

namespace {

struct Box {
  Position lo, hi;
  double fine = 0.0, err = 0.0;
  bool operator<(const Box& o) const { return err < o.err; }
};

class CoreIntegrand {
 public:
  CoreIntegrand(const MarkedConfiguration& config, const Position& lo, const Position& hi, const ModelSpec& spec)
      : spec_(spec), r_(spec.potential.range()), R_(spec.coupling.R) {
    const int d = spec.d;
    Position mid = Position::zeros(d);
    double half_diag = 0.0;
    for (int i = 0; i < d; ++i) {
      mid[i] = 0.5 * (lo[i] + hi[i]);
      half_diag += 0.25 * (hi[i] - lo[i]) * (hi[i] - lo[i]);
    }
    config.for_each_within(mid, std::max(r_, R_) + std::sqrt(half_diag), [&](std::size_t j, double) {
      pts_.push_back(config[j].position);
      spins_.push_back(config[j].spin);
    });
  }

  double operator()(const Position& x, double& min_G) const {
    const int d = spec_.d;
    double H = 0.0, field = 0.0;
    for (std::size_t j = 0; j < pts_.size(); ++j) {
      double d2 = 0.0;
      for (int i = 0; i < d; ++i) {
        const double t = x[i] - pts_[j][i];
        d2 += t * t;
      }
      if (d2 <= r_ * r_) H += spec_.potential.value_sq(d2, d);
      if (d2 <= R_ * R_) field += spec_.coupling.value_sq(d2) * spins_[j];
    }
    const double G = spin_laplace(spec_.chi, field);
    min_G = std::min(min_G, G);
    return std::exp(-H) * G;
  }

 private:
  const ModelSpec& spec_;
  double r_, R_;
  std::vector<Position> pts_;
  std::vector<double> spins_;
};

// Tensor Gauss-Legendre with 4 and 3 points per axis on one box.
void rate_box(Box& b, const CoreIntegrand& f, int d, double& min_G, std::size_t& nodes) {
  static const double x4[] = {-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526};
  static const double w4[] = {0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538};
  static const double x3[] = {-0.7745966692414834, 0.0, 0.7745966692414834};
  static const double w3[] = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
  auto tensor = [&](const double* xs, const double* ws, int n) {
    std::vector<int> idx(static_cast<std::size_t>(d), 0);
    Position x = Position::zeros(d);
    double total = 0.0;
    while (true) {
      double w = 1.0;
      for (int i = 0; i < d; ++i) {
        const double c = 0.5 * (b.lo[i] + b.hi[i]), h = 0.5 * (b.hi[i] - b.lo[i]);
        x[i] = c + h * xs[idx[static_cast<std::size_t>(i)]];
        w *= h * ws[idx[static_cast<std::size_t>(i)]];
      }
      total += w * f(x, min_G);
      ++nodes;
      int axis = 0;
      while (axis < d && ++idx[static_cast<std::size_t>(axis)] == n) idx[static_cast<std::size_t>(axis++)] = 0;
      if (axis == d) break;
    }
    return total;
  };
  b.fine = tensor(x4, w4, 4);
  b.err = std::abs(b.fine - tensor(x3, w3, 3));
}

}  // namespace

GIntegral g_integral_adaptive(const MarkedConfiguration& config, const CellKey& cell, const ModelSpec& spec,
                              double rel_tol, std::size_t max_boxes) {
  if (!(rel_tol > 0.0)) throw std::invalid_argument("g_integral_adaptive needs a positive tolerance");
  const int d = spec.d;
  const double l = spec.cell_side();
  const double r = spec.potential.range();
  GIntegral out;
  out.min_G = std::numeric_limits<double>::infinity();
  Box root{Position::zeros(d), Position::zeros(d)};
  for (int i = 0; i < d; ++i) {
    root.lo[i] = l * (cell[i] - 0.5) + r;
    root.hi[i] = l * (cell[i] + 0.5) - r;
    if (!(root.hi[i] > root.lo[i])) {
      out.converged = true;
      return out;
    }
  }
  const CoreIntegrand f(config, root.lo, root.hi, spec);
  rate_box(root, f, d, out.min_G, out.nodes);
  std::priority_queue<Box> heap;
  double value = root.fine, err = root.err;
  heap.push(std::move(root));
  const std::size_t children = std::size_t{1} << d;
  while (err > rel_tol * std::abs(value) && heap.size() + children <= max_boxes) {
    Box b = heap.top();
    heap.pop();
    value -= b.fine;
    err -= b.err;
    for (std::size_t m = 0; m < children; ++m) {
      Box c{b.lo, b.hi};
      for (int i = 0; i < d; ++i) {
        const double mid = 0.5 * (b.lo[i] + b.hi[i]);
        if ((m >> i) & 1u) c.lo[i] = mid;
        else c.hi[i] = mid;
      }
      rate_box(c, f, d, out.min_G, out.nodes);
      value += c.fine;
      err += c.err;
      heap.push(std::move(c));
    }
  }
  // re-sum to shed the drift of the running totals
  value = 0.0;
  err = 0.0;
  while (!heap.empty()) {
    value += heap.top().fine;
    err += heap.top().err;
    heap.pop();
  }
  out.value = value;
  out.coarse_value = value;
  out.error_estimate = err;
  out.converged = err <= rel_tol * std::abs(value);
  return out;
}

double uniqueness_activity(const ModelSpec& spec, double phi0) {
  const double a = spec.chi.support_bound();
  if (!std::isfinite(a)) throw std::domain_error("uniqueness activity needs a compactly supported spin measure");
  if (!(phi0 > 0.0)) throw std::invalid_argument("phi0 must be positive");
  return 1.0 / (ball_volume(spec.d, spec.coupling.R) * (1.0 - std::exp(-2.0 * phi0 * a * a)));
}

CriteriaReport choose_parameters(const ModelSpec& spec, double q, const CriteriaOptions& options) {
  CriteriaReport rep;
  rep.d = spec.d;
  rep.q = q;
  rep.phi_star = spec.coupling.phi_star;
  if (spec.d < 2) {
    rep.message = "criterion needs d >= 2";
    return rep;
  }
  if (!(q > 0.0 && q < 1.0)) {
    rep.message = "q must lie in (0, 1)";
    return rep;
  }
  auto record = [&](std::string name, double lhs, std::string rel, double rhs) {
    const bool holds = rel == ">" ? lhs > rhs : lhs < rhs;
    rep.inequalities.push_back({std::move(name), lhs, rhs, holds, std::move(rel)});
    return holds;
  };

  rep.a = wells_threshold(spec.chi, options.wells_tol);
  rep.coupling = coupling_condition(spec.coupling.phi_star, rep.a, q);
  record("coupling", spec.coupling.phi_star, ">", rep.coupling.threshold);

  rep.p_site = site_threshold(spec.d);
  rep.theta = rep.p_site / 2.0;
  rep.m_c = rep.a * rep.theta * rep.theta / 2.0;
  record("theta_positive", rep.theta, ">", 0.0);
  record("theta_below_half", rep.theta, "<", 0.5);

  for (std::size_t n = 1; n <= options.max_n; ++n) {
    const double h = h_value(n, q);
    if (h > rep.p_site) {
      rep.n_star = n;
      rep.h_n_star = h;
      break;
    }
  }
  if (rep.n_star == 0) {
    rep.message = "h(n, q) never exceeds the site threshold";
    rep.passed = false;
    return rep;
  }
  rep.q0_lower = rep.p_site / rep.h_n_star;
  rep.q0 = 0.5 * (rep.q0_lower + 1.0);
  record("h_exceeds_site_threshold", rep.h_n_star, ">", rep.p_site);
  record("site_condition", rep.q0 * rep.h_n_star, ">", rep.p_site);
  record("q0_below_one", rep.q0, "<", 1.0);

  const double vol = core_volume(spec);
  record("core_volume_positive", vol, ">", 0.0);
  if (vol > 0.0) {
    rep.g = g_star(spec, rep.n_star, options.delta);
    record("g_star_positive", rep.g.g_star, ">", 0.0);
    rep.t_star = rep.g.g_star / static_cast<double>(rep.n_star);
    rep.z_c = 1.0 / (rep.t_star * (1.0 - rep.q0));
  } else {
    rep.z_c = std::numeric_limits<double>::infinity();
    rep.message = "core volume (l - 2r)^d is not positive";
  }

  rep.passed = std::all_of(rep.inequalities.begin(), rep.inequalities.end(),
                           [](const Inequality& i) { return i.holds; });
  if (!rep.coupling.holds) {
    rep.message = "coupling condition fails: phi_star must exceed " + format_double(rep.coupling.threshold);
  }
  return rep;
}

}  // namespace ferrolab
