#include <doctest.h>

#include <cmath>
#include <numbers>

#include "ferrolab/criteria.hpp"
#include "ferrolab/percolation.hpp"
#include "ferrolab/rng.hpp"

using namespace ferrolab;

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

ModelSpec soft_spec() {
  ModelSpec spec = ModelSpec::defaults();
  spec.potential = PositionPotential::singular_truncated(0.01, 0.5, 0.1);
  return spec;
}

// Midpoint rule for the same integrand, used as an independent check.
double g_integral_midpoint(const MarkedConfiguration& config, const CellKey& cell, const ModelSpec& spec,
                           int per_axis) {
  const double l = spec.cell_side();
  const double r = spec.potential.range();
  const double x0 = l * (cell[0] - 0.5) + r, y0 = l * (cell[1] - 0.5) + r;
  const double side = l - 2.0 * r;
  const double h = side / per_axis;
  double sum = 0.0;
  for (int i = 0; i < per_axis; ++i) {
    for (int j = 0; j < per_axis; ++j) {
      const Position x{x0 + (i + 0.5) * h, y0 + (j + 0.5) * h};
      double H = 0.0, field = 0.0;
      for (std::size_t k = 0; k < config.size(); ++k) {
        const double d2 = distance_squared(x, config[k].position);
        H += spec.potential.value_sq(d2, spec.d);
        field += spec.coupling.value_sq(d2) * config[k].spin;
      }
      sum += std::exp(-H) * std::cosh(spec.chi.param * field);
    }
  }
  return sum * h * h;
}

}  // namespace

TEST_CASE("Wells threshold for the uniform measure is b (sqrt2 - 1)") {
  for (double b : {0.5, 1.0, 3.0}) {
    CHECK(std::abs(wells_threshold(SpinMeasure::uniform(b)) - b * (std::numbers::sqrt2 - 1.0)) < 1e-9 * b);
  }
  CHECK(std::abs(wells_threshold(SpinMeasure::uniform(1.0), 1e-12) - (std::numbers::sqrt2 - 1.0)) < 1e-10);
}

TEST_CASE("Wells threshold for a standard Gaussian through tail functions") {
  auto upper = [](double x) { return 1.0 - normal_cdf(x); };
  auto lower = [](double x) { return normal_cdf(x) - 0.5; };
  const double a = wells_threshold(upper, lower, false, 1e-12);
  CHECK(a == doctest::Approx(0.5626).epsilon(0.002));
  // root of Phi(a) + Phi(a sqrt2) = 3/2
  CHECK(std::abs(normal_cdf(a) + normal_cdf(a * std::numbers::sqrt2) - 1.5) < 1e-10);
}

TEST_CASE("Wells threshold for two-point spins is b minus the tolerance") {
  for (double b : {0.3, 1.0, 2.0}) {
    const double tol = 1e-10;
    const double a = wells_threshold(SpinMeasure::two_point(b), tol);
    CHECK(std::abs(a - (b - tol)) <= 0.25 * tol);
    const auto chi = SpinMeasure::two_point(b);
    CHECK(chi.upper_tail(a * std::numbers::sqrt2) >= chi.mass_zero_to(a));
    CHECK(chi.upper_tail((b + tol) * std::numbers::sqrt2) < chi.mass_zero_to(b + tol));
  }
}

TEST_CASE("Wells threshold is bracketed for the quartic measure") {
  const double tol = 1e-10;
  for (double beta : {0.5, 1.0, 4.0}) {
    const auto chi = SpinMeasure::quartic(beta);
    const double a = wells_threshold(chi, tol);
    CHECK(a > 0.0);
    CHECK(chi.upper_tail(a * std::numbers::sqrt2) >= chi.mass_zero_to(a) - 1e-12);
    CHECK(chi.upper_tail((a + 2 * tol) * std::numbers::sqrt2) < chi.mass_zero_to(a + 2 * tol));
  }
  CHECK_THROWS(wells_threshold(SpinMeasure::uniform(1.0), 0.0));
}

TEST_CASE("coupling condition") {
  const auto c = coupling_condition(1.0, 1.0, 0.5);
  CHECK(c.threshold == doctest::Approx(0.5 * std::log(3.0)).epsilon(1e-15));
  CHECK(c.holds);
  CHECK(c.slack == doctest::Approx(1.0 - 0.5 * std::log(3.0)));
  // strict inequality
  CHECK_FALSE(coupling_condition(c.threshold, 1.0, 0.5).holds);
  CHECK(coupling_condition(2.0, 1.0, 0.9).threshold == doctest::Approx(0.5 * std::log(19.0)));
  CHECK(coupling_condition(2.0, 2.0, 0.9).threshold == doctest::Approx(2.0 * std::log(19.0)));
  CHECK(coupling_condition(1e6, 1.0, 1.0 - 1e-12).threshold > 13.0);
  CHECK_THROWS(coupling_condition(1.0, 1.0, 1.0));
  CHECK_THROWS(coupling_condition(1.0, 1.0, 0.0));
}

TEST_CASE("g* objective maximizer matches the stationary point") {
  for (double v : {1.0, 0.03, 5.0}) {
    for (double K : {0.1, 1.0, 40.0}) {
      const double c = g_star_maximize(v, K);
      const double exact = (K + std::sqrt(K * K + 4.0 * v * K)) / (2.0 * v);
      CHECK(c == doctest::Approx(exact).epsilon(1e-7));
    }
  }
  CHECK(g_star_maximize(1.0, 0.0) == 0.0);
  CHECK(g_star_objective(0.0, 0.7, 0.0) == doctest::Approx(0.35));
}

TEST_CASE("g* objective beats a dense grid search") {
  const double v = 1.0, K = 0.1;
  const double best = g_star_objective(g_star_maximize(v, K), v, K);
  double grid_best = -1.0;
  for (int i = 1; i <= 10000; ++i) {
    const double c = 3.0 * i / 10000.0;
    const double f = g_star_objective(c, v, K);
    CHECK(f <= best + 1e-12);
    grid_best = std::max(grid_best, f);
  }
  CHECK(std::abs(best - grid_best) < 1e-6);
}

TEST_CASE("g* for the default model") {
  const ModelSpec spec = ModelSpec::defaults();
  const double l = 2.5 / (2.0 * std::sqrt(2.0));
  CHECK(core_volume(spec) == doctest::Approx((l - 0.7) * (l - 0.7)).epsilon(1e-14));
  const GStar g = g_star(spec, 1);
  CHECK(g.v_star == doctest::Approx(core_volume(spec)));
  CHECK(g.g_star == doctest::Approx(0.5 * g.v_star).epsilon(1e-14));
  CHECK(g.c_opt == 0.0);
  CHECK(g.delta == doctest::Approx(0.175));
  // closed form of the tail integral at delta = r/2 with c = 1, eps = 2
  const double r = 0.35, dl = 0.175;
  const double closed =
      2.0 * std::numbers::pi * ((std::pow(dl, -4) - std::pow(r, -4)) / 4.0 - std::pow(r, -6) * (r * r - dl * dl) / 2.0);
  CHECK(g.C_delta == doctest::Approx(closed).epsilon(1e-12));
  CHECK(g.C_delta == doctest::Approx(1413.13).epsilon(1e-5));
  CHECK_THROWS(g_star(spec, 0));
}

TEST_CASE("g* with n* > 1 uses K = (n* - 1) C_delta") {
  const ModelSpec spec = soft_spec();
  for (std::size_t n : {2u, 3u, 5u}) {
    const GStar g = g_star(spec, n);
    const double K = static_cast<double>(n - 1) * g.C_delta;
    CHECK(g.v_star == doctest::Approx(core_volume(spec) - (n - 1) * ball_volume(2, g.delta)));
    CHECK(g.g_star == doctest::Approx(g_star_objective(g_star_maximize(g.v_star, K), g.v_star, K)));
    CHECK(g.g_star > 0.0);
    CHECK(g.g_star < 0.5 * g.v_star);
  }
  CHECK_THROWS(g_star(spec, 3, 10.0));
  ModelSpec fat = ModelSpec::defaults();
  fat.potential = PositionPotential::singular_truncated(1.0, 2.0, 0.45);
  CHECK_THROWS(g_star(fat, 1));
}

TEST_CASE("g integral on an empty configuration is the core volume") {
  const ModelSpec spec = ModelSpec::defaults();
  const MarkedConfiguration empty(2, spec.cell_side());
  const GIntegral gi = g_integral(empty, CellKey{0, 0}, spec);
  CHECK(gi.value == doctest::Approx(core_volume(spec)).epsilon(1e-12));
  CHECK(gi.min_G == doctest::Approx(1.0));
  CHECK(gi.value >= g_star(spec, 1).g_star);
}

TEST_CASE("g integral matches a midpoint rule") {
  const ModelSpec spec = soft_spec();
  const double l = spec.cell_side();
  MarkedConfiguration c(2, l);
  c.insert({Position{0.1, 0.05}, 1.0});
  c.insert({Position{1.3, 0.2}, -1.0});
  c.insert({Position{-0.2, 2.3}, 1.0});
  c.insert({Position{-1.9, -0.4}, 1.0});
  const GIntegral gi = g_integral(c, CellKey{0, 0}, spec, 32);
  const double mid = g_integral_midpoint(c, CellKey{0, 0}, spec, 800);
  CHECK(gi.value == doctest::Approx(mid).epsilon(5e-3));
  CHECK(gi.coarse_value == doctest::Approx(gi.value).epsilon(5e-2));
}

TEST_CASE("adaptive g integral resolves the coupling discontinuities") {
  const ModelSpec spec = ModelSpec::defaults();
  const double l = spec.cell_side();
  MarkedConfiguration c(2, l);
  c.insert({Position{1.9, 0.3}, 1.0});
  c.insert({Position{-2.1, -0.6}, 1.0});
  c.insert({Position{0.4, -2.2}, -1.0});
  c.insert({Position{-0.7, 2.4}, 1.0});
  const GIntegral gi = g_integral_adaptive(c, CellKey{0, 0}, spec, 1e-5);
  CHECK(gi.converged);
  CHECK(gi.error_estimate <= 1e-5 * gi.value);
  const double mid = g_integral_midpoint(c, CellKey{0, 0}, spec, 2000);
  CHECK(gi.value == doctest::Approx(mid).epsilon(1e-3));

  const MarkedConfiguration empty(2, l);
  const GIntegral ge = g_integral_adaptive(empty, CellKey{0, 0}, spec);
  CHECK(ge.value == doctest::Approx(core_volume(spec)).epsilon(1e-12));
  CHECK(ge.converged);
  CHECK_THROWS(g_integral_adaptive(empty, CellKey{0, 0}, spec, 0.0));
}

TEST_CASE("g integral lower bound on random sparse configurations") {
  Rng rng(21);
  for (std::size_t n_star : {1u, 3u}) {
    const ModelSpec spec = n_star == 1 ? ModelSpec::defaults() : soft_spec();
    const double l = spec.cell_side();
    const double gs = g_star(spec, n_star).g_star;
    for (int trial = 0; trial < 200; ++trial) {
      MarkedConfiguration c(2, l);
      const std::size_t inside = rng.index(n_star);
      for (std::size_t i = 0; i < inside; ++i) {
        c.insert({Position{rng.uniform(-0.5 * l, 0.5 * l), rng.uniform(-0.5 * l, 0.5 * l)},
                  rng.uniform01() < 0.5 ? -1.0 : 1.0});
      }
      const std::size_t outside = rng.index(12);
      for (std::size_t i = 0; i < outside; ++i) {
        Position p{rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)};
        if (cell_index(p, l) == CellKey{0, 0}) continue;
        c.insert({p, rng.uniform01() < 0.5 ? -1.0 : 1.0});
      }
      const GIntegral gi = g_integral(c, CellKey{0, 0}, spec);
      REQUIRE(gi.min_G >= 0.5);
      REQUIRE(gi.value >= gs);
    }
  }
}

TEST_CASE("choose_parameters on the default model") {
  const ModelSpec spec = ModelSpec::defaults();
  const CriteriaReport rep = choose_parameters(spec, 0.9);
  CHECK(rep.passed);
  CHECK(rep.message.empty());
  CHECK(rep.a == doctest::Approx(1.0 - 1e-10).epsilon(1e-15));
  CHECK(rep.n_star == 1);
  CHECK(rep.h_n_star == doctest::Approx(0.81));
  CHECK(rep.p_site == site_threshold(2));
  CHECK(rep.theta == doctest::Approx(rep.p_site / 2));
  CHECK(rep.q0 == doctest::Approx(0.5 * (1.0 + rep.p_site / 0.81)));
  CHECK(rep.q0 < 1.0);
  CHECK(rep.q0 * rep.h_n_star > rep.p_site);
  CHECK(rep.t_star == doctest::Approx(rep.g.g_star / rep.n_star));
  CHECK(rep.z_c == doctest::Approx(1.0 / (rep.t_star * (1.0 - rep.q0))));
  CHECK(rep.z_c == doctest::Approx(441.054).epsilon(1e-5));
  // the occupation floor equals q0 exactly at z_c
  CHECK(rep.occupation_floor(rep.z_c) == doctest::Approx(rep.q0));
  for (const auto& ineq : rep.inequalities) CHECK_MESSAGE(ineq.holds, ineq.name);
}

TEST_CASE("choose_parameters picks the least n with h > p_site") {
  const ModelSpec spec = soft_spec();
  for (double q : {0.3, 0.5, 0.7}) {
    const CriteriaReport rep = choose_parameters(spec, q);
    REQUIRE(rep.n_star >= 1);
    CHECK(h_value(rep.n_star, q) > rep.p_site);
    for (std::size_t n = 1; n < rep.n_star; ++n) CHECK(h_value(n, q) <= rep.p_site);
    CHECK(rep.q0 > rep.p_site / rep.h_n_star);
    CHECK(rep.z_c == doctest::Approx(static_cast<double>(rep.n_star) / (rep.g.g_star * (1.0 - rep.q0))));
  }
}

TEST_CASE("z_c arithmetic") {
  CriteriaReport rep;
  rep.t_star = 0.5 / 5.0;
  rep.q0 = 0.9;
  const double z_c = 1.0 / (rep.t_star * (1.0 - rep.q0));
  CHECK(z_c == doctest::Approx(100.0));
  CHECK(rep.occupation_floor(z_c) == doctest::Approx(0.9));
  CHECK(rep.occupation_floor(2 * z_c) == doctest::Approx(0.95));
}

TEST_CASE("z_c grows as the hard core widens") {
  double prev = 0.0;
  for (double r : {0.05, 0.15, 0.25, 0.35, 0.42}) {
    ModelSpec spec = ModelSpec::defaults();
    spec.potential = PositionPotential::singular_truncated(1.0, 2.0, r);
    const CriteriaReport rep = choose_parameters(spec, 0.9);
    CHECK(rep.z_c > prev);
    prev = rep.z_c;
  }
}

TEST_CASE("choose_parameters failure modes") {
  ModelSpec weak = ModelSpec::defaults();
  weak.coupling = SpinCoupling::indicator(1.0, 2.5);
  const CriteriaReport rep = choose_parameters(weak, 0.9);
  CHECK_FALSE(rep.passed);
  CHECK(rep.message.find("coupling") != std::string::npos);

  ModelSpec fat = ModelSpec::defaults();
  fat.potential = PositionPotential::singular_truncated(1.0, 2.0, 0.45);
  const CriteriaReport f = choose_parameters(fat, 0.9);
  CHECK_FALSE(f.passed);
  CHECK(std::isinf(f.z_c));

  ModelSpec line = ModelSpec::defaults();
  line.d = 1;
  CHECK_FALSE(choose_parameters(line, 0.9).passed);
  CHECK_FALSE(choose_parameters(ModelSpec::defaults(), 1.0).passed);
}

TEST_CASE("uniqueness activity") {
  const ModelSpec spec = ModelSpec::defaults();
  const double want = 1.0 / (std::numbers::pi * 6.25 * (1.0 - std::exp(-2.0)));
  CHECK(uniqueness_activity(spec, 1.0) == doctest::Approx(want).epsilon(1e-14));
  CHECK(uniqueness_activity(spec, 1.0) == doctest::Approx(0.058905).epsilon(1e-4));
  ModelSpec q = spec;
  q.chi = SpinMeasure::quartic(1.0);
  CHECK_THROWS(uniqueness_activity(q, 1.0));
  CHECK_THROWS(uniqueness_activity(spec, 0.0));
}
