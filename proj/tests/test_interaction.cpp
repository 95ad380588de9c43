#include <doctest.h>

#include <cmath>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "ferrolab/interaction.hpp"
#include "ferrolab/rng.hpp"

using namespace ferrolab;

namespace {

ModelSpec small_spec() {
  ModelSpec s = ModelSpec::defaults();
  s.potential = PositionPotential::singular_truncated(1.0, 1.0, 1.0);
  s.coupling = SpinCoupling::indicator(2.0, 3.0);
  return s;
}

MarkedConfiguration random_config(const ModelSpec& spec, std::size_t n, double box, Rng& rng) {
  MarkedConfiguration c(spec.d, spec.cell_side());
  while (c.size() < n) {
    Position p = Position::zeros(spec.d);
    for (int a = 0; a < spec.d; ++a) p[a] = rng.uniform(-box, box);
    if (!c.contains_position(p)) c.insert({p, rng.uniform(-2, 2)});
  }
  return c;
}

double brute_H(const MarkedConfiguration& c, const ModelSpec& s) {
  double h = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i)
    for (std::size_t j = i + 1; j < c.size(); ++j)
      h += s.potential.value_sq(distance_squared(c[i].position, c[j].position), s.d);
  return h;
}

double brute_E(const MarkedConfiguration& c, const ModelSpec& s) {
  double e = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i)
    for (std::size_t j = i + 1; j < c.size(); ++j)
      e -= s.coupling.value_sq(distance_squared(c[i].position, c[j].position)) * c[i].spin * c[j].spin;
  return e;
}

}  // namespace

TEST_CASE("pair_energy direct evaluation") {
  const ModelSpec s = small_spec();
  CHECK(pair_energy(Position{0, 0}, 1.0, Position{0.5, 0}, -2.0, s) == doctest::Approx(19.0).epsilon(1e-14));
  CHECK(pair_energy(Position{0, 0}, 1.0, Position{3.01, 0}, 1.0, s) == 0.0);
  CHECK(pair_energy(Position{0, 0}, 1.0, Position{0.5, 0}, 0.0, s) ==
        doctest::Approx(s.potential.value_sq(0.25, 2)));
  CHECK_THROWS(pair_energy(Position{0, 0}, 1.0, Position{0, 0}, 1.0, s));
}

TEST_CASE("potential shape") {
  const PositionPotential p = PositionPotential::singular_truncated(1.0, 1.0, 1.0);
  CHECK(p.value_sq(0.0, 2) == kInfiniteEnergy);
  CHECK(p.value_sq(1.0, 2) == 0.0);
  CHECK(p.value_sq(1.0001, 2) == 0.0);
  CHECK(p.value_sq(0.25, 3) == doctest::Approx(std::pow(0.5, -6.0) - 1.0));
  CHECK(PositionPotential::zero().value_sq(0.01, 2) == 0.0);
}

TEST_CASE("coupling profiles") {
  const SpinCoupling ind = SpinCoupling::indicator(2.0, 2.5);
  CHECK(ind.value(2.5) == 2.0);
  CHECK(ind.value(2.5000001) == 0.0);
  const SpinCoupling tab = SpinCoupling::tabulated(1.0, {1.0, 2.0}, {3.0, 1.5});
  CHECK(tab.value(0.5) == 3.0);
  CHECK(tab.value(1.5) == 1.5);
  CHECK(tab.value(2.1) == 0.0);
  CHECK(tab.phi_max() == 3.0);
  CHECK(tab.R == 2.0);
  CHECK_THROWS(SpinCoupling::tabulated(2.0, {2.0, 1.0}, {3.0, 3.0}));
  ModelSpec weak = ModelSpec::defaults();
  weak.coupling = SpinCoupling::tabulated(2.0, {2.5}, {1.0});
  CHECK_FALSE(validate_model(weak).clause_passed("M4_coupling"));
}

TEST_CASE("energies of tiny configurations") {
  const ModelSpec s = small_spec();
  MarkedConfiguration c(2, s.cell_side());
  CHECK(position_energy(c, s) == 0.0);
  CHECK(spin_energy(c, s) == 0.0);
  c.insert({Position{0, 0}, 1.0});
  CHECK(position_energy(c, s) == 0.0);
  CHECK(spin_energy(c, s) == 0.0);
  c.insert({Position{0.5, 0}, -2.0});
  CHECK(position_energy(c, s) == doctest::Approx(15.0));
  CHECK(spin_energy(c, s) == doctest::Approx(4.0));
}

TEST_CASE("cell-list energies agree with all pairs") {
  Rng rng(21);
  ModelSpec s = ModelSpec::defaults();
  for (int trial = 0; trial < 1000; ++trial) {
    s.d = 1 + static_cast<int>(rng.index(3));
    const auto c = random_config(s, rng.index(51), 3.0, rng);
    const double H = position_energy(c, s);
    const double E = spin_energy(c, s);
    REQUIRE(H == doctest::Approx(brute_H(c, s)).epsilon(1e-11));
    REQUIRE(E == doctest::Approx(brute_E(c, s)).epsilon(1e-11));
  }
}

TEST_CASE("spin-flip symmetry is exact") {
  Rng rng(4);
  const ModelSpec s = ModelSpec::defaults();
  for (int trial = 0; trial < 100; ++trial) {
    auto c = random_config(s, 30, 2.0, rng);
    auto flipped = c;
    for (std::size_t i = 0; i < c.size(); ++i) flipped.set_spin(i, -c[i].spin);
    CHECK(spin_energy(c, s) == spin_energy(flipped, s));
    const Position x{0.1, 0.2}, y{0.3, -0.1};
    CHECK(pair_energy(x, 0.7, y, -1.3, s) == pair_energy(x, -0.7, y, 1.3, s));
  }
}

TEST_CASE("raising an aligned product never raises E") {
  Rng rng(8);
  const ModelSpec s = ModelSpec::defaults();
  for (int trial = 0; trial < 200; ++trial) {
    auto c = random_config(s, 15, 1.5, rng);
    for (std::size_t i = 0; i < c.size(); ++i) c.set_spin(i, std::abs(c[i].spin));
    const double before = spin_energy(c, s);
    const std::size_t i = rng.index(c.size());
    c.set_spin(i, c[i].spin + rng.uniform(0.0, 1.0));
    CHECK(spin_energy(c, s) <= before + 1e-12);
  }
}

TEST_CASE("conditional energies") {
  const ModelSpec s = ModelSpec::defaults();
  MarkedConfiguration inside(2, s.cell_side()), boundary(2, s.cell_side());
  inside.insert({Position{0, 0}, 1.0});
  const Energies alone = conditional_energies(inside, boundary, s);
  CHECK(alone.H == 0.0);
  CHECK(alone.E == 0.0);
  boundary.insert({Position{2.0, 0}, 1.0});
  const Energies cross = conditional_energies(inside, boundary, s);
  CHECK(cross.E == doctest::Approx(-s.coupling.phi_star));
  CHECK(cross.H == 0.0);
  MarkedConfiguration clash(2, s.cell_side());
  clash.insert({Position{0, 0}, -1.0});
  CHECK_THROWS(conditional_energies(inside, clash, s));
}

TEST_CASE("conditional cross terms: brute force and additivity") {
  Rng rng(31);
  const ModelSpec s = ModelSpec::defaults();
  for (int trial = 0; trial < 200; ++trial) {
    const auto eta = random_config(s, 20, 1.5, rng);
    MarkedConfiguration g1(2, s.cell_side()), g2(2, s.cell_side()), both(2, s.cell_side());
    for (int i = 0; i < 15; ++i) {
      const Position p{rng.uniform(1.5, 4.0), rng.uniform(-3, 3)};
      const Position q{rng.uniform(-4.0, -1.5), rng.uniform(-3, 3)};
      g1.insert({p, rng.uniform(-1, 1)});
      g2.insert({q, rng.uniform(-1, 1)});
      both.insert(g1[g1.size() - 1]);
      both.insert(g2[g2.size() - 1]);
    }
    const double H0 = position_energy(eta, s), E0 = spin_energy(eta, s);
    const Energies e1 = conditional_energies(eta, g1, s);
    const Energies e2 = conditional_energies(eta, g2, s);
    const Energies e12 = conditional_energies(eta, both, s);
    // differences of large totals: tolerance relative to the totals
    CHECK(e12.H - H0 == doctest::Approx((e1.H - H0) + (e2.H - H0)).epsilon(1e-10).scale(H0));
    CHECK(e12.E - E0 == doctest::Approx((e1.E - E0) + (e2.E - E0)).epsilon(1e-10).scale(std::abs(E0)));
    double cross_H = 0.0, cross_E = 0.0;
    for (const auto& x : eta.points())
      for (const auto& y : both.points()) {
        const double d2 = distance_squared(x.position, y.position);
        cross_H += s.potential.value_sq(d2, 2);
        cross_E -= s.coupling.value_sq(d2) * x.spin * y.spin;
      }
    CHECK(e12.H - H0 == doctest::Approx(cross_H).epsilon(1e-10).scale(H0));
    CHECK(e12.E - E0 == doctest::Approx(cross_E).epsilon(1e-10).scale(std::abs(E0)));
  }
}

TEST_CASE("local terms match energy differences") {
  Rng rng(2);
  const ModelSpec s = ModelSpec::defaults();
  for (int trial = 0; trial < 100; ++trial) {
    auto c = random_config(s, 25, 1.5, rng);
    const Position x{rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)};
    const LocalTerms t = local_terms(c, nullptr, x, s);
    const double H0 = position_energy(c, s), E0 = spin_energy(c, s);
    c.insert({x, 1.0});
    CHECK(position_energy(c, s) - H0 == doctest::Approx(t.H).epsilon(1e-10).scale(H0));
    CHECK(spin_energy(c, s) - E0 == doctest::Approx(-t.field).epsilon(1e-10).scale(std::abs(E0)));
  }
}

TEST_CASE("tail integral closed form against quadrature") {
  const PositionPotential p = PositionPotential::singular_truncated(1.0, 1.0, 1.0);
  const double want = 2.0 * M_PI * 1.125;
  CHECK(p.tail_integral(0.5, 2) == doctest::Approx(want).epsilon(1e-12));
  CHECK(p.tail_integral_quadrature(0.5, 2) == doctest::Approx(want).epsilon(1e-10));
  // independent radial quadrature
  auto f = [](double s) { return (std::pow(s, -4.0) - 1.0) * s; };
  const double q = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.5, 1.0);
  CHECK(2.0 * M_PI * q == doctest::Approx(want).epsilon(1e-12));
  const PositionPotential def = ModelSpec::defaults().potential;
  for (int d = 1; d <= 4; ++d) {
    for (double delta : {0.05, 0.1, 0.2, 0.3}) {
      CHECK(def.tail_integral(delta, d) == doctest::Approx(def.tail_integral_quadrature(delta, d)).epsilon(1e-8));
    }
  }
  CHECK(def.tail_integral(0.5, 2) == 0.0);
}

TEST_CASE("spin measures") {
  Rng rng(12);
  const SpinMeasure two = SpinMeasure::two_point(1.5);
  double sum = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double s = two.sample(rng);
    CHECK(std::abs(s) == 1.5);
    sum += s;
  }
  CHECK(std::abs(sum / 20000.0) < 3.0 * 1.5 / std::sqrt(20000.0));
  CHECK(two.upper_tail(1.5) == 0.5);
  CHECK(two.mass_zero_to(1.0) == 0.0);

  const SpinMeasure uni = SpinMeasure::uniform(1.0);
  CHECK(uni.upper_tail(0.25) == doctest::Approx(0.375));
  CHECK(uni.mass_zero_to(0.25) == doctest::Approx(0.125));
  CHECK(uni.abs_moment(2.0) == doctest::Approx(1.0 / 3.0));

  const SpinMeasure quart = SpinMeasure::quartic(1.0);
  CHECK(quart.upper_tail(0.0) == doctest::Approx(0.5));
  CHECK(quart.upper_tail(0.7) + quart.mass_zero_to(0.7) == doctest::Approx(0.5));
  // E s^2 = Gamma(3/4)/Gamma(1/4) for beta = 1
  double m2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double s = quart.sample(rng);
    m2 += s * s;
  }
  const double want = std::tgamma(0.75) / std::tgamma(0.25);
  CHECK(m2 / n == doctest::Approx(want).epsilon(0.01));
  CHECK(quart.abs_moment(2.0) == doctest::Approx(want).epsilon(1e-8));
}

TEST_CASE("exponential moments") {
  CHECK(SpinMeasure::two_point(1.0).exp_moment(1.0, 5.0) == doctest::Approx(std::exp(1.0)));
  const double m = SpinMeasure::uniform(1.0).exp_moment(1.0, 2.0);
  const double want = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
      [](double s) { return std::exp(s * s); }, 0.0, 1.0);
  CHECK(m == doctest::Approx(want).epsilon(1e-10));
  CHECK(std::isinf(SpinMeasure::quartic(1.0).exp_moment(1.0, 5.0)));
  CHECK(std::isinf(SpinMeasure::quartic(1.0).exp_moment(1.0, 4.0)));
  CHECK(std::isfinite(SpinMeasure::quartic(2.0).exp_moment(1.0, 4.0)));
  CHECK(std::isfinite(SpinMeasure::quartic(1.0).exp_moment(1.0, 3.5)));
}

TEST_CASE("validation of the default model") {
  const ValidationReport r = validate_model(ModelSpec::defaults());
  for (const auto& c : r.clauses) {
    INFO(c.id << ": " << c.detail);
    if (!c.informational) CHECK(c.passed);
  }
  CHECK(r.passed());
  REQUIRE(r.superstability);
  CHECK(r.superstability->A_fit > 0.0);
}

TEST_CASE("validation example with r = 0.5 and phi_star = 1") {
  ModelSpec s = ModelSpec::defaults();
  s.potential = PositionPotential::singular_truncated(1.0, 1.0, 0.5);
  s.coupling = SpinCoupling::indicator(1.0, 2.5);
  const ValidationReport r = validate_model(s);
  CHECK(r.clause_passed("M6_r_lt_R4"));
  CHECK(r.passed());
}

TEST_CASE("validation failures") {
  ModelSpec s = ModelSpec::defaults();
  s.potential.r = s.coupling.R / 3.0;
  const ValidationReport r = validate_model(s);
  CHECK_FALSE(r.clause_passed("M6_r_lt_R4"));
  CHECK_FALSE(r.passed());

  ModelSpec q = ModelSpec::defaults();
  q.chi = SpinMeasure::quartic(1.0);
  const ValidationReport rq = validate_model(q);
  CHECK_FALSE(rq.clause_passed("M5_exp_moment"));

  q.v = 6;
  q.w = 3;
  q.u = 3.5;
  CHECK(validate_model(q).passed());

  ModelSpec bad = ModelSpec::defaults();
  bad.w = 3;
  CHECK_FALSE(validate_model(bad).clause_passed("temperedness_vw"));
  bad = ModelSpec::defaults();
  bad.u = 4.0;
  CHECK_FALSE(validate_model(bad).clause_passed("M5_u_gt_w"));
}

TEST_CASE("superstability fit") {
  Rng rng(77);
  const ModelSpec s = ModelSpec::defaults();
  const SuperstabilityFit fit = validate_superstability(s, 1000, rng);
  CHECK(fit.A_fit > 0.0);
  CHECK(fit.B_fit >= fit.A_fit);
  CHECK(fit.recheck_trials >= 1000);
  CHECK(fit.violations == 0);
  CHECK(fit.pass);

  // single points read 0 >= A - B
  MarkedConfiguration one(2, s.cell_side());
  one.insert({Position{0.1, 0.1}, 1.0});
  const SuperstabilitySample ss = superstability_sample(one, s);
  CHECK(ss.H == 0.0);
  CHECK(superstability_holds(ss, fit.A_fit, fit.B_fit));
  CHECK_FALSE(superstability_holds(ss, 1.0, 0.5));

  // clustered 10-point cell
  MarkedConfiguration cl(2, s.cell_side());
  while (cl.size() < 10) {
    const Position p{rng.normal() * 0.1, rng.normal() * 0.1};
    if (!cl.contains_position(p)) cl.insert({p, 1.0});
  }
  CHECK(superstability_holds(superstability_sample(cl, s), fit.A_fit, fit.B_fit));
}

TEST_CASE("zero potential: any A with B = A passes") {
  Rng rng(7);
  ModelSpec s = ModelSpec::defaults();
  s.potential = PositionPotential::zero();
  const SuperstabilityFit fit = validate_superstability(s, 200, rng);
  CHECK(fit.A_fit == 0.0);
  CHECK_FALSE(fit.pass);
}
