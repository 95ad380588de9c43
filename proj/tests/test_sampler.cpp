#include <doctest.h>

#include <cmath>
#include <sstream>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "ferrolab/sampler.hpp"

using namespace ferrolab;

namespace {

ModelSpec free_gas(double z) {
  ModelSpec s = ModelSpec::defaults();
  s.potential = PositionPotential::zero();
  s.coupling = SpinCoupling::indicator(0.0, 2.5);
  s.z = z;
  return s;
}

MarkedConfiguration random_positions(const ModelSpec& s, std::size_t n, double box, Rng& rng) {
  MarkedConfiguration c(s.d, s.cell_side());
  while (c.size() < n) {
    const Position p{rng.uniform(-box, box), rng.uniform(-box, box)};
    if (!c.contains_position(p)) c.insert({p, 1.0});
  }
  return c;
}

}  // namespace

TEST_CASE("Poisson sampler") {
  Rng rng(1);
  const SpinMeasure chi = SpinMeasure::two_point(0.5);
  CHECK(sample_poisson_marked(5.0, Region::empty(1), 3.0, chi, rng).empty());

  // one cell of side 3 in d = 1 has volume 3
  const Region one = Region::box(1, 0);
  const int draws = 100000;
  double sum = 0.0, sum2 = 0.0, spin_sum = 0.0;
  std::size_t spins = 0;
  for (int i = 0; i < draws; ++i) {
    const auto c = sample_poisson_marked(2.0, one, 3.0, chi, rng);
    const double n = static_cast<double>(c.size());
    sum += n;
    sum2 += n * n;
    for (const auto& p : c.points()) {
      REQUIRE(std::abs(p.spin) == 0.5);
      REQUIRE(one.contains_point(p.position, 3.0));
      spin_sum += p.spin;
      ++spins;
    }
  }
  const double mean = sum / draws;
  const double var = sum2 / draws - mean * mean;
  CHECK(std::abs(mean - 6.0) < 3.0 * std::sqrt(6.0 / draws));
  // variance of the sample variance for Poisson(6) is about (mu + 2 mu^2) / n
  CHECK(std::abs(var - 6.0) < 3.0 * std::sqrt((6.0 + 2.0 * 36.0) / draws));
  CHECK(std::abs(spin_sum / spins) < 3.0 * 0.5 / std::sqrt(static_cast<double>(spins)));
}

TEST_CASE("collar and boundary classes") {
  const ModelSpec s = ModelSpec::defaults();
  const Region box = Region::box(2, 1);
  const auto collar = collar_cells(box, s.cell_side(), s.interaction_range());
  for (const auto& k : collar) CHECK_FALSE(box.contains(k));
  // R = 2.5 and l = 0.884: gaps up to 2.5 reach 3 cells out along the axes
  CHECK(std::find(collar.begin(), collar.end(), CellKey{4, 0}) != collar.end());
  CHECK(std::find(collar.begin(), collar.end(), CellKey{5, 0}) == collar.end());

  const auto plus = BoundaryCondition::signed_class(box, s, 3, 1.0, 1);
  CHECK(plus.kind == BoundaryKind::plus);
  CHECK(plus.satisfies_class(box, s));
  CHECK(plus.collar.size() == 3 * collar.size());
  const auto minus = plus.mirrored();
  CHECK(minus.kind == BoundaryKind::minus);
  CHECK(minus.satisfies_class(box, s));
  for (std::size_t i = 0; i < plus.collar.size(); ++i) {
    CHECK(minus.collar[i].spin == -plus.collar[i].spin);
    CHECK(minus.collar[i].position == plus.collar[i].position);
  }
  CHECK_THROWS(BoundaryCondition::signed_class(box, s, 0, 1.0, 1));
  CHECK_THROWS(BoundaryCondition::signed_class(box, s, 1, 0.0, 1));
  // 16 points per cell need spacing 0.221 < r
  CHECK_THROWS(BoundaryCondition::signed_class(box, s, 16, 1.0, 1));
  CHECK(BoundaryCondition::free_boundary(s).collar.empty());
}

TEST_CASE("acceptance ratios are reciprocal between birth and death") {
  for (double z : {0.1, 3.0, 900.0}) {
    for (std::size_t n : {0, 1, 7}) {
      const double dH = 0.37, dE = -1.25, V = 2.5;
      CHECK(log_birth_ratio(z, V, n, dH, dE) + log_death_ratio(z, V, n + 1, -dH, -dE) ==
            doctest::Approx(0.0).epsilon(1e-12));
      CHECK(log_birth_ratio(z, V, n, dH, dE) == doctest::Approx(std::log(z * V / (n + 1.0)) - dH - dE));
    }
  }
}

TEST_CASE("logged move records satisfy detailed balance") {
  ModelSpec s = ModelSpec::defaults();
  s.z = 40.0;
  const Region box = Region::box(2, 1);
  const auto bc = BoundaryCondition::signed_class(box, s, 2, 1.0, 1);
  ChainState st = make_chain(s, box, bc, 2, 1.0, 17, 0);
  for (int i = 0; i < 20000; ++i) {
    const Energies before = st.energies();
    const MoveRecord rec = mcmc_step(st, MoveMix{});
    if (!rec.proposed) continue;
    if (rec.type == MoveType::birth) {
      REQUIRE(rec.log_acceptance == log_birth_ratio(s.z, rec.volume, rec.n_before, rec.dH, rec.dE));
    } else if (rec.type == MoveType::death) {
      REQUIRE(rec.log_acceptance == log_death_ratio(s.z, rec.volume, rec.n_before, rec.dH, rec.dE));
    } else {
      REQUIRE(rec.log_acceptance == doctest::Approx(-rec.dH - rec.dE));
    }
    if (!rec.accepted) {
      REQUIRE(st.energies().H == before.H);
      REQUIRE(st.energies().E == before.E);
    }
  }
  CHECK(st.cache_drift() < 1e-9);
}

TEST_CASE("birth then death of the same point restores the energy cache") {
  ModelSpec s = ModelSpec::defaults();
  s.z = 5.0;
  const Region cell = Region::box(2, 0);
  const auto bc = BoundaryCondition::free_boundary(s);
  ChainState st(cell, bc, s, MarkedConfiguration(2, s.cell_side()), Rng(3));
  const Energies e0 = st.energies();
  MoveRecord birth;
  do {
    birth = mcmc_move(st, MoveType::birth, -1.0);
  } while (!birth.accepted);
  MoveRecord death;
  do {
    death = mcmc_move(st, MoveType::death, -1.0);
  } while (!death.accepted);
  CHECK(death.dH == -birth.dH);
  CHECK(death.dE == -birth.dE);
  CHECK(st.energies().H == e0.H);
  CHECK(st.energies().E == e0.E);
}

TEST_CASE("empty region leaves the state alone") {
  const ModelSpec s = ModelSpec::defaults();
  ChainState st(Region::empty(2), BoundaryCondition::free_boundary(s), s, MarkedConfiguration(2, s.cell_side()),
                Rng(1));
  for (int i = 0; i < 100; ++i) {
    const MoveRecord rec = mcmc_step(st, MoveMix{});
    CHECK_FALSE(rec.accepted);
  }
  CHECK(st.config().empty());
  std::uint64_t proposed = 0;
  for (auto p : st.counters().proposed) proposed += p;
  CHECK(proposed == 100);
}

TEST_CASE("move mix validation") {
  CHECK_NOTHROW(MoveMix{}.validate());
  CHECK_THROWS(MoveMix{0.4, 0.3, 0.2, 0.1}.validate());
  CHECK_THROWS(MoveMix{0.35, 0.35, 0.5, -0.2}.validate());
}

TEST_CASE("heat bath single-site laws") {
  ModelSpec s = ModelSpec::defaults();
  s.coupling = SpinCoupling::indicator(1.0, 2.5);
  Rng rng(5);
  MarkedConfiguration one(2, s.cell_side());
  one.insert({Position{0.0, 0.0}, 1.0});
  // no field: fair coin
  int plus = 0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    quenched_spin_sweep(one, nullptr, s, rng, nullptr);
    plus += one[0].spin > 0;
  }
  CHECK(std::abs(plus / double(n) - 0.5) < 4.0 * std::sqrt(0.25 / n));
  CHECK(draw_tilted(s.chi, 0.0, 0.4999, nullptr) == 1.0);
  CHECK(draw_tilted(s.chi, 0.0, 0.5001, nullptr) == -1.0);

  MarkedConfiguration nb(2, s.cell_side());
  nb.insert({Position{1.0, 0.0}, 1.0});
  plus = 0;
  for (int i = 0; i < n; ++i) {
    quenched_spin_sweep(one, &nb, s, rng, nullptr);
    plus += one[0].spin > 0;
  }
  const double p = std::exp(1.0) / (std::exp(1.0) + std::exp(-1.0));
  CHECK(p == doctest::Approx(0.8808).epsilon(1e-4));
  CHECK(std::abs(plus / double(n) - p) < 3.0 * std::sqrt(p * (1 - p) / n));
}

TEST_CASE("tabulated tilted sampler matches closed forms") {
  TiltedSpinSampler uni(SpinMeasure::uniform(1.0));
  const double want = 1.0 / std::tanh(1.0) - 1.0;
  CHECK(want == doctest::Approx(0.3130).epsilon(1e-3));
  CHECK(uni.table_mean(1.0) == doctest::Approx(want).epsilon(1e-4));
  Rng rng(6);
  double sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) sum += uni.sample(1.0, rng.uniform01());
  CHECK(std::abs(sum / n - want) < 3.0 * std::sqrt((1.0 / 3.0) / n));

  TiltedSpinSampler quart(SpinMeasure::quartic(1.0));
  using boost::math::quadrature::gauss_kronrod;
  for (double h : {0.0, 0.5, 2.0}) {
    const double num = gauss_kronrod<double, 61>::integrate(
        [h](double s) { return s * std::exp(h * s - s * s * s * s); }, -6.0, 6.0);
    const double den = gauss_kronrod<double, 61>::integrate(
        [h](double s) { return std::exp(h * s - s * s * s * s); }, -6.0, 6.0);
    CHECK(quart.table_mean(h) == doctest::Approx(num / den).epsilon(2e-3).scale(1e-3));
  }
  CHECK(uni.cached_tables() >= 1);
  // the symmetric law is reproduced by mirroring
  CHECK(draw_tilted(SpinMeasure::two_point(1.0), 0.0, 0.25, nullptr) ==
        -draw_tilted(SpinMeasure::two_point(1.0), 0.0, 0.75, nullptr));
  CHECK_THROWS(draw_tilted(SpinMeasure::uniform(1.0), 0.0, 0.5, nullptr));
}

TEST_CASE("exact spin measure small cases") {
  ModelSpec s = ModelSpec::defaults();
  s.coupling = SpinCoupling::indicator(0.7, 2.5);
  MarkedConfiguration two(2, s.cell_side());
  two.insert({Position{0, 0}, 1.0});
  two.insert({Position{1.2, 0}, 1.0});
  const ExactSpinMeasure m = exact_spin_measure(two, nullptr, s);
  CHECK(m.pair_correlation(0, 1) == doctest::Approx(std::tanh(0.7)).epsilon(1e-13));
  CHECK(m.marginal_plus(0) == doctest::Approx(0.5));

  s.coupling.phi_star = 0.0;
  Rng rng(3);
  const auto c = random_positions(s, 6, 1.0, rng);
  const ExactSpinMeasure z = exact_spin_measure(c, nullptr, s);
  for (std::size_t i = 0; i < 6; ++i) CHECK(z.marginal_plus(i) == doctest::Approx(0.5));
  double total = 0.0;
  for (double p : z.probability) total += p;
  CHECK(total == doctest::Approx(1.0));
}

TEST_CASE("heat bath chain reproduces exact marginals") {
  ModelSpec s = ModelSpec::defaults();
  s.coupling = SpinCoupling::indicator(0.3, 2.5);
  Rng rng(99);
  auto c = random_positions(s, 6, 2.0, rng);
  MarkedConfiguration bnd(2, s.cell_side());
  bnd.insert({Position{3.0, 0.0}, 1.0});
  bnd.insert({Position{0.0, -3.2}, 1.0});
  const ExactSpinMeasure ex = exact_spin_measure(c, &bnd, s);
  const int sweeps = 100000;
  std::vector<double> plus(c.size(), 0.0);
  for (int t = 0; t < sweeps; ++t) {
    quenched_spin_sweep(c, &bnd, s, rng, nullptr);
    for (std::size_t i = 0; i < c.size(); ++i) plus[i] += c[i].spin > 0;
  }
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double p = ex.marginal_plus(i);
    // generous allowance for autocorrelation at this weak coupling
    CHECK(std::abs(plus[i] / sweeps - p) < 4.0 * 3.0 * std::sqrt(p * (1 - p) / sweeps));
  }
}

TEST_CASE("floor coupling lowers the plus marginal under a plus boundary") {
  ModelSpec s = ModelSpec::defaults();
  s.coupling = SpinCoupling::tabulated(0.4, {1.0, 2.5}, {1.1, 0.6});
  Rng rng(8);
  const auto c = random_positions(s, 5, 1.5, rng);
  MarkedConfiguration bnd(2, s.cell_side());
  bnd.insert({Position{2.5, 0.5}, 1.0});
  const ExactSpinMeasure full = exact_spin_measure(c, &bnd, s, false);
  const ExactSpinMeasure floor = exact_spin_measure(c, &bnd, s, true);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(floor.marginal_plus(i) <= full.marginal_plus(i) + 1e-14);
}

TEST_CASE("run_chain contracts") {
  ModelSpec s = ModelSpec::defaults();
  s.z = 60.0;
  const Region box = Region::box(2, 1);
  const auto bc = BoundaryCondition::signed_class(box, s, 2, 1.0, 1);
  {
    ChainState st = make_chain(s, box, bc, 2, 1.0, 4, 0);
    CHECK(run_chain(st, RunOptions{}).rows.empty());
  }
  RunOptions opt;
  opt.sweeps = 60;
  opt.burn_in = 10;
  opt.thin = 5;
  opt.record_cells = true;
  ChainState a = make_chain(s, box, bc, 2, 1.0, 4, 0);
  ChainState b = make_chain(s, box, bc, 2, 1.0, 4, 0);
  const Trace ta = run_chain(a, opt);
  const Trace tb = run_chain(b, opt);
  REQUIRE(ta.rows.size() == 10);
  std::ostringstream sa, sb;
  write_trace_csv(sa, ta);
  write_trace_csv(sb, tb);
  CHECK(sa.str() == sb.str());
  CHECK(sa.str().rfind("sweep,N,M,H,E,cell0_count\n", 0) == 0);
  CHECK(ta.cell_counts.size() == ta.rows.size());
  CHECK(ta.cell_counts.front().size() == box.cell_count());
  CHECK(ta.max_drift < 1e-9);
  for (std::size_t i = 0; i < ta.rows.size(); ++i) {
    std::uint32_t total = 0;
    for (auto k : ta.cell_counts[i]) total += k;
    CHECK(total == ta.rows[i].N);
  }
  opt.burn_in = 60;
  CHECK_THROWS(run_chain(a, opt));
}

TEST_CASE("mirrored chains are exact spin-flip images") {
  ModelSpec s = ModelSpec::defaults();
  s.z = 300.0;
  const Region box = Region::box(2, 1);
  const auto plus = BoundaryCondition::signed_class(box, s, 1, 1.0, 1);
  ChainState p = make_chain(s, box, plus, 2, 1.0, 10, 3, 1.0);
  ChainState m = make_chain(s, box, plus.mirrored(), 2, -1.0, 10, 3, -1.0);
  RunOptions opt;
  opt.sweeps = 50;
  opt.burn_in = 5;
  const Trace tp = run_chain(p, opt);
  const Trace tm = run_chain(m, opt);
  REQUIRE(tp.rows.size() == tm.rows.size());
  for (std::size_t i = 0; i < tp.rows.size(); ++i) {
    CHECK(tp.rows[i].N == tm.rows[i].N);
    CHECK(tp.rows[i].M == -tm.rows[i].M);
    CHECK(tp.rows[i].E == tm.rows[i].E);
  }
}

TEST_CASE("continuous spins: mirrored chains stay exact images") {
  ModelSpec s = ModelSpec::defaults();
  s.chi = SpinMeasure::uniform(1.0);
  s.z = 50.0;
  const Region box = Region::box(2, 1);
  const auto plus = BoundaryCondition::signed_class(box, s, 1, 0.4, 1);
  ChainState p = make_chain(s, box, plus, 1, 0.5, 2, 0, 1.0);
  ChainState m = make_chain(s, box, plus.mirrored(), 1, -0.5, 2, 0, -1.0);
  RunOptions opt;
  opt.sweeps = 30;
  opt.burn_in = 5;
  const Trace tp = run_chain(p, opt);
  const Trace tm = run_chain(m, opt);
  for (std::size_t i = 0; i < tp.rows.size(); ++i) CHECK(tp.rows[i].M == -tm.rows[i].M);
}

TEST_CASE("free boundary magnetisation is symmetric") {
  ModelSpec s = ModelSpec::defaults();
  s.coupling = SpinCoupling::indicator(0.2, 2.5);
  s.z = 5.0;
  const Region box = Region::box(2, 1);
  const auto bc = BoundaryCondition::free_boundary(s);
  std::vector<double> means;
  for (std::uint64_t c = 0; c < 16; ++c) {
    ChainState st = make_chain(s, box, bc, 1, c % 2 ? 1.0 : -1.0, 123, c);
    RunOptions opt;
    opt.sweeps = 400;
    opt.burn_in = 50;
    const Trace t = run_chain(st, opt);
    double m = 0.0;
    for (const auto& r : t.rows) m += r.M;
    means.push_back(m / t.rows.size());
  }
  double mean = 0.0;
  for (double m : means) mean += m;
  mean /= means.size();
  double ss = 0.0;
  for (double m : means) ss += (m - mean) * (m - mean);
  const double se = std::sqrt(ss / (means.size() - 1) / means.size());
  CHECK(std::abs(mean) < 3.0 * se);
}

TEST_CASE("energy cache drift over a million moves") {
  ModelSpec s = ModelSpec::defaults();
  s.z = 200.0;
  const Region box = Region::box(2, 1);
  const auto bc = BoundaryCondition::signed_class(box, s, 2, 1.0, 1);
  ChainState st = make_chain(s, box, bc, 2, 1.0, 5, 0);
  for (int i = 0; i < 1000000; ++i) mcmc_step(st, MoveMix{});
  CHECK(st.cache_drift() < 1e-9);
}

TEST_CASE("chain construction checks") {
  const ModelSpec s = ModelSpec::defaults();
  const Region box = Region::box(2, 1);
  MarkedConfiguration wrong(2, 1.0);
  CHECK_THROWS(ChainState(box, BoundaryCondition::free_boundary(s), s, wrong, Rng(1)));
  MarkedConfiguration outside(2, s.cell_side());
  outside.insert({Position{5.0, 0.0}, 1.0});
  CHECK_THROWS(ChainState(box, BoundaryCondition::free_boundary(s), s, outside, Rng(1)));
  CHECK_THROWS(make_chain(s, box, BoundaryCondition::free_boundary(s), 1, 1.0, 1, 0, 0.5));
}

TEST_CASE("ideal gas chain has Poisson mean and variance") {
  const Region cell = Region::box(2, 0);
  ModelSpec s = free_gas(1.0);
  s.z = 6.0 / cell.volume(s.cell_side());
  ChainState st(cell, BoundaryCondition::free_boundary(s), s, MarkedConfiguration(2, s.cell_side()), Rng(14));
  CHECK(st.sweep_length() == 1);
  st.set_sweep_length(6);
  RunOptions opt;
  opt.sweeps = 60000;
  opt.burn_in = 100;
  opt.thin = 6;
  const Trace t = run_chain(st, opt);
  double sum = 0.0, sum2 = 0.0;
  for (const auto& r : t.rows) {
    sum += r.N;
    sum2 += double(r.N) * r.N;
  }
  const double n = t.rows.size();
  const double mean = sum / n;
  CHECK(mean == doctest::Approx(6.0).epsilon(0.03));
  CHECK(sum2 / n - mean * mean == doctest::Approx(6.0).epsilon(0.06));
}
