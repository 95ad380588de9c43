#ifndef FERROLAB_CRITERIA_HPP
#define FERROLAB_CRITERIA_HPP

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ferrolab/config_space.hpp"
#include "ferrolab/interaction.hpp"

namespace ferrolab {

// Largest a > 0 with chi([a sqrt2, inf)) >= chi([0, a]). For atomic measures the
// supremum is not attained and sup - tol is returned.
double wells_threshold(const SpinMeasure& chi, double tol = 1e-10);
// Same rule for arbitrary tail functions: upper(x) = chi([x, inf)), lower(x) = chi([0, x]).
double wells_threshold(const std::function<double(double)>& upper, const std::function<double(double)>& lower,
                       bool atomic, double tol = 1e-10);

struct CouplingCheck {
  bool holds = false;
  double threshold = 0.0;  // (a^2/2) log((1+q)/(1-q))
  double slack = 0.0;      // phi_star - threshold
};

CouplingCheck coupling_condition(double phi_star, double a, double q);

// (l - 2r)^d, or 0 when the layer of thickness r swallows the cell.
double core_volume(const ModelSpec& spec);
double ball_volume(int d, double radius);

struct GStar {
  double g_star = 0.0;
  double c_opt = 0.0;
  double v_star = 0.0;
  double C_delta = 0.0;
  double delta = 0.0;
  double core_volume = 0.0;
  bool ok = false;
};

// sup_c (1/2) e^{-c} (v* - K/c), K = (n* - 1) C_delta, by golden-section search over log c.
GStar g_star(const ModelSpec& spec, std::size_t n_star, std::optional<double> delta = std::nullopt);
double g_star_objective(double c, double v_star, double K);
// Maximizer of g_star_objective on c > K / v*.
double g_star_maximize(double v_star, double K);

// Integral of exp(s h) d chi(s).
double spin_laplace(const SpinMeasure& chi, double h);

struct GIntegral {
  double value = 0.0;
  double coarse_value = 0.0;  // same rule with half the panels
  double min_G = 0.0;
  std::size_t nodes = 0;
  double error_estimate = 0.0;  // |value - coarse_value| for the fixed rule
  bool converged = false;
};

// Integral over Delta (cell k minus its closed boundary layer of thickness r) of
// exp(-sum_y Phi(x - y)) G(x), G(x) = integral of exp(s sum_y phi(x - y) sigma_y) d chi(s).
GIntegral g_integral(const MarkedConfiguration& config, const CellKey& cell, const ModelSpec& spec,
                     std::size_t panels = 8);

// Globally adaptive version: splits the box with the largest |4-point - 3-point|
// tensor Gauss difference until the summed estimate is below rel_tol * value.
// G jumps across the spheres |x - y| = R, which fixed panels resolve only linearly.
GIntegral g_integral_adaptive(const MarkedConfiguration& config, const CellKey& cell, const ModelSpec& spec,
                              double rel_tol = 1e-3, std::size_t max_boxes = 200000);

// 1 / (Vol(B_R) (1 - exp(-2 phi0 a^2))) with a the largest spin in the support of chi.
double uniqueness_activity(const ModelSpec& spec, double phi0);

struct Inequality {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
  std::string relation;  // ">" or "<"
};

struct CriteriaReport {
  int d = 2;
  double q = 0.0;
  double phi_star = 0.0;
  double a = 0.0;
  CouplingCheck coupling;
  double p_site = 0.0;
  double theta = 0.0;
  double m_c = 0.0;
  std::size_t n_star = 0;
  double h_n_star = 0.0;
  double q0_lower = 0.0;
  double q0 = 0.0;
  GStar g;
  double t_star = 0.0;
  double z_c = 0.0;
  std::vector<Inequality> inequalities;
  bool passed = false;
  std::string message;

  // Occupation floor 1 - 1/(z t_star).
  double occupation_floor(double z) const { return 1.0 - 1.0 / (z * t_star); }
};

struct CriteriaOptions {
  std::optional<double> delta;
  std::size_t max_n = 1000000;
  double wells_tol = 1e-10;
};

CriteriaReport choose_parameters(const ModelSpec& spec, double q, const CriteriaOptions& options = {});

}  // namespace ferrolab

#endif  // FERROLAB_CRITERIA_HPP
