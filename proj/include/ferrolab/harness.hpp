#ifndef FERROLAB_HARNESS_HPP
#define FERROLAB_HARNESS_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ferrolab/criteria.hpp"
#include "ferrolab/interaction.hpp"
#include "ferrolab/percolation.hpp"
#include "ferrolab/sampler.hpp"

namespace ferrolab {

inline constexpr const char* kCodeVersion = "0.1.0";

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct McmcConfig {
  std::size_t sweeps = 300;
  std::size_t burn_in = 100;
  std::size_t thin = 2;
  std::size_t chains = 4;
  std::uint64_t seed = 1;
  MoveMix mix;
  double translate_step = -1.0;
  std::size_t start_per_cell = 4;  // 0 starts from the empty configuration
  std::size_t threads = 0;  // 0 = hardware concurrency
};

enum class PhaseRegime { ordered, uniqueness };

struct GridConfig {
  std::vector<double> z;
  std::vector<double> z_over_zc = {2.0};
  std::vector<double> q = {0.0, 0.5, 0.9};
  std::vector<BoundaryKind> boundaries = {BoundaryKind::plus, BoundaryKind::minus, BoundaryKind::free};
  PhaseRegime regime = PhaseRegime::ordered;
};

struct ExperimentConfig {
  std::string experiment = "criteria";
  ModelSpec model = ModelSpec::defaults();
  double criteria_q = 0.9;
  std::optional<double> criteria_delta;
  // Box side lengths in cells; odd so the origin cell sits at the centre.
  std::vector<int> box_cells = {3, 5, 7};
  McmcConfig mcmc;
  GridConfig grid;
};

// Flat "key = value" document; '#' starts a comment; lists are comma separated.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig parse_config_string(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
// Every key in a fixed order; parse_config(canonical_config(c)) reproduces c.
std::string canonical_config(const ExperimentConfig& cfg);
std::uint64_t config_hash(const ExperimentConfig& cfg);
std::string hash_hex(std::uint64_t h);
// Structural checks on the run parameters; throws ConfigError.
void check_config(const ExperimentConfig& cfg);
Region box_region(int d, int box_cells);

struct PhaseRow {
  double z = 0.0;
  int box_cells = 0;
  std::string boundary;
  std::size_t chains = 0;
  std::size_t sweeps = 0;
  double M_mean = 0.0;
  double M_stderr = 0.0;
  double N_mean = 0.0;
  double N_stderr = 0.0;
  bool equilibrated = false;
  double rhat_M = 0.0;
  double rhat_N = 0.0;
  double occupation_p = 0.0;
  double occupation_stderr = 0.0;
};

struct PercolationRow {
  double z = 0.0;
  int box_cells = 0;
  double q = 0.0;
  std::size_t chains = 0;
  std::size_t samples = 0;
  double perc_prob = 0.0;
  double perc_stderr = 0.0;
  double two_theta = 0.0;
  bool meets_bound = false;
};

struct ExperimentReport {
  std::string experiment;
  std::string config_text;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::optional<CriteriaReport> criteria;
  std::optional<ValidationReport> validation;
  std::vector<PhaseRow> phase;
  std::vector<PercolationRow> percolation;
  nlohmann::ordered_json summary = nlohmann::ordered_json::object();

  nlohmann::ordered_json to_json() const;
};

nlohmann::ordered_json to_json(const ValidationReport& r);
nlohmann::ordered_json to_json(const CriteriaReport& r);

// Throws ValidationError when the model fails validation.
void require_valid(const ExperimentConfig& cfg);

ExperimentReport run_validate(const ExperimentConfig& cfg);
ExperimentReport run_criteria(const ExperimentConfig& cfg);
ExperimentReport run_phase_experiment(const ExperimentConfig& cfg);
ExperimentReport run_percolation_experiment(const ExperimentConfig& cfg);
ExperimentReport run_experiment(const ExperimentConfig& cfg);

// Activities visited by the phase and percolation runs, ascending.
std::vector<double> activity_grid(const ExperimentConfig& cfg, const CriteriaReport& criteria);

// Gelman-Rubin potential scale reduction over equal-length chains.
double gelman_rubin(const std::vector<std::vector<double>>& chains);

// Writes report.json, the experiment CSV and, for phase runs, M-vs-z series.
// Returns the written paths.
std::vector<std::filesystem::path> emit(const ExperimentReport& report, const std::filesystem::path& dir);

void write_phase_csv(std::ostream& out, const std::vector<PhaseRow>& rows);
void write_percolation_csv(std::ostream& out, const std::vector<PercolationRow>& rows);
std::vector<PhaseRow> read_phase_csv(std::istream& in);
std::vector<PercolationRow> read_percolation_csv(std::istream& in);

}  // namespace ferrolab

#endif  // FERROLAB_HARNESS_HPP
