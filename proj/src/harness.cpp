#include "ferrolab/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "ferrolab/rng.hpp"

namespace ferrolab {

namespace {

using json = nlohmann::ordered_json;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  if (trim(value).empty()) return out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double x = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), x);
  if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return x;
}

template <typename Int>
Int to_int(const std::string& key, const std::string& v) {
  Int x = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), x);
  if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
  return x;
}

std::vector<double> to_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& item : split_list(v)) out.push_back(to_double(key, item));
  return out;
}

std::string join_doubles(const std::vector<double>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ", ";
    out += format_double(xs[i]);
  }
  return out;
}

BoundaryKind boundary_from_name(const std::string& key, const std::string& name) {
  if (name == "plus") return BoundaryKind::plus;
  if (name == "minus") return BoundaryKind::minus;
  if (name == "free") return BoundaryKind::free;
  throw ConfigError(key + ": unknown boundary '" + name + "'");
}

const char* family_name(PotentialFamily f) { return f == PotentialFamily::zero ? "zero" : "singular_truncated"; }

const char* spin_family_name(SpinFamily f) {
  switch (f) {
    case SpinFamily::two_point: return "two_point";
    case SpinFamily::uniform: return "uniform";
    case SpinFamily::quartic: return "quartic";
  }
  return "two_point";
}

struct Field {
  const char* key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    auto num = [&f](const char* key, auto member) {
      f.push_back({key, [key, member](ExperimentConfig& c, const std::string& v) { member(c) = to_double(key, v); },
                   [member](const ExperimentConfig& c) { return format_double(member(const_cast<ExperimentConfig&>(c))); }});
    };
    auto count = [&f](const char* key, auto member) {
      f.push_back({key,
                   [key, member](ExperimentConfig& c, const std::string& v) {
                     using T = std::remove_reference_t<decltype(member(c))>;
                     member(c) = to_int<T>(key, v);
                   },
                   [member](const ExperimentConfig& c) {
                     return std::to_string(member(const_cast<ExperimentConfig&>(c)));
                   }});
    };
    f.push_back({"experiment",
                 [](ExperimentConfig& c, const std::string& v) {
                   if (v != "phase" && v != "percolation" && v != "criteria" && v != "validate") {
                     throw ConfigError("experiment: unknown tag '" + v + "'");
                   }
                   c.experiment = v;
                 },
                 [](const ExperimentConfig& c) { return c.experiment; }});
    count("model.d", [](ExperimentConfig& c) -> int& { return c.model.d; });
    f.push_back({"model.potential",
                 [](ExperimentConfig& c, const std::string& v) {
                   if (v == "zero") c.model.potential.family = PotentialFamily::zero;
                   else if (v == "singular_truncated") c.model.potential.family = PotentialFamily::singular_truncated;
                   else throw ConfigError("model.potential: unknown family '" + v + "'");
                 },
                 [](const ExperimentConfig& c) { return std::string(family_name(c.model.potential.family)); }});
    num("model.c", [](ExperimentConfig& c) -> double& { return c.model.potential.c; });
    num("model.eps_phi", [](ExperimentConfig& c) -> double& { return c.model.potential.eps; });
    num("model.r", [](ExperimentConfig& c) -> double& { return c.model.potential.r; });
    num("model.phi_star", [](ExperimentConfig& c) -> double& { return c.model.coupling.phi_star; });
    num("model.R", [](ExperimentConfig& c) -> double& { return c.model.coupling.R; });
    f.push_back({"model.coupling_radii",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.model.coupling.table_radii = to_doubles("model.coupling_radii", v);
                 },
                 [](const ExperimentConfig& c) { return join_doubles(c.model.coupling.table_radii); }});
    f.push_back({"model.coupling_values",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.model.coupling.table_values = to_doubles("model.coupling_values", v);
                 },
                 [](const ExperimentConfig& c) { return join_doubles(c.model.coupling.table_values); }});
    f.push_back({"model.chi",
                 [](ExperimentConfig& c, const std::string& v) {
                   if (v == "two_point") c.model.chi.family = SpinFamily::two_point;
                   else if (v == "uniform") c.model.chi.family = SpinFamily::uniform;
                   else if (v == "quartic") c.model.chi.family = SpinFamily::quartic;
                   else throw ConfigError("model.chi: unknown spin family '" + v + "'");
                 },
                 [](const ExperimentConfig& c) { return std::string(spin_family_name(c.model.chi.family)); }});
    num("model.chi_param", [](ExperimentConfig& c) -> double& { return c.model.chi.param; });
    num("model.z", [](ExperimentConfig& c) -> double& { return c.model.z; });
    count("model.v", [](ExperimentConfig& c) -> int& { return c.model.v; });
    count("model.w", [](ExperimentConfig& c) -> int& { return c.model.w; });
    num("model.u", [](ExperimentConfig& c) -> double& { return c.model.u; });
    num("model.kappa", [](ExperimentConfig& c) -> double& { return c.model.kappa; });
    num("model.eps", [](ExperimentConfig& c) -> double& { return c.model.eps; });
    num("criteria.q", [](ExperimentConfig& c) -> double& { return c.criteria_q; });
    f.push_back({"criteria.delta",
                 [](ExperimentConfig& c, const std::string& v) {
                   if (v == "auto") c.criteria_delta.reset();
                   else c.criteria_delta = to_double("criteria.delta", v);
                 },
                 [](const ExperimentConfig& c) {
                   return c.criteria_delta ? format_double(*c.criteria_delta) : std::string("auto");
                 }});
    f.push_back({"geometry.box_cells",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.box_cells.clear();
                   for (const auto& item : split_list(v)) c.box_cells.push_back(to_int<int>("geometry.box_cells", item));
                 },
                 [](const ExperimentConfig& c) {
                   std::string out;
                   for (std::size_t i = 0; i < c.box_cells.size(); ++i) {
                     if (i) out += ", ";
                     out += std::to_string(c.box_cells[i]);
                   }
                   return out;
                 }});
    count("mcmc.sweeps", [](ExperimentConfig& c) -> std::size_t& { return c.mcmc.sweeps; });
    count("mcmc.burn_in", [](ExperimentConfig& c) -> std::size_t& { return c.mcmc.burn_in; });
    count("mcmc.thin", [](ExperimentConfig& c) -> std::size_t& { return c.mcmc.thin; });
    count("mcmc.chains", [](ExperimentConfig& c) -> std::size_t& { return c.mcmc.chains; });
    count("mcmc.seed", [](ExperimentConfig& c) -> std::uint64_t& { return c.mcmc.seed; });
    f.push_back({"mcmc.mix",
                 [](ExperimentConfig& c, const std::string& v) {
                   const auto w = to_doubles("mcmc.mix", v);
                   if (w.size() != 4) throw ConfigError("mcmc.mix: expected birth, death, translate, spin weights");
                   c.mcmc.mix = MoveMix{w[0], w[1], w[2], w[3]};
                 },
                 [](const ExperimentConfig& c) {
                   const auto& m = c.mcmc.mix;
                   return join_doubles({m.birth, m.death, m.translate, m.spin_resample});
                 }});
    f.push_back({"mcmc.translate_step",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.mcmc.translate_step = v == "auto" ? -1.0 : to_double("mcmc.translate_step", v);
                 },
                 [](const ExperimentConfig& c) {
                   return c.mcmc.translate_step < 0.0 ? std::string("auto") : format_double(c.mcmc.translate_step);
                 }});
    count("mcmc.start_per_cell", [](ExperimentConfig& c) -> std::size_t& { return c.mcmc.start_per_cell; });
    count("mcmc.threads", [](ExperimentConfig& c) -> std::size_t& { return c.mcmc.threads; });
    f.push_back({"grid.z", [](ExperimentConfig& c, const std::string& v) { c.grid.z = to_doubles("grid.z", v); },
                 [](const ExperimentConfig& c) { return join_doubles(c.grid.z); }});
    f.push_back({"grid.z_over_zc",
                 [](ExperimentConfig& c, const std::string& v) { c.grid.z_over_zc = to_doubles("grid.z_over_zc", v); },
                 [](const ExperimentConfig& c) { return join_doubles(c.grid.z_over_zc); }});
    f.push_back({"grid.q", [](ExperimentConfig& c, const std::string& v) { c.grid.q = to_doubles("grid.q", v); },
                 [](const ExperimentConfig& c) { return join_doubles(c.grid.q); }});
    f.push_back({"grid.boundaries",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.grid.boundaries.clear();
                   for (const auto& item : split_list(v)) c.grid.boundaries.push_back(boundary_from_name("grid.boundaries", item));
                 },
                 [](const ExperimentConfig& c) {
                   std::string out;
                   for (std::size_t i = 0; i < c.grid.boundaries.size(); ++i) {
                     if (i) out += ", ";
                     out += boundary_name(c.grid.boundaries[i]);
                   }
                   return out;
                 }});
    f.push_back({"grid.regime",
                 [](ExperimentConfig& c, const std::string& v) {
                   if (v == "ordered") c.grid.regime = PhaseRegime::ordered;
                   else if (v == "uniqueness") c.grid.regime = PhaseRegime::uniqueness;
                   else throw ConfigError("grid.regime: expected ordered or uniqueness, got '" + v + "'");
                 },
                 [](const ExperimentConfig& c) {
                   return std::string(c.grid.regime == PhaseRegime::ordered ? "ordered" : "uniqueness");
                 }});
    return f;
  }();
  return table;
}

// Sorting first makes every aggregate independent of chain order.
void mean_stderr(std::vector<double> xs, double& mean, double& stderr_) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  if (xs.size() < 2) {
    stderr_ = std::numeric_limits<double>::quiet_NaN();
    return;
  }
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  stderr_ = std::sqrt(ss / (n - 1.0) / n);
}

double vector_mean(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body) {
  if (threads == 0) threads = std::max(1U, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr error;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      while (true) {
        std::size_t i;
        {
          std::lock_guard<std::mutex> lock(mu);
          if (next >= n || error) return;
          i = next++;
        }
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

double start_scale(const SpinMeasure& chi) { return chi.atomic() ? chi.param : 1.0; }

ExperimentReport base_report(const ExperimentConfig& cfg) {
  ExperimentReport r;
  r.experiment = cfg.experiment;
  r.config_text = canonical_config(cfg);
  r.config_hash = config_hash(cfg);
  r.seed = cfg.mcmc.seed;
  return r;
}

CriteriaReport certified_criteria(const ExperimentConfig& cfg) {
  CriteriaOptions opts;
  opts.delta = cfg.criteria_delta;
  CriteriaReport crit = choose_parameters(cfg.model, cfg.criteria_q, opts);
  if (crit.n_star < 1 || !(crit.a > 0.0) || !std::isfinite(crit.z_c)) {
    throw ValidationError("criteria did not produce boundary constants: " + crit.message);
  }
  return crit;
}

json num_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

std::string csv_double(double x) { return format_double(x); }

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << content;
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

double csv_to_double(const std::string& v) {
  if (v == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (v == "inf") return std::numeric_limits<double>::infinity();
  if (v == "-inf") return -std::numeric_limits<double>::infinity();
  double x = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), x);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) throw std::runtime_error("bad CSV number '" + v + "'");
  return x;
}

bool csv_to_bool(const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw std::runtime_error("bad CSV flag '" + v + "'");
}

}  // namespace

ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig cfg;
  std::map<std::string, const Field*> index;
  for (const auto& f : fields()) index[f.key] = &f;
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = index.find(key);
    if (it == index.end()) throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (seen.count(key)) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    seen[key] = lineno;
    it->second->set(cfg, value);
  }
  check_config(cfg);
  return cfg;
}

ExperimentConfig parse_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config: " + path.string());
  return parse_config(in);
}

std::string canonical_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) {
    const std::string v = f.get(cfg);
    out += f.key;
    out += v.empty() ? " =" : " = " + v;
    out += '\n';
  }
  return out;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical_config(cfg)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  auto res = std::to_chars(buf, buf + 16, h, 16);
  std::string s(buf, res.ptr);
  return std::string(16 - s.size(), '0') + s;
}

void check_config(const ExperimentConfig& cfg) {
  if (cfg.model.d < 1 || cfg.model.d > kMaxDim) throw ConfigError("model.d out of range");
  if (cfg.mcmc.chains < 1) throw ConfigError("mcmc.chains must be at least 1");
  if (cfg.mcmc.thin < 1) throw ConfigError("mcmc.thin must be at least 1");
  if (cfg.mcmc.burn_in >= cfg.mcmc.sweeps) throw ConfigError("mcmc.burn_in must be smaller than mcmc.sweeps");
  try {
    cfg.mcmc.mix.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("mcmc.mix: ") + e.what());
  }
  for (int s : cfg.box_cells) {
    if (s < 3 || s % 2 == 0) throw ConfigError("geometry.box_cells: sides must be odd and at least 3");
  }
  for (double q : cfg.grid.q) {
    if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("grid.q: values must lie in [0, 1]");
  }
  for (double z : cfg.grid.z) {
    if (!(z > 0.0)) throw ConfigError("grid.z: activities must be positive");
  }
  for (double z : cfg.grid.z_over_zc) {
    if (!(z > 0.0)) throw ConfigError("grid.z_over_zc: ratios must be positive");
  }
  if (!(cfg.criteria_q > 0.0 && cfg.criteria_q < 1.0)) throw ConfigError("criteria.q must lie in (0, 1)");
  if (cfg.model.coupling.table_radii.size() != cfg.model.coupling.table_values.size()) {
    throw ConfigError("model.coupling_radii and model.coupling_values differ in length");
  }
}

Region box_region(int d, int box_cells) { return Region::box(d, (box_cells - 1) / 2); }

std::vector<double> activity_grid(const ExperimentConfig& cfg, const CriteriaReport& criteria) {
  std::vector<double> zs = cfg.grid.z;
  for (double ratio : cfg.grid.z_over_zc) zs.push_back(ratio * criteria.z_c);
  std::sort(zs.begin(), zs.end());
  zs.erase(std::unique(zs.begin(), zs.end()), zs.end());
  return zs;
}

json to_json(const ValidationReport& r) {
  json j;
  j["passed"] = r.passed();
  json clauses = json::array();
  for (const auto& c : r.clauses) {
    clauses.push_back({{"id", c.id},
                       {"description", c.description},
                       {"passed", c.passed},
                       {"informational", c.informational},
                       {"detail", c.detail}});
  }
  j["clauses"] = clauses;
  json rows = json::array();
  for (const auto& row : r.c_delta) {
    rows.push_back({{"delta", num_or_null(row.delta)},
                    {"closed_form", num_or_null(row.closed_form)},
                    {"quadrature", num_or_null(row.quadrature)}});
  }
  j["c_delta"] = rows;
  if (r.superstability) {
    const auto& s = *r.superstability;
    j["superstability"] = {{"A_fit", num_or_null(s.A_fit)},
                           {"B_fit", num_or_null(s.B_fit)},
                           {"pass", s.pass},
                           {"trials", s.trials},
                           {"recheck_trials", s.recheck_trials},
                           {"violations", s.violations}};
  } else {
    j["superstability"] = nullptr;
  }
  return j;
}

json to_json(const CriteriaReport& r) {
  json j;
  j["passed"] = r.passed;
  j["message"] = r.message;
  j["d"] = r.d;
  j["q"] = num_or_null(r.q);
  j["phi_star"] = num_or_null(r.phi_star);
  j["a"] = num_or_null(r.a);
  j["coupling"] = {{"holds", r.coupling.holds},
                   {"threshold", num_or_null(r.coupling.threshold)},
                   {"slack", num_or_null(r.coupling.slack)}};
  j["p_site"] = num_or_null(r.p_site);
  j["theta"] = num_or_null(r.theta);
  j["m_c"] = num_or_null(r.m_c);
  j["n_star"] = r.n_star;
  j["h_n_star"] = num_or_null(r.h_n_star);
  j["q0_lower"] = num_or_null(r.q0_lower);
  j["q0"] = num_or_null(r.q0);
  j["g"] = {{"g_star", num_or_null(r.g.g_star)},
            {"c_opt", num_or_null(r.g.c_opt)},
            {"v_star", num_or_null(r.g.v_star)},
            {"C_delta", num_or_null(r.g.C_delta)},
            {"delta", num_or_null(r.g.delta)},
            {"core_volume", num_or_null(r.g.core_volume)},
            {"ok", r.g.ok}};
  j["t_star"] = num_or_null(r.t_star);
  j["z_c"] = num_or_null(r.z_c);
  json ineq = json::array();
  for (const auto& q : r.inequalities) {
    const double slack = q.relation == "<" ? q.rhs - q.lhs : q.lhs - q.rhs;
    ineq.push_back({{"name", q.name},
                    {"lhs", num_or_null(q.lhs)},
                    {"relation", q.relation},
                    {"rhs", num_or_null(q.rhs)},
                    {"slack", num_or_null(slack)},
                    {"holds", q.holds}});
  }
  j["inequalities"] = ineq;
  return j;
}

json ExperimentReport::to_json() const {
  json j;
  j["experiment"] = experiment;
  j["code_version"] = kCodeVersion;
  j["config_hash"] = hash_hex(config_hash);
  j["seed"] = seed;
  j["config"] = config_text;
  j["validation"] = validation ? ferrolab::to_json(*validation) : json(nullptr);
  j["criteria"] = criteria ? ferrolab::to_json(*criteria) : json(nullptr);
  json prows = json::array();
  for (const auto& r : phase) {
    prows.push_back({{"z", num_or_null(r.z)},
                     {"box_cells", r.box_cells},
                     {"boundary", r.boundary},
                     {"chains", r.chains},
                     {"sweeps", r.sweeps},
                     {"M_mean", num_or_null(r.M_mean)},
                     {"M_stderr", num_or_null(r.M_stderr)},
                     {"N_mean", num_or_null(r.N_mean)},
                     {"N_stderr", num_or_null(r.N_stderr)},
                     {"equilibrated", r.equilibrated},
                     {"rhat_M", num_or_null(r.rhat_M)},
                     {"rhat_N", num_or_null(r.rhat_N)},
                     {"occupation_p", num_or_null(r.occupation_p)},
                     {"occupation_stderr", num_or_null(r.occupation_stderr)}});
  }
  j["phase"] = prows;
  json crows = json::array();
  for (const auto& r : percolation) {
    crows.push_back({{"z", num_or_null(r.z)},
                     {"box_cells", r.box_cells},
                     {"q", num_or_null(r.q)},
                     {"chains", r.chains},
                     {"samples", r.samples},
                     {"perc_prob", num_or_null(r.perc_prob)},
                     {"perc_stderr", num_or_null(r.perc_stderr)},
                     {"two_theta", num_or_null(r.two_theta)},
                     {"meets_bound", r.meets_bound}});
  }
  j["percolation"] = crows;
  j["summary"] = summary;
  return j;
}

void require_valid(const ExperimentConfig& cfg) {
  const ValidationReport v = validate_model(cfg.model);
  if (!v.passed()) {
    std::string failed;
    for (const auto& c : v.clauses) {
      if (!c.passed && !c.informational) failed += (failed.empty() ? "" : ", ") + c.id;
    }
    throw ValidationError("model fails validation: " + failed);
  }
}

ExperimentReport run_validate(const ExperimentConfig& cfg) {
  ExperimentReport r = base_report(cfg);
  r.validation = validate_model(cfg.model);
  r.summary["passed"] = r.validation->passed();
  return r;
}

ExperimentReport run_criteria(const ExperimentConfig& cfg) {
  require_valid(cfg);
  ExperimentReport r = base_report(cfg);
  CriteriaOptions opts;
  opts.delta = cfg.criteria_delta;
  r.criteria = choose_parameters(cfg.model, cfg.criteria_q, opts);
  r.summary["passed"] = r.criteria->passed;
  r.summary["z_c"] = num_or_null(r.criteria->z_c);
  return r;
}

double gelman_rubin(const std::vector<std::vector<double>>& chains) {
  const std::size_t m = chains.size();
  if (m < 2) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t n = chains.front().size();
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  for (const auto& c : chains) {
    if (c.size() != n) throw std::invalid_argument("gelman_rubin needs equal-length chains");
  }
  std::vector<double> means(m), vars(m);
  for (std::size_t c = 0; c < m; ++c) {
    means[c] = vector_mean(chains[c]);
    double ss = 0.0;
    for (double x : chains[c]) ss += (x - means[c]) * (x - means[c]);
    vars[c] = ss / static_cast<double>(n - 1);
  }
  std::vector<double> sorted_means = means, sorted_vars = vars;
  std::sort(sorted_means.begin(), sorted_means.end());
  std::sort(sorted_vars.begin(), sorted_vars.end());
  const double grand = vector_mean(sorted_means);
  double b = 0.0;
  for (double x : sorted_means) b += (x - grand) * (x - grand);
  b *= static_cast<double>(n) / static_cast<double>(m - 1);
  const double w = vector_mean(sorted_vars);
  if (w == 0.0) return b == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  const double nn = static_cast<double>(n);
  const double var_plus = (nn - 1.0) / nn * w + b / nn;
  return std::sqrt(var_plus / w);
}

ExperimentReport run_phase_experiment(const ExperimentConfig& cfg) {
  require_valid(cfg);
  ExperimentReport report = base_report(cfg);
  const CriteriaReport crit = certified_criteria(cfg);
  report.criteria = crit;

  ModelSpec model = cfg.model;
  std::vector<double> zs;
  if (cfg.grid.regime == PhaseRegime::uniqueness) {
    model.coupling.phi_star /= 10.0;
    for (auto& v : model.coupling.table_values) v /= 10.0;
    const double z0 = uniqueness_activity(model, model.coupling.phi_star);
    zs = {z0 / 10.0};
    report.summary["regime"] = "uniqueness";
    report.summary["phi0"] = num_or_null(model.coupling.phi_star);
    report.summary["z0"] = num_or_null(z0);
  } else {
    zs = activity_grid(cfg, crit);
    report.summary["regime"] = "ordered";
  }

  struct Job {
    std::size_t iz, is, ib, chain;
  };
  struct ChainResult {
    std::vector<double> M, N;
    std::vector<std::vector<std::uint32_t>> cells;
  };
  std::vector<Job> jobs;
  for (std::size_t iz = 0; iz < zs.size(); ++iz)
    for (std::size_t is = 0; is < cfg.box_cells.size(); ++is)
      for (std::size_t ib = 0; ib < cfg.grid.boundaries.size(); ++ib)
        for (std::size_t c = 0; c < cfg.mcmc.chains; ++c) jobs.push_back({iz, is, ib, c});
  std::vector<ChainResult> results(jobs.size());

  RunOptions run;
  run.sweeps = cfg.mcmc.sweeps;
  run.burn_in = cfg.mcmc.burn_in;
  run.thin = cfg.mcmc.thin;
  run.mix = cfg.mcmc.mix;
  run.translate_step = cfg.mcmc.translate_step;
  run.record_cells = true;
  const double scale = start_scale(model.chi);

  parallel_for(jobs.size(), cfg.mcmc.threads, [&](std::size_t j) {
    const Job& job = jobs[j];
    ModelSpec spec = model;
    spec.z = zs[job.iz];
    const Region region = box_region(spec.d, cfg.box_cells[job.is]);
    const BoundaryKind kind = cfg.grid.boundaries[job.ib];
    double sign = 1.0, mirror = 1.0;
    std::uint64_t stream = job.chain;
    BoundaryCondition bc;
    if (kind == BoundaryKind::free) {
      bc = BoundaryCondition::free_boundary(spec);
      sign = (splitmix64(cfg.mcmc.seed ^ (job.chain + 0x51ed)) & 1U) ? 1.0 : -1.0;
      stream = job.chain ^ 0xf4eeULL;
    } else {
      bc = BoundaryCondition::signed_class(region, spec, crit.n_star, crit.a, 1);
      if (kind == BoundaryKind::minus) {
        bc = bc.mirrored();
        sign = -1.0;
        mirror = -1.0;
      }
    }
    ChainState state = make_chain(spec, region, bc, cfg.mcmc.start_per_cell, sign * scale, cfg.mcmc.seed, stream, mirror);
    Trace trace = run_chain(state, run);
    ChainResult& out = results[j];
    for (const auto& row : trace.rows) {
      out.M.push_back(row.M);
      out.N.push_back(static_cast<double>(row.N));
    }
    out.cells = std::move(trace.cell_counts);
  });

  std::size_t j = 0;
  json splitting = json::array();
  for (std::size_t iz = 0; iz < zs.size(); ++iz) {
    for (std::size_t is = 0; is < cfg.box_cells.size(); ++is) {
      const Region region = box_region(model.d, cfg.box_cells[is]);
      std::map<BoundaryKind, const PhaseRow*> by_kind;
      const std::size_t first_row = report.phase.size();
      for (std::size_t ib = 0; ib < cfg.grid.boundaries.size(); ++ib) {
        std::vector<std::vector<double>> Ms, Ns;
        std::vector<std::vector<std::vector<std::uint32_t>>> cells;
        std::vector<double> mean_M, mean_N;
        for (std::size_t c = 0; c < cfg.mcmc.chains; ++c, ++j) {
          mean_M.push_back(vector_mean(results[j].M));
          mean_N.push_back(vector_mean(results[j].N));
          Ms.push_back(std::move(results[j].M));
          Ns.push_back(std::move(results[j].N));
          cells.push_back(std::move(results[j].cells));
        }
        PhaseRow row;
        row.z = zs[iz];
        row.box_cells = cfg.box_cells[is];
        row.boundary = boundary_name(cfg.grid.boundaries[ib]);
        row.chains = cfg.mcmc.chains;
        row.sweeps = cfg.mcmc.sweeps;
        mean_stderr(mean_M, row.M_mean, row.M_stderr);
        mean_stderr(mean_N, row.N_mean, row.N_stderr);
        row.rhat_M = gelman_rubin(Ms);
        row.rhat_N = gelman_rubin(Ns);
        // A single chain carries no between-chain information.
        row.equilibrated = cfg.mcmc.chains >= 2 && row.rhat_M < 1.1 && row.rhat_N < 1.1;
        const DominationReport dom =
            check_domination(region, cells, crit.n_star, crit.q0, crit.occupation_floor(zs[iz]));
        row.occupation_p = dom.pooled_p;
        row.occupation_stderr = dom.pooled_stderr;
        report.phase.push_back(row);
      }
      for (std::size_t k = first_row; k < report.phase.size(); ++k) {
        by_kind[cfg.grid.boundaries[k - first_row]] = &report.phase[k];
      }
      json s;
      s["z"] = num_or_null(zs[iz]);
      s["box_cells"] = cfg.box_cells[is];
      const auto plus = by_kind.find(BoundaryKind::plus);
      const auto minus = by_kind.find(BoundaryKind::minus);
      const auto free = by_kind.find(BoundaryKind::free);
      if (plus != by_kind.end()) {
        s["M_plus"] = num_or_null(plus->second->M_mean);
        s["M_plus_stderr"] = num_or_null(plus->second->M_stderr);
      }
      if (minus != by_kind.end()) {
        s["M_minus"] = num_or_null(minus->second->M_mean);
        s["M_minus_stderr"] = num_or_null(minus->second->M_stderr);
      }
      if (plus != by_kind.end() && minus != by_kind.end()) {
        s["residual"] = num_or_null(plus->second->M_mean + minus->second->M_mean);
        s["residual_stderr"] = num_or_null(std::hypot(plus->second->M_stderr, minus->second->M_stderr));
      }
      if (free != by_kind.end()) {
        s["M_free"] = num_or_null(free->second->M_mean);
        s["M_free_stderr"] = num_or_null(free->second->M_stderr);
      }
      splitting.push_back(s);
    }
  }
  report.summary["splitting"] = splitting;
  return report;
}

ExperimentReport run_percolation_experiment(const ExperimentConfig& cfg) {
  if (cfg.model.d < 2) throw ConfigError("percolation experiment needs d >= 2");
  require_valid(cfg);
  ExperimentReport report = base_report(cfg);
  const CriteriaReport crit = certified_criteria(cfg);
  report.criteria = crit;
  const std::vector<double> zs = activity_grid(cfg, crit);
  const double two_theta = crit.p_site;

  struct Job {
    std::size_t iz, is;
  };
  std::vector<Job> jobs;
  for (std::size_t iz = 0; iz < zs.size(); ++iz)
    for (std::size_t is = 0; is < cfg.box_cells.size(); ++is) jobs.push_back({iz, is});
  std::vector<std::vector<PercolationEstimate>> results(jobs.size());

  PercolationOptions opts;
  opts.chains = cfg.mcmc.chains;
  opts.sweeps = cfg.mcmc.sweeps;
  opts.burn_in = cfg.mcmc.burn_in;
  opts.thin = cfg.mcmc.thin;
  opts.start_per_cell = cfg.mcmc.start_per_cell;
  opts.seed = cfg.mcmc.seed;
  opts.mix = cfg.mcmc.mix;
  opts.translate_step = cfg.mcmc.translate_step;

  parallel_for(jobs.size(), cfg.mcmc.threads, [&](std::size_t j) {
    ModelSpec spec = cfg.model;
    spec.z = zs[jobs[j].iz];
    const Region region = box_region(spec.d, cfg.box_cells[jobs[j].is]);
    const BoundaryCondition bc = BoundaryCondition::signed_class(region, spec, crit.n_star, crit.a, 1);
    results[j] = percolation_probability(spec, region, bc, cfg.grid.q, opts);
  });

  for (std::size_t j = 0; j < jobs.size(); ++j) {
    for (const auto& e : results[j]) {
      PercolationRow row;
      row.z = zs[jobs[j].iz];
      row.box_cells = cfg.box_cells[jobs[j].is];
      row.q = e.q;
      row.chains = cfg.mcmc.chains;
      row.samples = e.samples;
      row.perc_prob = e.estimate;
      row.perc_stderr = e.stderr_;
      row.two_theta = two_theta;
      const double se = std::isfinite(e.stderr_) ? e.stderr_ : 0.0;
      row.meets_bound = e.estimate >= two_theta - 3.0 * se;
      report.percolation.push_back(row);
    }
  }

  // Monotonicity in z per (size, q), within three combined standard errors.
  bool monotone = true;
  json flags = json::array();
  for (std::size_t is = 0; is < cfg.box_cells.size(); ++is) {
    for (std::size_t iq = 0; iq < cfg.grid.q.size(); ++iq) {
      bool ok = true;
      const PercolationRow* prev = nullptr;
      for (const auto& row : report.percolation) {
        if (row.box_cells != cfg.box_cells[is] || row.q != cfg.grid.q[iq]) continue;
        if (prev) {
          const double se = std::hypot(std::isfinite(prev->perc_stderr) ? prev->perc_stderr : 0.0,
                                       std::isfinite(row.perc_stderr) ? row.perc_stderr : 0.0);
          if (row.perc_prob < prev->perc_prob - 3.0 * se) ok = false;
        }
        prev = &row;
      }
      monotone = monotone && ok;
      flags.push_back({{"box_cells", cfg.box_cells[is]}, {"q", num_or_null(cfg.grid.q[iq])}, {"monotone", ok}});
    }
  }
  bool certified = false, certified_pass = true;
  for (const auto& row : report.percolation) {
    if (row.q == cfg.criteria_q && row.z > crit.z_c) {
      certified = true;
      certified_pass = certified_pass && row.meets_bound;
    }
  }
  report.summary["two_theta"] = num_or_null(two_theta);
  report.summary["monotone_in_z"] = monotone;
  report.summary["monotonicity"] = flags;
  report.summary["certified_rows"] = certified;
  report.summary["certified_meets_bound"] = certified && certified_pass;
  return report;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  if (cfg.experiment == "validate") return run_validate(cfg);
  if (cfg.experiment == "criteria") return run_criteria(cfg);
  if (cfg.experiment == "phase") return run_phase_experiment(cfg);
  if (cfg.experiment == "percolation") return run_percolation_experiment(cfg);
  throw ConfigError("unknown experiment '" + cfg.experiment + "'");
}

void write_phase_csv(std::ostream& out, const std::vector<PhaseRow>& rows) {
  out << "z,box_cells,boundary,chains,sweeps,M_mean,M_stderr,N_mean,N_stderr,equilibrated\n";
  for (const auto& r : rows) {
    out << csv_double(r.z) << ',' << r.box_cells << ',' << r.boundary << ',' << r.chains << ',' << r.sweeps << ','
        << csv_double(r.M_mean) << ',' << csv_double(r.M_stderr) << ',' << csv_double(r.N_mean) << ','
        << csv_double(r.N_stderr) << ',' << (r.equilibrated ? "true" : "false") << '\n';
  }
}

void write_percolation_csv(std::ostream& out, const std::vector<PercolationRow>& rows) {
  out << "z,box_cells,q,chains,samples,perc_prob,perc_stderr,two_theta,meets_bound\n";
  for (const auto& r : rows) {
    out << csv_double(r.z) << ',' << r.box_cells << ',' << csv_double(r.q) << ',' << r.chains << ',' << r.samples
        << ',' << csv_double(r.perc_prob) << ',' << csv_double(r.perc_stderr) << ',' << csv_double(r.two_theta) << ','
        << (r.meets_bound ? "true" : "false") << '\n';
  }
}

std::vector<PhaseRow> read_phase_csv(std::istream& in) {
  std::vector<PhaseRow> rows;
  std::string line;
  if (!std::getline(in, line)) return rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 10) throw std::runtime_error("phase CSV row has " + std::to_string(f.size()) + " fields");
    PhaseRow r;
    r.z = csv_to_double(f[0]);
    r.box_cells = std::stoi(f[1]);
    r.boundary = f[2];
    r.chains = std::stoul(f[3]);
    r.sweeps = std::stoul(f[4]);
    r.M_mean = csv_to_double(f[5]);
    r.M_stderr = csv_to_double(f[6]);
    r.N_mean = csv_to_double(f[7]);
    r.N_stderr = csv_to_double(f[8]);
    r.equilibrated = csv_to_bool(f[9]);
    rows.push_back(r);
  }
  return rows;
}

std::vector<PercolationRow> read_percolation_csv(std::istream& in) {
  std::vector<PercolationRow> rows;
  std::string line;
  if (!std::getline(in, line)) return rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 9) throw std::runtime_error("percolation CSV row has " + std::to_string(f.size()) + " fields");
    PercolationRow r;
    r.z = csv_to_double(f[0]);
    r.box_cells = std::stoi(f[1]);
    r.q = csv_to_double(f[2]);
    r.chains = std::stoul(f[3]);
    r.samples = std::stoul(f[4]);
    r.perc_prob = csv_to_double(f[5]);
    r.perc_stderr = csv_to_double(f[6]);
    r.two_theta = csv_to_double(f[7]);
    r.meets_bound = csv_to_bool(f[8]);
    rows.push_back(r);
  }
  return rows;
}

std::vector<std::filesystem::path> emit(const ExperimentReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  auto put = [&](const std::string& name, const std::string& content) {
    const auto path = dir / name;
    write_file(path, content);
    written.push_back(path);
  };
  put("report.json", report.to_json().dump(2) + "\n");
  if (report.experiment == "phase") {
    std::ostringstream csv;
    write_phase_csv(csv, report.phase);
    put("phase.csv", csv.str());
    std::vector<std::string> kinds;
    for (const auto& r : report.phase) {
      if (std::find(kinds.begin(), kinds.end(), r.boundary) == kinds.end()) kinds.push_back(r.boundary);
    }
    for (const auto& kind : kinds) {
      std::map<int, std::vector<const PhaseRow*>> by_size;
      for (const auto& r : report.phase) {
        if (r.boundary == kind) by_size[r.box_cells].push_back(&r);
      }
      std::ostringstream dat;
      bool first = true;
      for (const auto& [size, rows] : by_size) {
        if (!first) dat << "\n\n";
        first = false;
        dat << "# box_cells " << size << " boundary " << kind << "\n# z M_mean\n";
        for (const auto* r : rows) dat << csv_double(r->z) << ' ' << csv_double(r->M_mean) << '\n';
      }
      put("M_vs_z_" + kind + ".dat", dat.str());
    }
  } else if (report.experiment == "percolation") {
    std::ostringstream csv;
    write_percolation_csv(csv, report.percolation);
    put("percolation.csv", csv.str());
  }
  return written;
}

}  // namespace ferrolab
