#pragma once

// Run configuration: a flat key=value text file ('#' starts a comment).
// Unknown keys are errors so typos surface instead of silently reverting
// to defaults.

#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "stocklik/csv.hpp"
#include "stocklik/dataset.hpp"
#include "stocklik/families.hpp"
#include "stocklik/model.hpp"
#include "stocklik/model_space.hpp"
#include "stocklik/process.hpp"

namespace stocklik {

namespace detail {
inline std::vector<Family> every_family() {
  auto all = all_families();
  return std::vector<Family>(all.begin(), all.end());
}
}  // namespace detail

struct RunConfig {
  static constexpr int kUnset = std::numeric_limits<int>::min();

  std::vector<Family> families = detail::every_family();
  SharingMode sharing = SharingMode::Full;
  Recruitment recruitment = Recruitment::RandomWalk;
  int fbar_first = kUnset;  // ages; default to the modeled span when unset
  int fbar_last = kUnset;
  int a_star = 0;  // distinct F states; 0 means one per modeled age
  FSdMode f_sd_mode = FSdMode::Shared;
  bool jacobian_correction = true;

  double grad_tol = 1e-6;
  double inner_tol = 1e-8;
  int max_outer = 400;
  int restarts = 10;
  unsigned long seed = 1;
  std::string out = "report";
  std::map<std::string, double> timing_overrides;  // timing.<fleet> = value

  // Simulated-dataset design (the simulate subcommand).
  int sim_years = 40;
  int sim_ages = 5;
  double sim_obs_sd = 0.25;
  double sim_total_sd = 0.15;
  double sim_conc = 40.0;
  double sim_rho = 0.5;

  void validate() const {
    if (families.empty()) throw std::invalid_argument("config: empty family set");
    if (fbar_first != kUnset && fbar_last != kUnset && fbar_last < fbar_first)
      throw std::invalid_argument("config: fbar_last below fbar_first");
    if ((fbar_first == kUnset) != (fbar_last == kUnset))
      throw std::invalid_argument("config: fbar_first and fbar_last must be set together");
    if (a_star < 0) throw std::invalid_argument("config: a_star must be nonnegative");
    if (grad_tol <= 0 || inner_tol <= 0) throw std::invalid_argument("config: tolerances must be positive");
    if (max_outer < 1) throw std::invalid_argument("config: max_outer must be at least 1");
    if (restarts < 0) throw std::invalid_argument("config: restarts must be nonnegative");
    if (sim_years < 3) throw std::invalid_argument("config: sim_years must be at least 3");
    if (sim_ages < 2) throw std::invalid_argument("config: sim_ages must be at least 2");
    if (sim_obs_sd <= 0 || sim_total_sd <= 0 || sim_conc <= 0)
      throw std::invalid_argument("config: simulation scales must be positive");
    if (std::abs(sim_rho) >= 1) throw std::invalid_argument("config: sim_rho must lie in (-1,1)");
    for (const auto& [fleet, t] : timing_overrides)
      if (t < 0.0 || t >= 1.0)
        throw std::invalid_argument("config: timing." + fleet + " must lie in [0,1)");
  }
};

namespace detail {

inline std::vector<Family> parse_family_list(const std::string& value) {
  if (value == "all") return every_family();
  std::vector<Family> out;
  std::string token;
  std::istringstream in(value);
  while (std::getline(in, token, ',')) {
    token = csv::trim(token);
    if (token.empty()) continue;
    Family f = parse_family(token);
    for (Family g : out)
      if (g == f) throw std::invalid_argument("family '" + token + "' listed twice");
    out.push_back(f);
  }
  return out;
}

inline double config_double(const std::string& key, const std::string& value) {
  errno = 0;
  char* end = nullptr;
  double v = std::strtod(value.c_str(), &end);
  if (value.empty() || end != value.c_str() + value.size() || errno == ERANGE)
    throw std::invalid_argument("config: " + key + ": not a number: '" + value + "'");
  return v;
}

inline long config_long(const std::string& key, const std::string& value) {
  errno = 0;
  char* end = nullptr;
  long v = std::strtol(value.c_str(), &end, 10);
  if (value.empty() || end != value.c_str() + value.size() || errno == ERANGE)
    throw std::invalid_argument("config: " + key + ": not an integer: '" + value + "'");
  return v;
}

}  // namespace detail

inline RunConfig parse_config_text(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = csv::trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key=value, got '" + line + "'");
    std::string key = csv::trim(line.substr(0, eq));
    std::string value = csv::trim(line.substr(eq + 1));
    try {
      if (key == "families") c.families = detail::parse_family_list(value);
      else if (key == "sharing") c.sharing = parse_sharing(value);
      else if (key == "recruitment") {
        if (value == "random_walk") c.recruitment = Recruitment::RandomWalk;
        else if (value == "beverton_holt") c.recruitment = Recruitment::BevertonHolt;
        else throw std::invalid_argument("unknown recruitment '" + value + "'");
      } else if (key == "fbar_first") c.fbar_first = static_cast<int>(detail::config_long(key, value));
      else if (key == "fbar_last") c.fbar_last = static_cast<int>(detail::config_long(key, value));
      else if (key == "a_star") c.a_star = static_cast<int>(detail::config_long(key, value));
      else if (key == "f_sd_mode") {
        if (value == "shared") c.f_sd_mode = FSdMode::Shared;
        else if (value == "full") c.f_sd_mode = FSdMode::Full;
        else throw std::invalid_argument("unknown f_sd_mode '" + value + "'");
      } else if (key == "jacobian_correction") {
        if (value == "on") c.jacobian_correction = true;
        else if (value == "off") c.jacobian_correction = false;
        else throw std::invalid_argument("jacobian_correction must be on or off");
      } else if (key == "grad_tol") c.grad_tol = detail::config_double(key, value);
      else if (key == "inner_tol") c.inner_tol = detail::config_double(key, value);
      else if (key == "max_outer") c.max_outer = static_cast<int>(detail::config_long(key, value));
      else if (key == "restarts") c.restarts = static_cast<int>(detail::config_long(key, value));
      else if (key == "seed") c.seed = static_cast<unsigned long>(detail::config_long(key, value));
      else if (key == "out") c.out = value;
      else if (key == "sim_years") c.sim_years = static_cast<int>(detail::config_long(key, value));
      else if (key == "sim_ages") c.sim_ages = static_cast<int>(detail::config_long(key, value));
      else if (key == "sim_obs_sd") c.sim_obs_sd = detail::config_double(key, value);
      else if (key == "sim_total_sd") c.sim_total_sd = detail::config_double(key, value);
      else if (key == "sim_conc") c.sim_conc = detail::config_double(key, value);
      else if (key == "sim_rho") c.sim_rho = detail::config_double(key, value);
      else if (key.rfind("timing.", 0) == 0) {
        std::string fleet = key.substr(7);
        if (fleet.empty()) throw std::invalid_argument("timing override needs a fleet name");
        c.timing_overrides[fleet] = detail::config_double(key, value);
      } else throw std::invalid_argument("unknown config key '" + key + "'");
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(path + ": cannot open file");
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return parse_config_text(text.str());
  } catch (const std::invalid_argument& e) {
    throw LoadError(path + ": " + e.what());
  }
}

// Applies timing.<fleet> overrides to a loaded dataset; unknown names are
// errors since a silent no-op would hide a typo.
inline void apply_timing_overrides(const RunConfig& c, Dataset& d) {
  for (const auto& [fleet, t] : c.timing_overrides) {
    int fi = d.fleet_index(fleet);  // throws on unknown name
    d.fleets[static_cast<std::size_t>(fi)].timing = t;
  }
}

// The model a run config asks for, instantiated for one family.
inline ModelSpec model_spec_from(const RunConfig& c, Family f) {
  ModelSpec s;
  s.family = f;
  s.sharing = c.sharing;
  s.recruitment = c.recruitment;
  s.a_star = c.a_star;
  s.f_sd_mode = c.f_sd_mode;
  s.fbar_first = c.fbar_first == RunConfig::kUnset ? ModelSpec::kAuto : c.fbar_first;
  s.fbar_last = c.fbar_last == RunConfig::kUnset ? ModelSpec::kAuto : c.fbar_last;
  s.jacobian_correction = c.jacobian_correction;
  return s;
}

}  // namespace stocklik
