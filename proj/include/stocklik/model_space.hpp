#pragma once

// Fleet descriptions, observational parameter sharing (full vs minimal),
// and the bijection between natural and unconstrained parameter scales.
//
// Parameter counting rules, applied per fleet with A ages:
//   M1,M2,M4,M5   A scales                     (minimal: 1)
//   M3,M6         A scales + A shapes          (minimal: 1+1)
//   M7            A scales + 1 correlation     (minimal: 1+1)
//   M8,M9,M11,M12 A-1 logratio scales + 1 correlation + 1 total scale
//                                              (minimal: 1+1+1)
//   M10,M13       1 concentration + 1 total scale (already minimal)
// Correlation parameters only exist when the correlated vector has
// dimension at least 2.

#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "stocklik/families.hpp"

namespace stocklik {

enum class FleetKind { Commercial, Survey };

struct FleetSpec {
  std::string name;
  FleetKind kind = FleetKind::Commercial;
  int first_year = 0;
  int last_year = 0;
  int first_age = 0;
  int last_age = 0;
  std::set<int> missing_years;
  double timing = 0.0;  // fraction of the year elapsed when a survey runs

  int n_ages() const { return last_age - first_age + 1; }
  int n_years() const { return last_year - first_year + 1; }
  bool has_age(int a) const { return a >= first_age && a <= last_age; }
  bool in_span(int y) const { return y >= first_year && y <= last_year; }

  void validate() const {
    if (last_year < first_year || last_age < first_age)
      throw std::invalid_argument("fleet '" + name + "': empty year or age span");
    if (timing < 0.0 || timing >= 1.0)
      throw std::invalid_argument("fleet '" + name + "': timing must lie in [0,1)");
    for (int y : missing_years)
      if (!in_span(y))
        throw std::invalid_argument("fleet '" + name + "': missing year " + std::to_string(y) +
                                    " outside span");
  }
};

enum class SharingMode { Full, Minimal };

inline SharingMode parse_sharing(std::string_view s) {
  if (s == "full") return SharingMode::Full;
  if (s == "minimal") return SharingMode::Minimal;
  throw std::invalid_argument("unknown sharing mode '" + std::string(s) + "'");
}

// Observational parameter roles. Scale and Shape are per age (Scale doubles
// as the logratio scale for the logistic-normal families); the rest are per
// fleet.
enum class Role : int { Scale = 0, Shape, Correlation, TotalScale, Concentration };

inline std::string role_name(Role r) {
  switch (r) {
    case Role::Scale: return "scale";
    case Role::Shape: return "shape";
    case Role::Correlation: return "cor";
    case Role::TotalScale: return "total_scale";
    case Role::Concentration: return "conc";
  }
  throw std::logic_error("unreachable");
}

// Map between the natural domain of each parameter and the real line.
enum class Link { Log, Atanh, Identity };

inline double link_forward(Link l, double natural) {
  switch (l) {
    case Link::Log: return std::log(natural);
    case Link::Atanh: return std::atanh(natural);
    case Link::Identity: return natural;
  }
  throw std::logic_error("unreachable");
}

template <class T>
T link_inverse(Link l, const T& raw) {
  using std::exp;
  using std::tanh;
  switch (l) {
    case Link::Log: return exp(raw);
    case Link::Atanh: return tanh(raw);
    case Link::Identity: return raw;
  }
  throw std::logic_error("unreachable");
}

struct ParamSharing {
  Family family = Family::M1;
  SharingMode mode = SharingMode::Full;
  int n_params = 0;
  // (fleet index, age, role) -> parameter index; age is kAgeless for
  // per-fleet roles.
  static constexpr int kAgeless = std::numeric_limits<int>::min();
  std::map<std::tuple<int, int, int>, int> key_map;
  std::vector<Link> links;          // per parameter index
  std::vector<std::string> names;   // per parameter index, natural-scale symbol

  bool has(int fleet, int age, Role r) const {
    return key_map.count({fleet, age, static_cast<int>(r)}) > 0;
  }
  int index(int fleet, int age, Role r) const {
    auto it = key_map.find({fleet, age, static_cast<int>(r)});
    if (it == key_map.end())
      throw std::out_of_range("unmapped observational parameter: fleet " + std::to_string(fleet) +
                              (age == kAgeless ? std::string() : ", age " + std::to_string(age)) +
                              ", role " + role_name(r));
    return it->second;
  }
  int index(int fleet, Role r) const { return index(fleet, kAgeless, r); }
};

inline Link role_link(Role r, Family f) {
  if (r == Role::Correlation) return Link::Atanh;
  if (r == Role::Shape && f == Family::M3) return Link::Identity;  // tau ranges over all reals
  return Link::Log;
}

namespace detail {

// Which per-age "scale" keys a family uses on a fleet with the given span.
// Logistic-normal families parameterize the A-1 logratio coordinates, keyed
// by the first A-1 ages.
inline int n_scale_keys(Family f, const FleetSpec& fl) {
  if (is_dirichlet(f)) return 0;
  if (is_proportions(f)) return fl.n_ages() - 1;
  return fl.n_ages();
}

inline bool fleet_has_correlation(Family f, const FleetSpec& fl) {
  if (!has_correlation(f)) return false;
  int dim = is_proportions(f) ? fl.n_ages() - 1 : fl.n_ages();
  return dim >= 2;
}

}  // namespace detail

inline int count_obs_params(Family f, const std::vector<FleetSpec>& fleets, SharingMode mode) {
  int n = 0;
  for (const auto& fl : fleets) {
    if (fl.n_ages() < 1) throw std::invalid_argument("fleet '" + fl.name + "' has no ages");
    int per_age = detail::n_scale_keys(f, fl);
    int shared = per_age > 0 ? 1 : 0;
    n += (mode == SharingMode::Full) ? per_age : shared;
    if (has_shape_param(f)) n += (mode == SharingMode::Full) ? fl.n_ages() : 1;
    if (detail::fleet_has_correlation(f, fl)) n += 1;
    if (is_proportions(f)) n += 1;   // scale of the log-normal total
    if (is_dirichlet(f)) n += 1;     // concentration
  }
  return n;
}

inline ParamSharing build_sharing_map(const std::vector<FleetSpec>& fleets, Family f,
                                      SharingMode mode) {
  ParamSharing s;
  s.family = f;
  s.mode = mode;
  int next = 0;
  auto tag = [](int fleet, int age) {
    std::string t = "f" + std::to_string(fleet);
    if (age != ParamSharing::kAgeless) t += ",a" + std::to_string(age);
    return t;
  };
  auto add = [&](int fleet, int age, Role r, int idx) {
    s.key_map[{fleet, age, static_cast<int>(r)}] = idx;
  };
  auto fresh = [&](int fleet, int age, Role r) {
    int idx = next++;
    add(fleet, age, r, idx);
    s.links.push_back(role_link(r, f));
    s.names.push_back(role_name(r) + "[" + tag(fleet, age) + "]");
    return idx;
  };

  for (int fi = 0; fi < static_cast<int>(fleets.size()); ++fi) {
    const auto& fl = fleets[static_cast<std::size_t>(fi)];
    fl.validate();
    int n_scales = detail::n_scale_keys(f, fl);
    if (n_scales > 0) {
      if (mode == SharingMode::Full) {
        for (int k = 0; k < n_scales; ++k) fresh(fi, fl.first_age + k, Role::Scale);
      } else {
        int idx = fresh(fi, fl.first_age, Role::Scale);
        s.names.back() = role_name(Role::Scale) + "[" + tag(fi, ParamSharing::kAgeless) + "]";
        for (int k = 1; k < n_scales; ++k) add(fi, fl.first_age + k, Role::Scale, idx);
      }
    }
    if (has_shape_param(f)) {
      if (mode == SharingMode::Full) {
        for (int a = fl.first_age; a <= fl.last_age; ++a) fresh(fi, a, Role::Shape);
      } else {
        int idx = fresh(fi, fl.first_age, Role::Shape);
        s.names.back() = role_name(Role::Shape) + "[" + tag(fi, ParamSharing::kAgeless) + "]";
        for (int a = fl.first_age + 1; a <= fl.last_age; ++a) add(fi, a, Role::Shape, idx);
      }
    }
    if (detail::fleet_has_correlation(f, fl)) fresh(fi, ParamSharing::kAgeless, Role::Correlation);
    if (is_proportions(f)) fresh(fi, ParamSharing::kAgeless, Role::TotalScale);
    if (is_dirichlet(f)) fresh(fi, ParamSharing::kAgeless, Role::Concentration);
  }
  s.n_params = next;
  return s;
}

// Natural-scale view over a parameter subvector resolved through a sharing
// map. Used by reporting and simulation; the likelihood terms read raw
// components and apply links on the AD type instead.
struct ObsParams {
  const ParamSharing* sharing = nullptr;
  std::span<const double> natural;

  double get(int fleet, int age, Role r) const {
    return natural[static_cast<std::size_t>(sharing->index(fleet, age, r))];
  }
  double scale(int fleet, int age) const { return get(fleet, age, Role::Scale); }
  double shape(int fleet, int age) const { return get(fleet, age, Role::Shape); }
  double correlation(int fleet) const { return get(fleet, ParamSharing::kAgeless, Role::Correlation); }
  double total_scale(int fleet) const { return get(fleet, ParamSharing::kAgeless, Role::TotalScale); }
  double concentration(int fleet) const {
    return get(fleet, ParamSharing::kAgeless, Role::Concentration);
  }
};

// Applied elementwise; `links` describes each component's natural domain.
inline std::vector<double> to_unconstrained(std::span<const double> natural,
                                            std::span<const Link> links) {
  if (natural.size() != links.size()) throw std::invalid_argument("links/values size mismatch");
  std::vector<double> raw(natural.size());
  for (std::size_t i = 0; i < natural.size(); ++i) raw[i] = link_forward(links[i], natural[i]);
  return raw;
}

inline std::vector<double> from_unconstrained(std::span<const double> raw,
                                              std::span<const Link> links) {
  if (raw.size() != links.size()) throw std::invalid_argument("links/values size mismatch");
  std::vector<double> natural(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) natural[i] = link_inverse(links[i], raw[i]);
  return natural;
}

}  // namespace stocklik
