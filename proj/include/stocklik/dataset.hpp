#pragma once

// Dataset assembly from the CSV directory layout, and the mirror-image
// writer the simulator uses. A fleet-year missing any of its ages is
// excluded outright, so univariate and multivariate families always see
// the same observation set.

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stocklik/csv.hpp"
#include "stocklik/model_space.hpp"

namespace stocklik {

// Known per-(age, year) input, dense over its own rectangle.
struct BiologyTable {
  std::string name;
  int first_age = 0;
  int first_year = 0;
  Eigen::MatrixXd values;  // rows: ages, cols: years

  bool covers(int age, int year) const {
    return age >= first_age && age < first_age + values.rows() && year >= first_year &&
           year < first_year + values.cols();
  }
  double at(int age, int year) const {
    if (!covers(age, year))
      throw std::out_of_range(name + ": no value for age " + std::to_string(age) + ", year " +
                              std::to_string(year));
    return values(age - first_age, year - first_year);
  }
};

struct BiologyInputs {
  BiologyTable mortality;      // natural mortality M, >= 0
  BiologyTable stock_weights;  // weight in stock, > 0
  BiologyTable catch_weights;  // weight in catch, > 0
  BiologyTable maturity;       // proportion mature, in [0,1]
};

// Observations of one fleet: complete years only, each a vector over the
// fleet's ages.
struct FleetObs {
  std::map<int, Eigen::VectorXd> years;
};

struct Dataset {
  std::vector<FleetSpec> fleets;
  std::vector<FleetObs> obs;  // parallel to fleets
  BiologyInputs biology;
  std::vector<std::string> exclusions;  // human-readable log of dropped fleet-years

  // Modeled spans: the union over fleets.
  int first_age = 0, last_age = 0;
  int first_year = 0, last_year = 0;

  int n_ages() const { return last_age - first_age + 1; }
  int n_years() const { return last_year - first_year + 1; }

  int fleet_index(const std::string& name) const {
    for (std::size_t i = 0; i < fleets.size(); ++i)
      if (fleets[i].name == name) return static_cast<int>(i);
    throw std::invalid_argument("unknown fleet '" + name + "'");
  }
};

namespace detail {

inline BiologyTable read_biology(const std::string& path, const std::string& name) {
  csv::Table t = csv::read_table(path, {"year", "age", "value"});
  if (t.rows.empty()) throw LoadError(path + ": no data rows");
  std::map<std::pair<int, int>, double> cells;  // (age, year) -> value
  int a0 = 1 << 30, a1 = -(1 << 30), y0 = 1 << 30, y1 = -(1 << 30);
  for (const auto& r : t.rows) {
    int year = csv::parse_int(t, r, 0);
    int age = csv::parse_int(t, r, 1);
    double value = csv::parse_double(t, r, 2);
    if (!cells.emplace(std::make_pair(age, year), value).second)
      csv::fail(path, r.line, "duplicate entry for age " + std::to_string(age) + ", year " +
                                  std::to_string(year));
    a0 = std::min(a0, age);
    a1 = std::max(a1, age);
    y0 = std::min(y0, year);
    y1 = std::max(y1, year);
  }
  BiologyTable out;
  out.name = name;
  out.first_age = a0;
  out.first_year = y0;
  out.values.setConstant(a1 - a0 + 1, y1 - y0 + 1, std::numeric_limits<double>::quiet_NaN());
  for (const auto& [key, value] : cells) out.values(key.first - a0, key.second - y0) = value;
  for (int i = 0; i < out.values.rows(); ++i)
    for (int j = 0; j < out.values.cols(); ++j)
      if (std::isnan(out.values(i, j)))
        throw LoadError(path + ": missing value for age " + std::to_string(a0 + i) + ", year " +
                        std::to_string(y0 + j) + " (tables must be complete rectangles)");
  return out;
}

inline void check_biology_range(const BiologyTable& t, double lo, double hi, bool lo_strict) {
  for (int i = 0; i < t.values.rows(); ++i)
    for (int j = 0; j < t.values.cols(); ++j) {
      double v = t.values(i, j);
      bool ok = lo_strict ? (v > lo) : (v >= lo);
      ok = ok && v <= hi;
      if (!ok)
        throw LoadError(t.name + ": value " + std::to_string(v) + " for age " +
                        std::to_string(t.first_age + i) + ", year " +
                        std::to_string(t.first_year + j) + " out of range");
    }
}

inline void check_biology_covers(const BiologyTable& t, const Dataset& d) {
  for (int a = d.first_age; a <= d.last_age; ++a)
    for (int y = d.first_year; y <= d.last_year; ++y)
      if (!t.covers(a, y))
        throw LoadError(t.name + ": no value for modeled age " + std::to_string(a) + ", year " +
                        std::to_string(y));
}

inline FleetKind parse_fleet_kind(const csv::Table& t, const csv::Row& r, std::size_t col) {
  const std::string& s = r.fields[col];
  if (s == "commercial") return FleetKind::Commercial;
  if (s == "survey") return FleetKind::Survey;
  csv::fail(t.path, r.line, "unknown fleet kind '" + s + "' (want commercial or survey)");
}

}  // namespace detail

inline Dataset load_dataset(const std::string& dir) {
  Dataset d;

  csv::Table fleets = csv::read_table(
      dir + "/fleets.csv",
      {"fleet", "kind", "first_year", "last_year", "first_age", "last_age", "timing"});
  for (const auto& r : fleets.rows) {
    FleetSpec f;
    f.name = r.fields[0];
    f.kind = detail::parse_fleet_kind(fleets, r, 1);
    f.first_year = csv::parse_int(fleets, r, 2);
    f.last_year = csv::parse_int(fleets, r, 3);
    f.first_age = csv::parse_int(fleets, r, 4);
    f.last_age = csv::parse_int(fleets, r, 5);
    f.timing = csv::parse_double(fleets, r, 6);
    for (const auto& other : d.fleets)
      if (other.name == f.name) csv::fail(fleets.path, r.line, "duplicate fleet '" + f.name + "'");
    try {
      f.validate();
    } catch (const std::invalid_argument& e) {
      csv::fail(fleets.path, r.line, e.what());
    }
    d.fleets.push_back(std::move(f));
  }
  if (d.fleets.empty()) throw LoadError(fleets.path + ": no fleets defined");

  d.first_age = d.fleets[0].first_age;
  d.last_age = d.fleets[0].last_age;
  d.first_year = d.fleets[0].first_year;
  d.last_year = d.fleets[0].last_year;
  for (const auto& f : d.fleets) {
    d.first_age = std::min(d.first_age, f.first_age);
    d.last_age = std::max(d.last_age, f.last_age);
    d.first_year = std::min(d.first_year, f.first_year);
    d.last_year = std::max(d.last_year, f.last_year);
  }

  // Collect raw observation cells, then keep only complete fleet-years.
  csv::Table obs = csv::read_table(dir + "/observations.csv", {"fleet", "year", "age", "value"});
  std::vector<std::map<int, std::map<int, double>>> cells(d.fleets.size());
  for (const auto& r : obs.rows) {
    const std::string& name = r.fields[0];
    int fi = -1;
    for (std::size_t i = 0; i < d.fleets.size(); ++i)
      if (d.fleets[i].name == name) fi = static_cast<int>(i);
    if (fi < 0) csv::fail(obs.path, r.line, "unknown fleet '" + name + "'");
    const FleetSpec& f = d.fleets[static_cast<std::size_t>(fi)];
    int year = csv::parse_int(obs, r, 1);
    int age = csv::parse_int(obs, r, 2);
    double value = csv::parse_double(obs, r, 3);
    if (!f.in_span(year))
      csv::fail(obs.path, r.line, "year " + std::to_string(year) + " outside span of fleet '" +
                                      name + "'");
    if (!f.has_age(age))
      csv::fail(obs.path, r.line, "age " + std::to_string(age) + " outside span of fleet '" +
                                      name + "'");
    if (!cells[static_cast<std::size_t>(fi)][year].emplace(age, value).second)
      csv::fail(obs.path, r.line, "duplicate observation for fleet '" + name + "', year " +
                                      std::to_string(year) + ", age " + std::to_string(age));
  }

  d.obs.resize(d.fleets.size());
  for (std::size_t fi = 0; fi < d.fleets.size(); ++fi) {
    FleetSpec& f = d.fleets[fi];
    for (int y = f.first_year; y <= f.last_year; ++y) {
      auto it = cells[fi].find(y);
      int have = (it == cells[fi].end()) ? 0 : static_cast<int>(it->second.size());
      if (have == f.n_ages()) {
        Eigen::VectorXd v(f.n_ages());
        for (int a = f.first_age; a <= f.last_age; ++a) v[a - f.first_age] = it->second.at(a);
        d.obs[fi].years.emplace(y, std::move(v));
        continue;
      }
      f.missing_years.insert(y);
      if (have > 0)
        d.exclusions.push_back("fleet '" + f.name + "', year " + std::to_string(y) +
                               ": dropped (" + std::to_string(have) + " of " +
                               std::to_string(f.n_ages()) + " ages present)");
    }
  }

  d.biology.mortality = detail::read_biology(dir + "/mortality.csv", "mortality");
  d.biology.stock_weights = detail::read_biology(dir + "/stock_weights.csv", "stock_weights");
  d.biology.catch_weights = detail::read_biology(dir + "/catch_weights.csv", "catch_weights");
  d.biology.maturity = detail::read_biology(dir + "/maturity.csv", "maturity");
  detail::check_biology_range(d.biology.mortality, 0.0, 1e6, false);
  detail::check_biology_range(d.biology.stock_weights, 0.0, 1e9, true);
  detail::check_biology_range(d.biology.catch_weights, 0.0, 1e9, true);
  detail::check_biology_range(d.biology.maturity, 0.0, 1.0, false);
  detail::check_biology_covers(d.biology.mortality, d);
  detail::check_biology_covers(d.biology.stock_weights, d);
  detail::check_biology_covers(d.biology.catch_weights, d);
  detail::check_biology_covers(d.biology.maturity, d);
  return d;
}

namespace detail {

inline void write_biology(const std::string& path, const BiologyTable& t) {
  csv::Writer w(path);
  w.row({"year", "age", "value"});
  for (int j = 0; j < t.values.cols(); ++j)
    for (int i = 0; i < t.values.rows(); ++i)
      w.row({std::to_string(t.first_year + j), std::to_string(t.first_age + i),
             csv::format_double(t.values(i, j))});
  w.close();
}

}  // namespace detail

// Writes the directory layout load_dataset reads; the round trip is
// identity on fleets, observations, and biology.
inline void save_dataset(const Dataset& d, const std::string& dir) {
  csv::Writer fleets(dir + "/fleets.csv");
  fleets.row({"fleet", "kind", "first_year", "last_year", "first_age", "last_age", "timing"});
  for (const auto& f : d.fleets)
    fleets.row({f.name, f.kind == FleetKind::Commercial ? "commercial" : "survey",
                std::to_string(f.first_year), std::to_string(f.last_year),
                std::to_string(f.first_age), std::to_string(f.last_age),
                csv::format_double(f.timing)});
  fleets.close();

  csv::Writer obs(dir + "/observations.csv");
  obs.row({"fleet", "year", "age", "value"});
  for (std::size_t fi = 0; fi < d.fleets.size(); ++fi) {
    const FleetSpec& f = d.fleets[fi];
    for (const auto& [year, v] : d.obs[fi].years)
      for (int a = f.first_age; a <= f.last_age; ++a)
        obs.row({f.name, std::to_string(year), std::to_string(a),
                 csv::format_double(v[a - f.first_age])});
  }
  obs.close();

  detail::write_biology(dir + "/mortality.csv", d.biology.mortality);
  detail::write_biology(dir + "/stock_weights.csv", d.biology.stock_weights);
  detail::write_biology(dir + "/catch_weights.csv", d.biology.catch_weights);
  detail::write_biology(dir + "/maturity.csv", d.biology.maturity);
}

}  // namespace stocklik
