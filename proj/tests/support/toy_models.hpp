#pragma once

// Small synthetic datasets and random draws shared by the model-level
// tests: three ages, five years, one commercial fleet over the full span
// and one mid-timing survey over a shorter span and the younger ages.

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "stocklik/dataset.hpp"
#include "stocklik/model.hpp"

namespace toy {

inline stocklik::BiologyTable flat_table(int first_age, int n_ages, int first_year, int n_years,
                                         double v) {
  stocklik::BiologyTable t;
  t.first_age = first_age;
  t.first_year = first_year;
  t.values = Eigen::MatrixXd::Constant(n_ages, n_years, v);
  return t;
}

inline stocklik::Dataset demo_dataset(double catch_weight = 1.5) {
  using namespace stocklik;
  Dataset d;
  FleetSpec comm;
  comm.name = "comm";
  comm.kind = FleetKind::Commercial;
  comm.first_year = 2000;
  comm.last_year = 2004;
  comm.first_age = 1;
  comm.last_age = 3;
  FleetSpec surv;
  surv.name = "surv";
  surv.kind = FleetKind::Survey;
  surv.first_year = 2001;
  surv.last_year = 2004;
  surv.first_age = 1;
  surv.last_age = 2;
  surv.timing = 0.5;
  d.fleets = {comm, surv};
  d.first_age = 1;
  d.last_age = 3;
  d.first_year = 2000;
  d.last_year = 2004;
  d.biology.mortality = flat_table(1, 3, 2000, 5, 0.2);
  d.biology.stock_weights = flat_table(1, 3, 2000, 5, 1.0);
  for (int a = 0; a < 3; ++a)
    for (int y = 0; y < 5; ++y) d.biology.stock_weights.values(a, y) = 0.5 + 0.4 * a + 0.01 * y;
  d.biology.catch_weights = flat_table(1, 3, 2000, 5, catch_weight);
  d.biology.maturity = flat_table(1, 3, 2000, 5, 0.0);
  for (int y = 0; y < 5; ++y) {
    d.biology.maturity.values(1, y) = 0.5;
    d.biology.maturity.values(2, y) = 1.0;
  }

  FleetObs comm_obs, surv_obs;
  for (int year = 2000; year <= 2004; ++year) {
    Eigen::VectorXd x(3);
    for (int j = 0; j < 3; ++j) x[j] = 120.0 * std::exp(-0.5 * j) * (1.0 + 0.07 * (year - 2000));
    comm_obs.years[year] = x;
  }
  for (int year = 2001; year <= 2004; ++year) {
    Eigen::VectorXd x(2);
    for (int j = 0; j < 2; ++j) x[j] = 45.0 * std::exp(-0.4 * j) * (1.0 + 0.05 * (year - 2001));
    surv_obs.years[year] = x;
  }
  d.obs = {comm_obs, surv_obs};
  return d;
}

inline Eigen::VectorXd random_theta(const stocklik::Model& m, std::mt19937& rng) {
  std::normal_distribution<double> n(0.0, 0.3);
  Eigen::VectorXd th(m.k());
  for (int i = 0; i < m.k(); ++i) th[i] = n(rng);
  return th;
}

inline stocklik::LatentStates random_states(const stocklik::Model& m, std::mt19937& rng) {
  std::normal_distribution<double> n(0.0, 0.4);
  stocklik::LatentStates s;
  s.logF = Eigen::MatrixXd::Zero(m.layout.f_dim, m.layout.n_years);
  s.logN = Eigen::MatrixXd::Zero(m.layout.n_ages, m.layout.n_years);
  for (int y = 0; y < m.layout.n_years; ++y) {
    for (int i = 0; i < m.layout.f_dim; ++i) s.logF(i, y) = std::log(0.3) + n(rng);
    for (int a = 0; a < m.layout.n_ages; ++a) s.logN(a, y) = 4.5 + n(rng);
  }
  return s;
}

}  // namespace toy
