#pragma once

// Forward simulation: latent F and abundance paths drawn from the process
// model, observations drawn from each fleet's likelihood family around the
// Baranov or survey predictions. The output dataset survives a save/load
// round trip and fits with the same ModelSpec that generated it, which is
// what makes simulated data usable as an estimation oracle.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "stocklik/bridge.hpp"
#include "stocklik/dataset.hpp"
#include "stocklik/densities_mv.hpp"
#include "stocklik/densities_uv.hpp"
#include "stocklik/model.hpp"

namespace stocklik {

struct SimOutput {
  Dataset dataset;
  LatentStates true_latents;
  Eigen::VectorXd theta_true;
  std::uint64_t seed = 0;
};

namespace detail {

// Unit-marginal AR(1) noise: e_0 = z_0, e_i = rho e_{i-1} + sqrt(1-rho^2) z_i,
// so every coordinate has variance one and corr(e_i, e_j) = rho^|i-j|.
inline Eigen::VectorXd ar1_unit_noise(int n, double rho, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  Eigen::VectorXd e(n);
  if (n == 0) return e;
  e[0] = z(rng);
  const double w = std::sqrt(1.0 - rho * rho);
  for (int i = 1; i < n; ++i) e[i] = rho * e[i - 1] + w * z(rng);
  return e;
}

inline Eigen::MatrixXd ar1_cov(const Eigen::VectorXd& sds, double rho) {
  const int n = static_cast<int>(sds.size());
  Eigen::MatrixXd cov(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      cov(i, j) = sds[i] * sds[j] * std::pow(rho, std::abs(i - j));
  return cov;
}

// Runs one stochastic draw until it lands in the observation domain (all
// components finite and strictly positive, so every family's density and
// the file format accept it). The cap turns a hopeless configuration into
// an error instead of a silent bias.
template <class Draw>
Eigen::VectorXd draw_in_domain(const std::string& fleet, int year, Draw&& draw) {
  constexpr int kCap = 1000;
  for (int attempt = 0; attempt < kCap; ++attempt) {
    Eigen::VectorXd x;
    try {
      x = draw();
    } catch (const std::exception& e) {
      throw std::runtime_error("simulate: fleet '" + fleet + "', year " + std::to_string(year) +
                               ": " + e.what());
    }
    if (x.allFinite() && (x.array() > 0.0).all()) return x;
  }
  throw std::runtime_error("simulate: fleet '" + fleet + "', year " + std::to_string(year) +
                           ": no draw satisfied the observation domain in " +
                           std::to_string(kCap) + " attempts");
}

}  // namespace detail

inline SimOutput simulate(const ModelSpec& spec, const Eigen::VectorXd& theta,
                          const BiologyInputs& biology, const std::vector<FleetSpec>& fleets,
                          std::uint64_t seed) {
  if (fleets.empty()) throw std::invalid_argument("simulate: need at least one fleet");
  for (const FleetSpec& f : fleets) f.validate();

  Dataset d;
  d.fleets = fleets;
  d.obs.resize(fleets.size());
  d.biology = biology;
  d.first_age = fleets[0].first_age;
  d.last_age = fleets[0].last_age;
  d.first_year = fleets[0].first_year;
  d.last_year = fleets[0].last_year;
  for (const FleetSpec& f : fleets) {
    d.first_age = std::min(d.first_age, f.first_age);
    d.last_age = std::max(d.last_age, f.last_age);
    d.first_year = std::min(d.first_year, f.first_year);
    d.last_year = std::max(d.last_year, f.last_year);
  }
  detail::check_biology_covers(d.biology.mortality, d);
  detail::check_biology_covers(d.biology.stock_weights, d);
  detail::check_biology_covers(d.biology.catch_weights, d);
  detail::check_biology_covers(d.biology.maturity, d);

  ProcessLayout layout;
  layout.first_age = d.first_age;
  layout.first_year = d.first_year;
  layout.n_ages = d.n_ages();
  layout.n_years = d.n_years();
  layout.f_dim = resolve_f_dim(spec.a_star, layout.n_ages);
  layout.validate();

  const ThetaLayout th = build_theta_layout(spec, fleets, layout.f_dim, layout.n_ages);
  if (theta.size() != th.total)
    throw std::invalid_argument("simulate: theta has " + std::to_string(theta.size()) +
                                " entries, the layout needs " + std::to_string(th.total));
  const ProcessParams p = process_params_from_theta(th, layout.f_dim, spec.recruitment, theta);
  p.validate(layout.f_dim);

  const int A = layout.n_ages, Y = layout.n_years, FD = layout.f_dim;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;

  // Year one is anchored deterministically: the diffuse year-one density is
  // an estimation device, not a description of how the stock started.
  LatentStates s;
  s.logF.setConstant(FD, Y, std::log(0.3));
  s.logN.resize(A, Y);
  for (int a = 0; a < A; ++a) s.logN(a, 0) = 8.0 - 0.4 * a;

  for (int y = 1; y < Y; ++y) {
    const int year = layout.first_year + y;
    const Eigen::VectorXd e = detail::ar1_unit_noise(FD, p.F_scale.rho, rng);
    for (int i = 0; i < FD; ++i) s.logF(i, y) = s.logF(i, y - 1) + p.F_scale.sds[i] * e[i];

    auto z_prev = [&](int a) {
      return std::exp(s.logF(layout.f_state(a), y - 1)) +
             biology.mortality.at(layout.first_age + a, year - 1);
    };
    for (int a = 1; a < A; ++a) {
      double lead = s.logN(a - 1, y - 1) - z_prev(a - 1);
      if (a == A - 1)
        lead = detail::log_add(lead, s.logN(a, y - 1) - z_prev(a));
      s.logN(a, y) = lead + p.survival_sd * z(rng);
    }

    double mean = std::exp(s.logN(0, y - 1));
    if (spec.recruitment == Recruitment::BevertonHolt) {
      double spawn = 0.0;
      for (int a = 0; a < A; ++a)
        spawn += biology.maturity.at(layout.first_age + a, year - 1) *
                 biology.stock_weights.at(layout.first_age + a, year - 1) *
                 std::exp(s.logN(a, y - 1));
      mean = beverton_holt_mean(p.bh_a, p.bh_b, spawn);
    }
    s.logN(0, y) = std::log(mean) + p.rec_sd * z(rng);
  }

  const Family fam = spec.family;
  for (int fi = 0; fi < static_cast<int>(fleets.size()); ++fi) {
    const FleetSpec& fl = fleets[static_cast<std::size_t>(fi)];
    const bool survey = fl.kind == FleetKind::Survey;
    const int nAf = fl.n_ages();

    for (int year = fl.first_year; year <= fl.last_year; ++year) {
      if (fl.missing_years.count(year)) continue;
      const int y = year - layout.first_year;

      Eigen::VectorXd pred(nAf);
      for (int j = 0; j < nAf; ++j) {
        const int age = fl.first_age + j;
        const int am = age - layout.first_age;
        const double F = std::exp(s.logF(layout.f_state(am), y));
        const double N = std::exp(s.logN(am, y));
        const double M = biology.mortality.at(age, year);
        pred[j] = survey ? survey_index(std::exp(theta[th.q(fi, age)]), F, M, N, fl.timing)
                         : baranov_catch(F, M, N);
      }

      Eigen::VectorXd x;
      if (is_univariate(fam)) {
        x.resize(nAf);
        for (int j = 0; j < nAf; ++j) {
          const int age = fl.first_age + j;
          const double sigma =
              link_inverse(role_link(Role::Scale, fam), theta[th.obs.index(fi, age, Role::Scale)]);
          const double tau = has_shape_param(fam)
                                 ? link_inverse(role_link(Role::Shape, fam),
                                                theta[th.obs.index(fi, age, Role::Shape)])
                                 : 0.0;
          const double mu = pred[j];
          x[j] = detail::draw_in_domain(fl.name, year, [&] {
            return Eigen::VectorXd::Constant(1, sample_uv(fam, mu, sigma, tau, rng));
          })[0];
        }
      } else if (fam == Family::M7) {
        Eigen::VectorXd sds(nAf);
        for (int j = 0; j < nAf; ++j)
          sds[j] = std::exp(theta[th.obs.index(fi, fl.first_age + j, Role::Scale)]);
        const bool has_cor = th.obs.has(fi, ParamSharing::kAgeless, Role::Correlation);
        const double rho = has_cor ? std::tanh(theta[th.obs.index(fi, Role::Correlation)]) : 0.0;
        const Eigen::MatrixXd cov = detail::ar1_cov(sds, rho);
        x = detail::draw_in_domain(fl.name, year,
                                   [&] { return sample_mv(fam, pred, cov, rng); });
      } else {
        // Proportion families: draw a composition and a log-normal total
        // around its prediction, then combine back to numbers at age.
        const Eigen::VectorXd pi = pred / pred.sum();
        const TotalKind kind = family_total_kind(fam);
        Eigen::VectorXd weights;
        double pred_total = pred.sum();
        if (kind == TotalKind::Weight) {
          weights.resize(nAf);
          for (int j = 0; j < nAf; ++j)
            weights[j] = biology.catch_weights.at(fl.first_age + j, year);
          pred_total = weights.dot(pred);
        }

        Eigen::VectorXd prop;
        if (is_dirichlet(fam)) {
          const double conc =
              std::exp(theta[th.obs.index(fi, Role::Concentration)]);
          prop = detail::draw_in_domain(fl.name, year,
                                        [&] { return sample_mv(fam, pi, conc, rng); });
        } else {
          Eigen::VectorXd sds(nAf - 1);
          for (int j = 0; j + 1 < nAf; ++j)
            sds[j] = std::exp(theta[th.obs.index(fi, fl.first_age + j, Role::Scale)]);
          const bool has_cor = th.obs.has(fi, ParamSharing::kAgeless, Role::Correlation);
          const double rho = has_cor ? std::tanh(theta[th.obs.index(fi, Role::Correlation)]) : 0.0;
          const Eigen::MatrixXd cov = detail::ar1_cov(sds, rho);
          prop = detail::draw_in_domain(fl.name, year,
                                        [&] { return sample_mv(fam, pi, cov, rng); });
        }

        const double total_sd = std::exp(theta[th.obs.index(fi, Role::TotalScale)]);
        SplitObs sp;
        sp.proportions = prop;
        sp.total = pred_total * std::exp(total_sd * z(rng));
        sp.total_kind = kind;
        if (kind == TotalKind::Weight) sp.weights = weights;
        x = combine(sp);
      }
      d.obs[fi].years.emplace(year, std::move(x));
    }
  }

  SimOutput out;
  out.dataset = std::move(d);
  out.true_latents = std::move(s);
  out.theta_true = theta;
  out.seed = seed;
  return out;
}

// The desk-scale design used by the simulate subcommand and the estimation
// oracles: one commercial fleet and one mid-year survey, both covering the
// whole age range. A survey that skips the oldest ages leaves F and N
// confounded there, so the full-coverage survey is deliberate.
struct SimDesign {
  std::vector<FleetSpec> fleets;
  BiologyInputs biology;
};

// Observation noise levels on the natural scale; the defaults match the
// config file defaults.
struct SimLevels {
  double obs_sd = 0.25;
  double total_sd = 0.15;
  double concentration = 40.0;
  double rho = 0.5;
};

inline SimDesign make_sim_design(int n_ages = 5, int n_years = 40) {
  if (n_ages < 2 || n_years < 3)
    throw std::invalid_argument("make_sim_design: need at least 2 ages and 3 years");
  const int a0 = 1, y0 = 2000;
  const int a1 = a0 + n_ages - 1, y1 = y0 + n_years - 1;

  SimDesign out;
  FleetSpec comm;
  comm.name = "commercial";
  comm.kind = FleetKind::Commercial;
  comm.first_year = y0;
  comm.last_year = y1;
  comm.first_age = a0;
  comm.last_age = a1;
  FleetSpec surv = comm;
  surv.name = "survey";
  surv.kind = FleetKind::Survey;
  surv.timing = 0.5;
  out.fleets = {comm, surv};

  auto table = [&](const std::string& name, auto&& cell) {
    BiologyTable t;
    t.name = name;
    t.first_age = a0;
    t.first_year = y0;
    t.values.resize(n_ages, n_years);
    for (int i = 0; i < n_ages; ++i)
      for (int j = 0; j < n_years; ++j) t.values(i, j) = cell(a0 + i);
    return t;
  };
  out.biology.mortality = table("mortality", [](int) { return 0.2; });
  out.biology.stock_weights =
      table("stock_weights", [](int age) { return 0.3 + 0.25 * age; });
  out.biology.catch_weights =
      table("catch_weights", [](int age) { return 0.9 * (0.3 + 0.25 * age); });
  out.biology.maturity =
      table("maturity", [](int age) { return std::min(1.0, 0.25 * age); });
  return out;
}

// A complete true-parameter vector for the design: moderate observation
// noise, catchability one half, and a slowly drifting process. M2's scale
// is a gamma shape, so its value is chosen to give the same 0.25
// coefficient of variation the other families get directly.
inline Eigen::VectorXd make_sim_theta(const ModelSpec& spec, const SimDesign& design,
                                      const SimLevels& levels = {}) {
  int a0 = design.fleets.at(0).first_age, a1 = design.fleets.at(0).last_age;
  for (const FleetSpec& f : design.fleets) {
    a0 = std::min(a0, f.first_age);
    a1 = std::max(a1, f.last_age);
  }
  const int n_ages = a1 - a0 + 1;
  const int f_dim = resolve_f_dim(spec.a_star, n_ages);
  const ThetaLayout th = build_theta_layout(spec, design.fleets, f_dim, n_ages);

  Eigen::VectorXd t(th.total);
  for (const auto& [key, idx] : th.obs.key_map) {
    const Role role = static_cast<Role>(std::get<2>(key));
    double level = 0.0;
    switch (role) {
      case Role::Scale:
        level = spec.family == Family::M2 ? 1.0 / (levels.obs_sd * levels.obs_sd)
                                          : levels.obs_sd;
        break;
      case Role::Shape: level = spec.family == Family::M3 ? 0.5 : 5.0; break;
      case Role::Correlation: level = levels.rho; break;
      case Role::TotalScale: level = levels.total_sd; break;
      case Role::Concentration: level = levels.concentration; break;
    }
    t[idx] = link_forward(role_link(role, spec.family), level);
  }
  for (const auto& [key, idx] : th.q_map) {
    (void)key;
    t[idx] = std::log(0.5);
  }
  for (int i = 0; i < th.n_f_sd; ++i) t[th.f_sd_offset + i] = std::log(0.2);
  if (th.f_rho >= 0) t[th.f_rho] = std::atanh(0.5);
  if (th.survival_sd >= 0) t[th.survival_sd] = std::log(0.1);
  t[th.rec_sd] = std::log(0.4);
  if (th.bh_a >= 0) {
    t[th.bh_a] = std::log(5.0);
    t[th.bh_b] = std::log(1e-3);
  }
  return t;
}

}  // namespace stocklik
