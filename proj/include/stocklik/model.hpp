#pragma once

// Binds one observational family, a sharing mode, and a dataset into a
// fixed-parameter layout plus the term collection whose sum is the joint
// negative log-likelihood. Parameters live on the unconstrained scale
// throughout; term bodies apply the links so derivatives come out on the
// optimizer's scale.

#include <algorithm>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stocklik/bridge.hpp"
#include "stocklik/dataset.hpp"
#include "stocklik/densities_mv.hpp"
#include "stocklik/densities_uv.hpp"
#include "stocklik/model_space.hpp"
#include "stocklik/process.hpp"
#include "stocklik/terms.hpp"

namespace stocklik {

enum class FSdMode { Shared, Full };

struct ModelSpec {
  static constexpr int kAuto = std::numeric_limits<int>::min();

  Family family = Family::M1;
  SharingMode sharing = SharingMode::Full;
  Recruitment recruitment = Recruitment::RandomWalk;
  int a_star = 0;  // 0: one F state per modeled age
  FSdMode f_sd_mode = FSdMode::Shared;
  int fbar_first = kAuto;  // actual ages; kAuto means the full modeled span
  int fbar_last = kAuto;
  bool jacobian_correction = true;
};

// Index map over the fixed-parameter vector: observational parameters
// first (per the sharing map), then survey catchabilities, then process
// parameters. Every index also has a name and a link.
struct ThetaLayout {
  ParamSharing obs;
  std::map<std::pair<int, int>, int> q_map;  // (fleet, age) -> index
  int f_sd_offset = -1;
  int n_f_sd = 0;
  int f_rho = -1;        // absent with a single F state
  int survival_sd = -1;  // absent with a single age
  int rec_sd = -1;
  int bh_a = -1, bh_b = -1;  // present for Beverton-Holt recruitment
  int total = 0;
  std::vector<std::string> names;
  std::vector<Link> links;

  int q(int fleet, int age) const {
    auto it = q_map.find({fleet, age});
    if (it == q_map.end())
      throw std::out_of_range("no catchability for fleet " + std::to_string(fleet) + ", age " +
                              std::to_string(age));
    return it->second;
  }
  int f_sd(int state) const { return f_sd_offset + (n_f_sd == 1 ? 0 : state); }
};

inline ThetaLayout build_theta_layout(const ModelSpec& spec, const std::vector<FleetSpec>& fleets,
                                      int f_dim, int n_ages) {
  ThetaLayout t;
  t.obs = build_sharing_map(fleets, spec.family, spec.sharing);
  t.names = t.obs.names;
  t.links = t.obs.links;
  int next = t.obs.n_params;
  auto push = [&](const std::string& name, Link l) {
    t.names.push_back(name);
    t.links.push_back(l);
    return next++;
  };

  for (int fi = 0; fi < static_cast<int>(fleets.size()); ++fi) {
    const FleetSpec& fl = fleets[static_cast<std::size_t>(fi)];
    if (fl.kind != FleetKind::Survey) continue;
    for (int a = fl.first_age; a <= fl.last_age; ++a)
      t.q_map[{fi, a}] = push("q[f" + std::to_string(fi) + ",a" + std::to_string(a) + "]", Link::Log);
  }

  t.n_f_sd = spec.f_sd_mode == FSdMode::Full ? f_dim : 1;
  t.f_sd_offset = next;
  if (t.n_f_sd == 1) {
    push("f_sd", Link::Log);
  } else {
    for (int s = 0; s < f_dim; ++s) push("f_sd[s" + std::to_string(s) + "]", Link::Log);
  }
  if (f_dim >= 2) t.f_rho = push("f_rho", Link::Atanh);
  if (n_ages >= 2) t.survival_sd = push("survival_sd", Link::Log);
  t.rec_sd = push("rec_sd", Link::Log);
  if (spec.recruitment == Recruitment::BevertonHolt) {
    t.bh_a = push("bh_a", Link::Log);
    t.bh_b = push("bh_b", Link::Log);
  }
  t.total = next;
  return t;
}

struct Model {
  ModelSpec spec;
  ProcessLayout layout;
  int bs = 0;  // latent block per year: f_dim F states then n_ages logN
  ThetaLayout theta;
  std::vector<FleetSpec> fleets;
  std::vector<FleetObs> obs;
  BiologyInputs biology;
  int fbar_lo = 0, fbar_hi = 0;  // age indices of the F-bar average
  TermCollection terms;

  int uF(int state, int year_idx) const { return year_idx * bs + state; }
  int uN(int age_idx, int year_idx) const { return year_idx * bs + layout.f_dim + age_idx; }
  int nu() const { return terms.nu(); }
  int k() const { return theta.total; }
};

namespace detail {

// Local-variable bookkeeping for terms reading several parameters: global
// indices are deduplicated and bodies address them by local slot.
struct Slots {
  std::vector<int> idx;
  int local(int global) {
    for (std::size_t i = 0; i < idx.size(); ++i)
      if (idx[i] == global) return static_cast<int>(i);
    idx.push_back(global);
    return static_cast<int>(idx.size()) - 1;
  }
};

}  // namespace detail

inline Model build_model(const ModelSpec& spec, const Dataset& data) {
  ProcessLayout layout;
  layout.first_age = data.first_age;
  layout.first_year = data.first_year;
  layout.n_ages = data.n_ages();
  layout.n_years = data.n_years();
  layout.f_dim = resolve_f_dim(spec.a_star, layout.n_ages);
  layout.validate();

  const int A = layout.n_ages, Y = layout.n_years, FD = layout.f_dim;
  const int bs = FD + A;
  const Family fam = spec.family;

  ThetaLayout th = build_theta_layout(spec, data.fleets, FD, A);

  int fbar_lo = 0, fbar_hi = A - 1;
  if (spec.fbar_first != ModelSpec::kAuto || spec.fbar_last != ModelSpec::kAuto) {
    fbar_lo = spec.fbar_first - layout.first_age;
    fbar_hi = spec.fbar_last - layout.first_age;
    if (fbar_lo < 0 || fbar_hi >= A || fbar_hi < fbar_lo)
      throw std::invalid_argument("F-bar age range falls outside the modeled ages");
  }

  TermCollection terms(Y, bs, th.total);
  auto uF = [&](int s, int y) { return y * bs + s; };
  auto uN = [&](int a, int y) { return y * bs + FD + a; };

  // Year-1 states: wide normal so the marginal density is proper.
  for (int s = 0; s < FD; ++s)
    terms.add(make_term({uF(s, 0)}, {}, "initial F state " + std::to_string(s),
                        [](const auto* x) {
                          auto w = x[0] * (1.0 / kDiffuseSd);
                          return 0.5 * w * w + (kHalfLog2Pi + std::log(kDiffuseSd));
                        }));
  for (int a = 0; a < A; ++a)
    terms.add(make_term({uN(a, 0)}, {}, "initial abundance age " + std::to_string(layout.first_age + a),
                        [](const auto* x) {
                          auto w = x[0] * (1.0 / kDiffuseSd);
                          return 0.5 * w * w + (kHalfLog2Pi + std::log(kDiffuseSd));
                        }));

  // F random walk with correlated increments, one term per year step.
  {
    const int nsd = th.n_f_sd;
    const bool has_rho = th.f_rho >= 0;
    std::vector<int> tix;
    for (int i = 0; i < nsd; ++i) tix.push_back(th.f_sd_offset + i);
    if (has_rho) tix.push_back(th.f_rho);
    for (int y = 1; y < Y; ++y) {
      std::vector<int> uix;
      for (int s = 0; s < FD; ++s) uix.push_back(uF(s, y - 1));
      for (int s = 0; s < FD; ++s) uix.push_back(uF(s, y));
      terms.add(make_term(
          uix, tix, "F walk into year " + std::to_string(layout.first_year + y),
          [FD, nsd, has_rho](const auto* x) {
            using T = std::decay_t<decltype(x[0])>;
            using std::exp;
            using std::tanh;
            std::vector<T> inc(static_cast<std::size_t>(FD)), sds(static_cast<std::size_t>(FD));
            for (int i = 0; i < FD; ++i) {
              inc[static_cast<std::size_t>(i)] = x[FD + i] - x[i];
              sds[static_cast<std::size_t>(i)] = exp(x[2 * FD + (nsd == 1 ? 0 : i)]);
            }
            T rho = has_rho ? T(tanh(x[2 * FD + nsd])) : ad::make_constant<T>(0.0);
            return -logpdf_gauss_ar1(inc, sds, rho);
          }));
    }
  }

  // Survival residuals; the oldest age accumulates its own survivors.
  for (int y = 1; y < Y; ++y) {
    const int year = layout.first_year + y;
    for (int a = 1; a < A; ++a) {
      const std::string label =
          "survival to age " + std::to_string(layout.first_age + a) + ", year " + std::to_string(year);
      if (a == A - 1) {
        const double M_from = data.biology.mortality.at(layout.first_age + a - 1, year - 1);
        const double M_stay = data.biology.mortality.at(layout.first_age + a, year - 1);
        const int s_from = layout.f_state(a - 1), s_stay = layout.f_state(a);
        if (s_from == s_stay) {
          terms.add(make_term(
              {uN(a - 1, y - 1), uN(a, y - 1), uF(s_from, y - 1), uN(a, y)}, {th.survival_sd}, label,
              [M_from, M_stay](const auto* x) {
                using T = std::decay_t<decltype(x[0])>;
                using std::exp;
                T F = exp(x[2]);
                T pred = detail::log_add(x[0] - (F + M_from), x[1] - (F + M_stay));
                return detail::centered_normal_nll(x[3] - pred, T(exp(x[4])));
              }));
        } else {
          terms.add(make_term(
              {uN(a - 1, y - 1), uN(a, y - 1), uF(s_from, y - 1), uF(s_stay, y - 1), uN(a, y)},
              {th.survival_sd}, label, [M_from, M_stay](const auto* x) {
                using T = std::decay_t<decltype(x[0])>;
                using std::exp;
                T pred = detail::log_add(x[0] - (exp(x[2]) + M_from), x[1] - (exp(x[3]) + M_stay));
                return detail::centered_normal_nll(x[4] - pred, T(exp(x[5])));
              }));
        }
      } else {
        const double M = data.biology.mortality.at(layout.first_age + a - 1, year - 1);
        terms.add(make_term({uN(a - 1, y - 1), uF(layout.f_state(a - 1), y - 1), uN(a, y)},
                            {th.survival_sd}, label, [M](const auto* x) {
                              using T = std::decay_t<decltype(x[0])>;
                              using std::exp;
                              T pred = x[0] - (exp(x[1]) + M);
                              return detail::centered_normal_nll(x[2] - pred, T(exp(x[3])));
                            }));
      }
    }
  }

  // Recruitment residuals.
  for (int y = 1; y < Y; ++y) {
    const int year = layout.first_year + y;
    const std::string label = "recruitment, year " + std::to_string(year);
    if (spec.recruitment == Recruitment::RandomWalk) {
      terms.add(make_term({uN(0, y - 1), uN(0, y)}, {th.rec_sd}, label, [](const auto* x) {
        using T = std::decay_t<decltype(x[0])>;
        using std::exp;
        return detail::centered_normal_nll(x[1] - x[0], T(exp(x[2])));
      }));
    } else {
      std::vector<double> mat(static_cast<std::size_t>(A)), w(static_cast<std::size_t>(A));
      for (int a = 0; a < A; ++a) {
        mat[static_cast<std::size_t>(a)] = data.biology.maturity.at(layout.first_age + a, year - 1);
        w[static_cast<std::size_t>(a)] = data.biology.stock_weights.at(layout.first_age + a, year - 1);
      }
      std::vector<int> uix;
      for (int a = 0; a < A; ++a) uix.push_back(uN(a, y - 1));
      uix.push_back(uN(0, y));
      terms.add(make_term(uix, {th.bh_a, th.bh_b, th.rec_sd}, label,
                          [A, mat, w](const auto* x) {
                            using T = std::decay_t<decltype(x[0])>;
                            using std::exp;
                            using std::log;
                            T spawn = ad::make_constant<T>(0.0);
                            for (int a = 0; a < A; ++a)
                              spawn = spawn + mat[static_cast<std::size_t>(a)] *
                                                  w[static_cast<std::size_t>(a)] * exp(x[a]);
                            T mean = beverton_holt_mean(T(exp(x[A + 1])), T(exp(x[A + 2])), spawn);
                            return detail::centered_normal_nll(x[A] - log(mean), T(exp(x[A + 3])));
                          }));
    }
  }

  // Observation terms, one fleet-year at a time; dropped years have no
  // entry in the observation map, so they contribute nothing anywhere.
  for (int fi = 0; fi < static_cast<int>(data.fleets.size()); ++fi) {
    const FleetSpec& fl = data.fleets[static_cast<std::size_t>(fi)];
    const bool survey = fl.kind == FleetKind::Survey;
    const int ai0 = fl.first_age - layout.first_age;
    const int nAf = fl.n_ages();

    for (const auto& [year, xv] : data.obs[static_cast<std::size_t>(fi)].years) {
      const int y = year - layout.first_year;
      const std::string where = "fleet '" + fl.name + "', year " + std::to_string(year);

      if (is_univariate(fam)) {
        for (int j = 0; j < nAf; ++j) {
          const int age = fl.first_age + j;
          const int am = ai0 + j;
          const double x_obs = xv[j];
          const double M = data.biology.mortality.at(age, year);
          const double timing = fl.timing;
          const bool shape = has_shape_param(fam);
          const Link shape_link = shape ? role_link(Role::Shape, fam) : Link::Log;
          std::vector<int> tix = {th.obs.index(fi, age, Role::Scale)};
          if (shape) tix.push_back(th.obs.index(fi, age, Role::Shape));
          if (survey) tix.push_back(th.q(fi, age));
          terms.add(make_term(
              {uF(layout.f_state(am), y), uN(am, y)}, tix,
              where + ", age " + std::to_string(age),
              [fam, x_obs, M, timing, survey, shape, shape_link](const auto* x) {
                using T = std::decay_t<decltype(x[0])>;
                using std::exp;
                T F = exp(x[0]);
                T N = exp(x[1]);
                T sigma = exp(x[2]);
                T tau = shape ? link_inverse(shape_link, x[3]) : ad::make_constant<T>(0.0);
                T mu = survey ? survey_index(T(exp(x[shape ? 4 : 3])), F, M, N, timing)
                              : baranov_catch(F, M, N);
                return -logpdf_uv(fam, x_obs, mu, sigma, tau);
              }));
        }
        continue;
      }

      // Multivariate and proportions families: one term per fleet-year.
      std::vector<int> f_states, f_pos(static_cast<std::size_t>(nAf));
      for (int j = 0; j < nAf; ++j) {
        int s = layout.f_state(ai0 + j);
        auto it = std::find(f_states.begin(), f_states.end(), s);
        if (it == f_states.end()) {
          f_states.push_back(s);
          f_pos[static_cast<std::size_t>(j)] = static_cast<int>(f_states.size()) - 1;
        } else {
          f_pos[static_cast<std::size_t>(j)] = static_cast<int>(it - f_states.begin());
        }
      }
      const int nf = static_cast<int>(f_states.size());
      std::vector<int> uix;
      for (int s : f_states) uix.push_back(uF(s, y));
      for (int j = 0; j < nAf; ++j) uix.push_back(uN(ai0 + j, y));

      std::vector<double> x_all(static_cast<std::size_t>(nAf)), M_age(static_cast<std::size_t>(nAf));
      for (int j = 0; j < nAf; ++j) {
        x_all[static_cast<std::size_t>(j)] = xv[j];
        M_age[static_cast<std::size_t>(j)] = data.biology.mortality.at(fl.first_age + j, year);
      }
      const double timing = fl.timing;

      detail::Slots slots;
      std::vector<int> q_pos;
      if (survey)
        for (int j = 0; j < nAf; ++j) q_pos.push_back(slots.local(th.q(fi, fl.first_age + j)));

      if (fam == Family::M7) {
        std::vector<int> sd_pos(static_cast<std::size_t>(nAf));
        for (int j = 0; j < nAf; ++j)
          sd_pos[static_cast<std::size_t>(j)] = slots.local(th.obs.index(fi, fl.first_age + j, Role::Scale));
        const bool has_cor = th.obs.has(fi, ParamSharing::kAgeless, Role::Correlation);
        const int rho_pos = has_cor ? slots.local(th.obs.index(fi, Role::Correlation)) : -1;
        terms.add(make_term(
            uix, slots.idx, where,
            [nAf, nf, survey, timing, x_all, M_age, f_pos, sd_pos, q_pos, rho_pos](const auto* x) {
              using T = std::decay_t<decltype(x[0])>;
              using std::exp;
              using std::log;
              using std::tanh;
              const int nu_loc = nf + nAf;
              std::vector<T> log_mu(static_cast<std::size_t>(nAf)), sds(static_cast<std::size_t>(nAf));
              for (int j = 0; j < nAf; ++j) {
                T F = exp(x[f_pos[static_cast<std::size_t>(j)]]);
                T N = exp(x[nf + j]);
                T mu = survey ? survey_index(T(exp(x[nu_loc + q_pos[static_cast<std::size_t>(j)]])), F,
                                             M_age[static_cast<std::size_t>(j)], N, timing)
                              : baranov_catch(F, M_age[static_cast<std::size_t>(j)], N);
                log_mu[static_cast<std::size_t>(j)] = log(mu);
                sds[static_cast<std::size_t>(j)] = exp(x[nu_loc + sd_pos[static_cast<std::size_t>(j)]]);
              }
              T rho = rho_pos >= 0 ? T(tanh(x[nu_loc + rho_pos])) : ad::make_constant<T>(0.0);
              return -logpdf_mvlognormal_ar1(x_all, log_mu, sds, rho);
            }));
        continue;
      }

      // Proportions-with-total families.
      const bool weight_kind = total_is_weight(fam);
      std::vector<double> wts;
      if (weight_kind)
        for (int j = 0; j < nAf; ++j)
          wts.push_back(data.biology.catch_weights.at(fl.first_age + j, year));

      double jac_shift = 0.0;
      if (!spec.jacobian_correction) {
        Eigen::Map<const Eigen::VectorXd> xe(x_all.data(), nAf);
        Eigen::VectorXd we;
        if (weight_kind) we = Eigen::Map<const Eigen::VectorXd>(wts.data(), nAf);
        jac_shift = log_abs_det_jacobian(xe, weight_kind ? TotalKind::Weight : TotalKind::Numbers, we);
      }

      const int total_pos = slots.local(th.obs.index(fi, Role::TotalScale));
      if (is_dirichlet(fam)) {
        const int conc_pos = slots.local(th.obs.index(fi, Role::Concentration));
        terms.add(make_term(
            uix, slots.idx, where,
            [fam, nAf, nf, survey, timing, x_all, M_age, f_pos, q_pos, wts, jac_shift, total_pos,
             conc_pos](const auto* x) {
              using T = std::decay_t<decltype(x[0])>;
              using std::exp;
              const int nu_loc = nf + nAf;
              std::vector<T> pred(static_cast<std::size_t>(nAf));
              for (int j = 0; j < nAf; ++j) {
                T F = exp(x[f_pos[static_cast<std::size_t>(j)]]);
                T N = exp(x[nf + j]);
                pred[static_cast<std::size_t>(j)] =
                    survey ? survey_index(T(exp(x[nu_loc + q_pos[static_cast<std::size_t>(j)]])), F,
                                          M_age[static_cast<std::size_t>(j)], N, timing)
                           : baranov_catch(F, M_age[static_cast<std::size_t>(j)], N);
              }
              ProportionsParams<T> par;
              par.concentration = exp(x[nu_loc + conc_pos]);
              par.total_sd = exp(x[nu_loc + total_pos]);
              return -corrected_obs_loglik(fam, x_all, pred, par, wts) + jac_shift;
            }));
        continue;
      }

      std::vector<int> sd_pos(static_cast<std::size_t>(nAf > 0 ? nAf - 1 : 0));
      for (int j = 0; j + 1 < nAf; ++j)
        sd_pos[static_cast<std::size_t>(j)] = slots.local(th.obs.index(fi, fl.first_age + j, Role::Scale));
      const bool has_cor = th.obs.has(fi, ParamSharing::kAgeless, Role::Correlation);
      const int rho_pos = has_cor ? slots.local(th.obs.index(fi, Role::Correlation)) : -1;
      terms.add(make_term(
          uix, slots.idx, where,
          [fam, nAf, nf, survey, timing, x_all, M_age, f_pos, sd_pos, q_pos, wts, jac_shift,
           total_pos, rho_pos](const auto* x) {
            using T = std::decay_t<decltype(x[0])>;
            using std::exp;
            using std::tanh;
            const int nu_loc = nf + nAf;
            std::vector<T> pred(static_cast<std::size_t>(nAf));
            for (int j = 0; j < nAf; ++j) {
              T F = exp(x[f_pos[static_cast<std::size_t>(j)]]);
              T N = exp(x[nf + j]);
              pred[static_cast<std::size_t>(j)] =
                  survey ? survey_index(T(exp(x[nu_loc + q_pos[static_cast<std::size_t>(j)]])), F,
                                        M_age[static_cast<std::size_t>(j)], N, timing)
                         : baranov_catch(F, M_age[static_cast<std::size_t>(j)], N);
            }
            ProportionsParams<T> par;
            par.logratio_sds.resize(static_cast<std::size_t>(nAf - 1));
            for (int j = 0; j + 1 < nAf; ++j)
              par.logratio_sds[static_cast<std::size_t>(j)] =
                  exp(x[nu_loc + sd_pos[static_cast<std::size_t>(j)]]);
            par.rho = rho_pos >= 0 ? T(tanh(x[nu_loc + rho_pos])) : ad::make_constant<T>(0.0);
            par.total_sd = exp(x[nu_loc + total_pos]);
            return -corrected_obs_loglik(fam, x_all, pred, par, wts) + jac_shift;
          }));
    }
  }

  return Model{spec,     layout, bs,      std::move(th), data.fleets, data.obs,
               data.biology, fbar_lo, fbar_hi, std::move(terms)};
}

inline Eigen::VectorXd pack_latents(const Model& m, const LatentStates& s) {
  const int FD = m.layout.f_dim, A = m.layout.n_ages, Y = m.layout.n_years;
  if (s.logF.rows() != FD || s.logF.cols() != Y || s.logN.rows() != A || s.logN.cols() != Y)
    throw std::invalid_argument("pack_latents: state dimensions do not match the model");
  Eigen::VectorXd u(m.nu());
  for (int y = 0; y < Y; ++y) {
    for (int i = 0; i < FD; ++i) u[m.uF(i, y)] = s.logF(i, y);
    for (int a = 0; a < A; ++a) u[m.uN(a, y)] = s.logN(a, y);
  }
  return u;
}

inline LatentStates unpack_latents(const Model& m, const Eigen::VectorXd& u) {
  const int FD = m.layout.f_dim, A = m.layout.n_ages, Y = m.layout.n_years;
  if (u.size() != m.nu()) throw std::invalid_argument("unpack_latents: wrong latent vector size");
  LatentStates s;
  s.logF.resize(FD, Y);
  s.logN.resize(A, Y);
  for (int y = 0; y < Y; ++y) {
    for (int i = 0; i < FD; ++i) s.logF(i, y) = u[m.uF(i, y)];
    for (int a = 0; a < A; ++a) s.logN(a, y) = u[m.uN(a, y)];
  }
  return s;
}

// Reference view of the process parameters encoded in a theta vector.
inline ProcessParams process_params_from_theta(const ThetaLayout& th, int f_dim,
                                               Recruitment recruitment,
                                               const Eigen::VectorXd& theta) {
  ProcessParams p;
  p.F_scale.sds.resize(f_dim);
  for (int s = 0; s < f_dim; ++s) p.F_scale.sds[s] = std::exp(theta[th.f_sd(s)]);
  p.F_scale.rho = th.f_rho >= 0 ? std::tanh(theta[th.f_rho]) : 0.0;
  p.survival_sd = th.survival_sd >= 0 ? std::exp(theta[th.survival_sd]) : 1.0;
  p.rec_sd = std::exp(theta[th.rec_sd]);
  p.recruitment = recruitment;
  if (th.bh_a >= 0) {
    p.bh_a = std::exp(theta[th.bh_a]);
    p.bh_b = std::exp(theta[th.bh_b]);
  }
  return p;
}

inline ProcessParams process_params_from_theta(const Model& m, const Eigen::VectorXd& theta) {
  return process_params_from_theta(m.theta, m.layout.f_dim, m.spec.recruitment, theta);
}

inline double joint_nll(const Model& m, const Eigen::VectorXd& theta, const LatentStates& s) {
  return m.terms.value(pack_latents(m, s), theta);
}

// Starting latents for the inner optimization: a flat F of 0.3, and log
// abundance backed out of the raw observations (catches inflated by one
// year of natural mortality; survey indices divided by the starting
// catchability). Cells nothing observes borrow their age's mean.
inline Eigen::VectorXd initial_latents(const Model& m) {
  const int A = m.layout.n_ages, Y = m.layout.n_years;
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(A, Y);
  Eigen::MatrixXd cnt = Eigen::MatrixXd::Zero(A, Y);
  for (std::size_t fi = 0; fi < m.fleets.size(); ++fi) {
    const FleetSpec& fl = m.fleets[fi];
    const bool survey = fl.kind == FleetKind::Survey;
    for (const auto& [year, xv] : m.obs[fi].years) {
      const int y = year - m.layout.first_year;
      for (int j = 0; j < fl.n_ages(); ++j) {
        const int a = fl.first_age + j - m.layout.first_age;
        const double x = xv[j];
        if (!(x > 0)) continue;
        const double val =
            survey ? x / 0.5 : x * std::exp(m.biology.mortality.at(fl.first_age + j, year));
        sum(a, y) += std::log(val);
        cnt(a, y) += 1.0;
      }
    }
  }
  LatentStates s;
  s.logF = Eigen::MatrixXd::Constant(m.layout.f_dim, Y, std::log(0.3));
  s.logN.resize(A, Y);
  double all_sum = 0.0, all_cnt = 0.0;
  for (int a = 0; a < A; ++a) {
    all_sum += sum.row(a).sum();
    all_cnt += cnt.row(a).sum();
  }
  const double fallback = all_cnt > 0 ? all_sum / all_cnt : 5.0;
  for (int a = 0; a < A; ++a) {
    const double row_cnt = cnt.row(a).sum();
    const double row_mean = row_cnt > 0 ? sum.row(a).sum() / row_cnt : fallback;
    for (int y = 0; y < Y; ++y)
      s.logN(a, y) = cnt(a, y) > 0 ? sum(a, y) / cnt(a, y) : row_mean;
  }
  return pack_latents(m, s);
}

// Starting fixed parameters, on the unconstrained scale. Scales start at
// 0.5, correlations at zero, catchabilities at 0.5, the generalized-gamma
// shape at 0.5, the log-t degrees of freedom at 5, Dirichlet
// concentrations at 10. Stock-recruitment coefficients come from a coarse
// grid fit to the starting abundances.
inline Eigen::VectorXd initial_theta(const Model& m, const Eigen::VectorXd& u0) {
  const ThetaLayout& th = m.theta;
  Eigen::VectorXd t = Eigen::VectorXd::Constant(th.total, std::log(0.5));

  std::vector<Role> role(static_cast<std::size_t>(th.obs.n_params), Role::Scale);
  for (const auto& [key, idx] : th.obs.key_map)
    role[static_cast<std::size_t>(idx)] = static_cast<Role>(std::get<2>(key));
  for (int i = 0; i < th.obs.n_params; ++i) {
    switch (role[static_cast<std::size_t>(i)]) {
      case Role::Scale:
      case Role::TotalScale:
        t[i] = std::log(0.5);
        break;
      case Role::Shape:
        t[i] = m.spec.family == Family::M3 ? 0.5 : std::log(5.0);
        break;
      case Role::Correlation:
        t[i] = 0.0;
        break;
      case Role::Concentration:
        t[i] = std::log(10.0);
        break;
    }
  }

  if (th.bh_a >= 0) {
    // Grid over plausible slopes and inverse-saturation levels, scored by
    // squared log-residuals of recruitment against prior-year spawners.
    LatentStates s = unpack_latents(m, u0);
    const int A = m.layout.n_ages, Y = m.layout.n_years;
    std::vector<double> spawners, recruits;
    for (int y = 1; y < Y; ++y) {
      const int year = m.layout.first_year + y;
      double ssb_prev = 0.0;
      for (int a = 0; a < A; ++a)
        ssb_prev += m.biology.maturity.at(m.layout.first_age + a, year - 1) *
                    m.biology.stock_weights.at(m.layout.first_age + a, year - 1) *
                    std::exp(s.logN(a, y - 1));
      spawners.push_back(ssb_prev);
      recruits.push_back(std::exp(s.logN(0, y)));
    }
    double s_mean = 0.0, r_mean = 0.0;
    for (std::size_t i = 0; i < spawners.size(); ++i) {
      s_mean += spawners[i];
      r_mean += recruits[i];
    }
    s_mean /= static_cast<double>(spawners.size());
    r_mean /= static_cast<double>(recruits.size());
    const double slope0 = r_mean / s_mean;
    double best = std::numeric_limits<double>::infinity(), best_a = slope0, best_b = 1.0 / s_mean;
    for (double fa : {0.25, 0.5, 1.0, 2.0, 4.0, 8.0}) {
      for (double fb : {0.1, 0.3, 1.0, 3.0, 10.0}) {
        const double a = slope0 * fa, b = fb / s_mean;
        double score = 0.0;
        for (std::size_t i = 0; i < spawners.size(); ++i) {
          const double resid = std::log(recruits[i]) - std::log(beverton_holt_mean(a, b, spawners[i]));
          score += resid * resid;
        }
        if (score < best) {
          best = score;
          best_a = a;
          best_b = b;
        }
      }
    }
    t[th.bh_a] = std::log(best_a);
    t[th.bh_b] = std::log(best_b);
  }
  return t;
}

inline double joint_nll(const ModelSpec& spec, const Dataset& data, const Eigen::VectorXd& theta,
                        const LatentStates& s) {
  Model m = build_model(spec, data);
  return joint_nll(m, theta, s);
}

}  // namespace stocklik
