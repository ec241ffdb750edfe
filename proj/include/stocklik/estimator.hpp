#pragma once

// Marginal maximum likelihood. The Laplace-approximated marginal is
// minimized over the fixed parameters with warm-started inner solves, the
// parameter covariance comes from central differences of the exact marginal
// gradient, and the smoothed states carry pointwise sds from the selected
// inverse of the latent Hessian. A failed fit is still reported, flagged,
// rather than thrown away: the caller decides what a non-converged family
// is worth.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "stocklik/laplace.hpp"
#include "stocklik/lbfgs.hpp"
#include "stocklik/model.hpp"

namespace stocklik {

struct FitOptions {
  LbfgsOptions outer;    // gradient tolerance 1e-6, up to 400 iterations
  InnerOptions inner;    // tightened below; see the constructor
  int restarts = 10;     // extra perturbed starts after a failed first one
  double restart_sd = 0.25;
  std::uint64_t seed = 1;  // feeds the restart perturbations only
  double fd_step = 1e-5;   // covariance finite-difference step

  // The marginal value is only as precise as the inner solve leaves the
  // latents: the log-determinant term has a nonzero latent gradient at the
  // joint mode, so latent error turns directly into value noise. The inner
  // polish pass pushes that error to rounding level; the outer line search
  // is told how much value noise can remain so it stops chasing decreases
  // below it.
  FitOptions() {
    inner.max_iter = 300;
    outer.value_noise = 1e-12;
  }
};

struct Convergence {
  double grad_norm = std::numeric_limits<double>::infinity();
  int outer_iterations = 0;
  long long inner_iterations = 0;  // summed over every marginal evaluation
  int restarts_used = 0;
  bool converged = false;
  std::string status;
};

struct FitResult {
  Eigen::VectorXd theta_hat;
  std::vector<std::string> names;
  double nll = std::numeric_limits<double>::infinity();
  double aic = std::numeric_limits<double>::infinity();
  int k = 0;
  Eigen::MatrixXd theta_cov;  // empty whenever cov_ok is false
  bool cov_ok = false;
  LatentStates latents_hat;
  LatentStates latent_sds;
  Convergence convergence;
};

// One marginal evaluation from the standard starting latents; the inner
// solution rides along for callers that want the conditional mode.
inline MarginalEval laplace_marginal_nll(const Eigen::VectorXd& theta, const Dataset& data,
                                         const ModelSpec& spec, const InnerOptions& inner = {},
                                         bool with_gradient = false) {
  const Model m = build_model(spec, data);
  return eval_marginal(m.terms, theta, initial_latents(m), with_gradient, inner);
}

inline FitResult fit(const Model& m, const FitOptions& options = {}) {
  const double inf = std::numeric_limits<double>::infinity();
  const Eigen::VectorXd u_init = initial_latents(m);
  const Eigen::VectorXd t0 = initial_theta(m, u_init);

  Eigen::VectorXd u_warm = u_init;
  long long inner_total = 0;
  auto objective = [&](const Eigen::VectorXd& th, Eigen::VectorXd& grad) -> double {
    try {
      MarginalEval r = eval_marginal(m.terms, th, u_warm, true, options.inner);
      inner_total += r.inner.iterations;
      u_warm = std::move(r.inner.u_hat);
      grad = std::move(r.gradient);
      return r.value;
    } catch (const std::exception&) {
      grad = Eigen::VectorXd::Zero(m.k());
      return inf;
    }
  };

  // First from the data-driven start, then from perturbed copies of it
  // until one run converges. A converged run wins outright; otherwise the
  // lowest finite value is kept and flagged.
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> z;
  auto better = [](const LbfgsResult& a, const LbfgsResult& b) {
    if (a.converged != b.converged) return a.converged;
    return a.value < b.value;
  };
  LbfgsResult best;
  best.value = inf;
  bool have_best = false;
  int used = 0;
  for (int attempt = 0; attempt <= options.restarts; ++attempt) {
    Eigen::VectorXd start = t0;
    if (attempt > 0)
      for (int j = 0; j < start.size(); ++j) start[j] += options.restart_sd * z(rng);
    u_warm = u_init;
    used = attempt;
    LbfgsResult r;
    try {
      r = lbfgs_minimize(objective, std::move(start), options.outer);
    } catch (const std::exception&) {
      continue;  // infeasible start; the next perturbation may not be
    }
    if (!have_best || better(r, best)) {
      best = std::move(r);
      have_best = true;
    }
    if (best.converged) break;
  }

  FitResult out;
  out.names = m.theta.names;
  out.k = m.k();
  out.convergence.restarts_used = used;
  if (!have_best || !std::isfinite(best.value)) {
    out.theta_hat = t0;
    out.latents_hat = unpack_latents(m, u_init);
    out.convergence.inner_iterations = inner_total;
    out.convergence.status = "no marginal evaluation succeeded from any starting point";
    return out;
  }

  out.theta_hat = best.x;
  out.nll = best.value;
  out.aic = 2.0 * out.k + 2.0 * out.nll;
  out.convergence.grad_norm = best.gradient.norm();
  out.convergence.outer_iterations = best.iterations;
  out.convergence.converged = best.converged;
  out.convergence.status = best.converged ? "converged" : "not converged: " + best.message;

  // Conditional latent mode and its pointwise sds at the final parameters.
  try {
    InnerResult fin = inner_optimize(m.terms, out.theta_hat, u_warm, options.inner);
    inner_total += fin.iterations;
    u_warm = fin.u_hat;
    const BlockTridiag S = fin.chol.selected_inverse();
    out.latents_hat = unpack_latents(m, fin.u_hat);
    const int FD = m.layout.f_dim, A = m.layout.n_ages, Y = m.layout.n_years;
    out.latent_sds.logF.resize(FD, Y);
    out.latent_sds.logN.resize(A, Y);
    for (int y = 0; y < Y; ++y) {
      const auto& D = S.diag[static_cast<std::size_t>(y)];
      for (int i = 0; i < FD; ++i) out.latent_sds.logF(i, y) = std::sqrt(D(i, i));
      for (int a = 0; a < A; ++a)
        out.latent_sds.logN(a, y) = std::sqrt(D(FD + a, FD + a));
    }
  } catch (const std::exception& e) {
    out.latents_hat = unpack_latents(m, u_warm);
    out.convergence.status += "; latent smoothing failed: ";
    out.convergence.status += e.what();
  }

  // Observed-information covariance by differencing the exact gradient.
  // Anything short of a clean positive definite Hessian leaves the
  // covariance marked unavailable instead of half-filled.
  try {
    const double h = options.fd_step;
    const int k = out.k;
    Eigen::MatrixXd H(k, k);
    Eigen::VectorXd th = out.theta_hat;
    for (int j = 0; j < k; ++j) {
      th[j] = out.theta_hat[j] + h;
      MarginalEval rp = eval_marginal(m.terms, th, u_warm, true, options.inner);
      inner_total += rp.inner.iterations;
      th[j] = out.theta_hat[j] - h;
      MarginalEval rm = eval_marginal(m.terms, th, rp.inner.u_hat, true, options.inner);
      inner_total += rm.inner.iterations;
      u_warm = std::move(rm.inner.u_hat);
      th[j] = out.theta_hat[j];
      H.col(j) = (rp.gradient - rm.gradient) / (2.0 * h);
    }
    H = 0.5 * (H + H.transpose()).eval();
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
    const Eigen::VectorXd ev = es.eigenvalues();
    if (ev.minCoeff() > 1e-12 * std::max(1.0, std::abs(ev.maxCoeff()))) {
      out.theta_cov = es.eigenvectors() * ev.cwiseInverse().asDiagonal() *
                      es.eigenvectors().transpose();
      out.cov_ok = out.theta_cov.allFinite();
      if (!out.cov_ok) out.theta_cov.resize(0, 0);
    }
  } catch (const std::exception&) {
    out.theta_cov.resize(0, 0);
    out.cov_ok = false;
  }

  out.convergence.inner_iterations = inner_total;
  return out;
}

inline FitResult fit(const ModelSpec& spec, const Dataset& data, const FitOptions& options = {}) {
  return fit(build_model(spec, data), options);
}

using ThetaFunctional = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

// Delta-method standard errors of a functional of theta, by central
// differences of the functional against the fitted covariance.
inline Eigen::VectorXd delta_se(const FitResult& fit, const ThetaFunctional& functional,
                                double h = 1e-5) {
  if (!fit.cov_ok) throw std::runtime_error("delta_se: parameter covariance is unavailable");
  const auto k = fit.theta_hat.size();
  const Eigen::VectorXd phi0 = functional(fit.theta_hat);
  Eigen::MatrixXd J(phi0.size(), k);
  Eigen::VectorXd th = fit.theta_hat;
  for (int j = 0; j < k; ++j) {
    th[j] = fit.theta_hat[j] + h;
    const Eigen::VectorXd up = functional(th);
    th[j] = fit.theta_hat[j] - h;
    J.col(j) = (up - functional(th)) / (2.0 * h);
    th[j] = fit.theta_hat[j];
  }
  return (J * fit.theta_cov * J.transpose()).diagonal().cwiseMax(0.0).cwiseSqrt();
}

// Coefficient of variation of a univariate observation family, through its
// own moments at unit prediction, so each family's published formula falls
// out: sqrt(e^{sigma^2} - 1) for the log-normal, shape^{-1/2} for the
// gamma, sigma itself for the proportional normal.
inline double family_cv(Family f, double sigma, double tau = 0.0) {
  const MomentsUv mo = moments_uv(f, 1.0, sigma, tau);
  if (!mo.has_mean || !mo.has_var)
    throw std::domain_error("family_cv: the family has no finite mean and variance here");
  return std::sqrt(mo.var) / mo.mean;
}

// One CV per observation scale parameter, in the parameter layout's order.
inline ThetaFunctional make_cv_functional(const Model& m) {
  if (!is_univariate(m.spec.family))
    throw std::invalid_argument("observation CVs are defined for the univariate families");
  const Family fam = m.spec.family;
  std::vector<std::pair<int, int>> entries;  // (scale index, shape index or -1)
  for (const auto& [key, idx] : m.theta.obs.key_map) {
    if (static_cast<Role>(std::get<2>(key)) != Role::Scale) continue;
    const int fleet = std::get<0>(key), age = std::get<1>(key);
    const int shape = m.theta.obs.has(fleet, age, Role::Shape)
                          ? m.theta.obs.index(fleet, age, Role::Shape)
                          : -1;
    entries.emplace_back(idx, shape);
  }
  return [fam, entries](const Eigen::VectorXd& th) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(entries.size()));
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const double sigma = link_inverse(role_link(Role::Scale, fam), th[entries[i].first]);
      const double tau = entries[i].second >= 0
                             ? link_inverse(role_link(Role::Shape, fam), th[entries[i].second])
                             : 0.0;
      out[static_cast<Eigen::Index>(i)] = family_cv(fam, sigma, tau);
    }
    return out;
  };
}

namespace detail {

template <class Reduce>
ThetaFunctional profile_functional(const Model& m, Eigen::VectorXd u_start, InnerOptions inner,
                                   Reduce reduce) {
  return [mp = &m, u = std::move(u_start), inner, reduce](const Eigen::VectorXd& th) mutable {
    const InnerResult r = inner_optimize(mp->terms, th, u, inner);
    u = r.u_hat;
    return reduce(*mp, unpack_latents(*mp, r.u_hat));
  };
}

}  // namespace detail

// Mean F over the configured age range, one value per year. The latent
// path re-solves to its conditional mode at each theta, so delta-method
// ses carry the latents' response to the parameters.
inline ThetaFunctional make_fbar_functional(const Model& m, Eigen::VectorXd u_start,
                                            InnerOptions inner = {}) {
  return detail::profile_functional(
      m, std::move(u_start), inner, [](const Model& mm, const LatentStates& s) {
        const int A = mm.layout.n_ages, Y = mm.layout.n_years;
        Eigen::VectorXd out(Y), by_age(A);
        for (int y = 0; y < Y; ++y) {
          for (int a = 0; a < A; ++a) by_age[a] = std::exp(s.logF(mm.layout.f_state(a), y));
          out[y] = fbar(by_age, mm.fbar_lo, mm.fbar_hi);
        }
        return out;
      });
}

// Log spawning-stock biomass per year from maturities and stock weights.
inline ThetaFunctional make_log_ssb_functional(const Model& m, Eigen::VectorXd u_start,
                                               InnerOptions inner = {}) {
  return detail::profile_functional(
      m, std::move(u_start), inner, [](const Model& mm, const LatentStates& s) {
        const int A = mm.layout.n_ages, Y = mm.layout.n_years;
        Eigen::VectorXd out(Y), mat(A), w(A), N(A);
        for (int y = 0; y < Y; ++y) {
          const int year = mm.layout.first_year + y;
          for (int a = 0; a < A; ++a) {
            const int age = mm.layout.first_age + a;
            mat[a] = mm.biology.maturity.at(age, year);
            w[a] = mm.biology.stock_weights.at(age, year);
            N[a] = std::exp(s.logN(a, y));
          }
          out[y] = std::log(ssb(mat, w, N));
        }
        return out;
      });
}

struct SmoothedStates {
  LatentStates states;
  LatentStates sds;
};

inline SmoothedStates smooth_states(const FitResult& fit) {
  if (fit.latent_sds.logN.size() == 0)
    throw std::runtime_error("smooth_states: no smoothed states on this fit (" +
                             fit.convergence.status + ")");
  return {fit.latents_hat, fit.latent_sds};
}

}  // namespace stocklik
