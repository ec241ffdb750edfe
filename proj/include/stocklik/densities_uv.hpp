#pragma once

// Univariate numbers-at-age log-densities, their closed-form moments, and
// samplers. The prediction mu enters each family the way its linking
// demands: as the median (log-normal), the mean (gamma, normal, truncated
// normal) or the log-location (generalized gamma, log-t).
//
// All log-densities are templated so they evaluate on plain doubles and on
// the forward-AD duals; x is always data (never differentiated).

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

#include "stocklik/families.hpp"
#include "stocklik/fwdad.hpp"

namespace stocklik {

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;
inline constexpr double kInvSqrt2 = 0.70710678118654752440;

// Below this |tau| the generalized gamma switches to its log-normal limit
// branch; the Prentice form is numerically unstable through tau = 0.
inline constexpr double kGenGammaTauEps = 1e-4;

namespace detail {
[[noreturn]] inline void domain_fail(Family f, double x, const char* need) {
  throw std::domain_error(std::string(family_code(f)) + ": observation " + std::to_string(x) +
                          " outside the support (" + need + ")");
}
}  // namespace detail

// Log-normal; mu is the median, sigma the log-scale sd.
template <class T>
T logpdf_lognormal(double x, const T& mu, const T& sigma) {
  using std::log;
  if (!(x > 0)) detail::domain_fail(Family::M1, x, "x > 0");
  T z = (std::log(x) - log(mu)) / sigma;
  return -kHalfLog2Pi - log(sigma) - std::log(x) - 0.5 * z * z;
}

// Gamma with mean mu and shape sigma, so the CV is sigma^{-1/2}.
template <class T>
T logpdf_gamma_cv(double x, const T& mu, const T& sigma) {
  using std::lgamma;
  using std::log;
  if (x < 0) detail::domain_fail(Family::M2, x, "x >= 0");
  if (x == 0) {
    // Finite density at zero needs shape <= 1, positive needs shape = 1;
    // zeros in data are admitted only when the fitted shape permits them.
    double sv = ad::value_of(sigma);
    if (sv < 1) detail::domain_fail(Family::M2, x, "x = 0 needs shape >= 1");
    if (sv > 1) return ad::make_constant<T>(-std::numeric_limits<double>::infinity());
    return -log(mu);
  }
  return sigma * log(sigma) - sigma * log(mu) - lgamma(sigma) + (sigma - 1.0) * std::log(x) -
         sigma * (x / mu);
}

// Prentice's generalized gamma: w = (log x - log mu)/sigma with shape tau.
// tau -> 0 recovers the log-normal, tau = sigma recovers the gamma with
// shape sigma^{-2}.
template <class T>
T logpdf_gengamma(double x, const T& mu, const T& sigma, const T& tau) {
  using std::exp;
  using std::lgamma;
  using std::log;
  if (!(x > 0)) detail::domain_fail(Family::M3, x, "x > 0");
  double tv = ad::value_of(tau);
  if (std::abs(tv) < kGenGammaTauEps) return logpdf_lognormal(x, mu, sigma);
  T abs_tau = tv > 0 ? tau : -tau;
  T inv_tau2 = 1.0 / (tau * tau);
  T tw = tau * ((std::log(x) - log(mu)) / sigma);
  return log(abs_tau) + inv_tau2 * log(inv_tau2) + inv_tau2 * (tw - exp(tw)) - log(sigma) -
         std::log(x) - lgamma(inv_tau2);
}

// Normal with mean mu and sd sigma*mu (sigma is a CV).
template <class T>
T logpdf_normal_cv(double x, const T& mu, const T& sigma) {
  using std::log;
  T sd = sigma * mu;
  T z = (x - mu) / sd;
  return -kHalfLog2Pi - log(sd) - 0.5 * z * z;
}

// Normal truncated to x >= 0; mu and sigma describe the untruncated law,
// so the normalizer is Phi(1/sigma), evaluated via erfc.
template <class T>
T logpdf_truncnormal_cv(double x, const T& mu, const T& sigma) {
  using std::erfc;
  using std::log;
  if (x < 0) detail::domain_fail(Family::M5, x, "x >= 0");
  T phi = 1.0 - 0.5 * erfc((1.0 / sigma) * kInvSqrt2);
  return logpdf_normal_cv(x, mu, sigma) - log(phi);
}

// Student's t on log scale: (log x - log mu)/sigma ~ t with tau df.
template <class T>
T logpdf_logt(double x, const T& mu, const T& sigma, const T& tau) {
  using std::lgamma;
  using std::log;
  if (!(x > 0)) detail::domain_fail(Family::M6, x, "x > 0");
  T y = (std::log(x) - log(mu)) / sigma;
  T half_nu_plus = 0.5 * (tau + 1.0);
  return lgamma(half_nu_plus) - lgamma(0.5 * tau) - 0.5 * log(tau) - 0.5 * std::log(M_PI) -
         half_nu_plus * log(1.0 + y * y / tau) - log(sigma) - std::log(x);
}

template <class T>
T logpdf_uv(Family f, double x, const T& mu, const T& sigma, const T& tau) {
  switch (f) {
    case Family::M1: return logpdf_lognormal(x, mu, sigma);
    case Family::M2: return logpdf_gamma_cv(x, mu, sigma);
    case Family::M3: return logpdf_gengamma(x, mu, sigma, tau);
    case Family::M4: return logpdf_normal_cv(x, mu, sigma);
    case Family::M5: return logpdf_truncnormal_cv(x, mu, sigma);
    case Family::M6: return logpdf_logt(x, mu, sigma, tau);
    default: throw std::invalid_argument("logpdf_uv: not a univariate family");
  }
}

template <class T>
T logpdf_uv(Family f, double x, const T& mu, const T& sigma) {
  return logpdf_uv(f, x, mu, sigma, ad::make_constant<T>(0.0));
}

struct MomentsUv {
  bool has_mean = false;
  bool has_var = false;
  double mean = std::numeric_limits<double>::quiet_NaN();
  double var = std::numeric_limits<double>::quiet_NaN();
};

inline MomentsUv moments_uv(Family f, double mu, double sigma, double tau = 0.0) {
  MomentsUv m;
  switch (f) {
    case Family::M1: {
      double s2 = sigma * sigma;
      m = {true, true, mu * std::exp(0.5 * s2), (std::exp(s2) - 1.0) * mu * mu * std::exp(s2)};
      break;
    }
    case Family::M2:
      m = {true, true, mu, mu * mu / sigma};
      break;
    case Family::M3: {
      if (std::abs(tau) < kGenGammaTauEps) return moments_uv(Family::M1, mu, sigma);
      // From X = mu * exp(sigma*W), exp(s W) has finite expectation iff
      // 1 + s*tau > 0, with E exp(sW) = (tau^2)^{s/tau} G(tau^-2 + s/tau)/G(tau^-2).
      double it2 = 1.0 / (tau * tau);
      auto raw = [&](double s) {
        return std::exp((2.0 * s / tau) * std::log(std::abs(tau)) + std::lgamma(it2 + s / tau) -
                        std::lgamma(it2));
      };
      if (1.0 + sigma * tau > 0) {
        m.has_mean = true;
        m.mean = mu * raw(sigma);
      }
      if (1.0 + 2.0 * sigma * tau > 0) {
        m.has_var = true;
        double ex2 = mu * mu * raw(2.0 * sigma);
        m.var = ex2 - m.mean * m.mean;  // requires the mean; implied by the stronger condition
      }
      break;
    }
    case Family::M4:
      m = {true, true, mu, sigma * sigma * mu * mu};
      break;
    case Family::M5: {
      // Mills-ratio forms for truncation of N(mu, (sigma*mu)^2) at zero.
      double z = 1.0 / sigma;
      double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
      double cdf = 1.0 - 0.5 * std::erfc(z * kInvSqrt2);  // Phi(1/sigma)
      double lambda = pdf / cdf;
      m.has_mean = m.has_var = true;
      m.mean = mu * (1.0 + sigma * lambda);
      m.var = mu * mu * sigma * sigma * (1.0 - lambda / sigma - lambda * lambda);
      break;
    }
    case Family::M6:
      break;  // no mean or variance by convention here
    default: throw std::invalid_argument("moments_uv: not a univariate family");
  }
  return m;
}

inline double sample_uv(Family f, double mu, double sigma, double tau, std::mt19937_64& rng) {
  switch (f) {
    case Family::M1: {
      std::normal_distribution<double> nd(std::log(mu), sigma);
      return std::exp(nd(rng));
    }
    case Family::M2: {
      std::gamma_distribution<double> gd(sigma, mu / sigma);
      return gd(rng);
    }
    case Family::M3: {
      if (std::abs(tau) < kGenGammaTauEps) return sample_uv(Family::M1, mu, sigma, 0.0, rng);
      std::gamma_distribution<double> gd(1.0 / (tau * tau), 1.0);
      double w = std::log(tau * tau * gd(rng)) / tau;
      return mu * std::exp(sigma * w);
    }
    case Family::M4: {
      std::normal_distribution<double> nd(mu, sigma * mu);
      return nd(rng);
    }
    case Family::M5: {
      std::normal_distribution<double> nd(mu, sigma * mu);
      for (int k = 0; k < 10000; ++k) {
        double x = nd(rng);
        if (x >= 0) return x;
      }
      throw std::runtime_error("M5 sampler: rejection cap hit (sigma too large?)");
    }
    case Family::M6: {
      std::student_t_distribution<double> td(tau);
      return mu * std::exp(sigma * td(rng));
    }
    default: throw std::invalid_argument("sample_uv: not a univariate family");
  }
}

}  // namespace stocklik
