#pragma once

// Multivariate observation densities: the AR(1)-correlated log-normal for
// catch vectors, the additive and multiplicative logistic normals and the
// Dirichlet for proportions, plus the logratio transforms they live on.
//
// Two evaluation paths coexist on purpose. The Eigen functions take a full
// scale matrix and factorize it (all public matrix work routes through
// Cholesky); they serve as reference implementations and oracles. The
// templated *_ar1 functions exploit that the model only ever uses AR(1)
// scale matrices, whose inverse is tridiagonal: written in innovations
// form they need no linear algebra at all and evaluate on the forward-AD
// duals. Tests pin the two paths against each other.

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "stocklik/densities_uv.hpp"
#include "stocklik/families.hpp"
#include "stocklik/fwdad.hpp"

namespace stocklik {

// Per-age sds plus one correlation; induces Sigma_ij = rho^|i-j| sd_i sd_j.
struct Ar1Scale {
  Eigen::VectorXd sds;
  double rho = 0.0;
};

namespace detail {

inline void check_ar1(const Eigen::VectorXd& sds, double rho) {
  if (sds.size() == 0) throw std::invalid_argument("Ar1Scale: needs at least one sd");
  if (!(std::abs(rho) < 1)) throw std::invalid_argument("Ar1Scale: |rho| must be < 1");
  for (int i = 0; i < sds.size(); ++i)
    if (!(sds[i] > 0)) throw std::invalid_argument("Ar1Scale: sds must be positive");
}

inline void check_simplex(std::string_view who, const Eigen::VectorXd& p) {
  for (int i = 0; i < p.size(); ++i)
    if (!(p[i] > 0))
      throw std::domain_error(std::string(who) + ": component " + std::to_string(p[i]) +
                              " outside the open simplex");
  if (std::abs(p.sum() - 1.0) > 1e-8)
    throw std::domain_error(std::string(who) + ": proportions must sum to 1, got " +
                            std::to_string(p.sum()));
}

inline void check_interior(Family f, const Eigen::VectorXd& p) { check_simplex(family_code(f), p); }

// Which logratio (or none) a proportions family uses; the weight-based
// families share the cores of their number-based counterparts.
enum class CompositionKind { Additive, Multiplicative, Dirichlet };

inline CompositionKind composition_kind(Family f) {
  switch (f) {
    case Family::M8:
    case Family::M11:
      return CompositionKind::Additive;
    case Family::M9:
    case Family::M12:
      return CompositionKind::Multiplicative;
    case Family::M10:
    case Family::M13:
      return CompositionKind::Dirichlet;
    default:
      throw std::invalid_argument(std::string(family_code(f)) + " is not a proportions family");
  }
}

}  // namespace detail

// Dense AR(1) scale matrix, Sigma_ij = rho^|i-j| sd_i sd_j.
inline Eigen::MatrixXd ar1_covariance(const Ar1Scale& scale) {
  detail::check_ar1(scale.sds, scale.rho);
  const int n = static_cast<int>(scale.sds.size());
  Eigen::MatrixXd sigma(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) {
      double v = std::pow(scale.rho, i - j) * scale.sds[i] * scale.sds[j];
      sigma(i, j) = v;
      sigma(j, i) = v;
    }
  return sigma;
}

// Multivariate log-normal with marginal medians mu and log-scale covariance
// sigma. Reference path: factorizes sigma every call.
inline double logpdf_mvlognormal(const Eigen::VectorXd& x, const Eigen::VectorXd& mu,
                                 const Eigen::MatrixXd& sigma) {
  const int n = static_cast<int>(x.size());
  if (mu.size() != n || sigma.rows() != n || sigma.cols() != n)
    throw std::invalid_argument("logpdf_mvlognormal: dimension mismatch");
  for (int i = 0; i < n; ++i) {
    if (!(x[i] > 0)) detail::domain_fail(Family::M7, x[i], "x > 0");
    if (!(mu[i] > 0)) throw std::domain_error("M7: medians must be positive");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success)
    throw std::domain_error("M7: scale matrix is not positive definite");
  Eigen::VectorXd z = x.array().log() - mu.array().log();
  Eigen::VectorXd w = llt.matrixL().solve(z);
  double log_det = 0.0;
  for (int i = 0; i < n; ++i) log_det += 2.0 * std::log(llt.matrixL()(i, i));
  return -n * kHalfLog2Pi - 0.5 * log_det - 0.5 * w.squaredNorm() - x.array().log().sum();
}

// Additive logratio: alpha(p)_k = log(p_k / p_A), k = 1..A-1.
inline Eigen::VectorXd logratio_additive(const Eigen::VectorXd& p) {
  detail::check_simplex("logratio", p);
  const int a = static_cast<int>(p.size());
  Eigen::VectorXd out(a - 1);
  for (int k = 0; k < a - 1; ++k) out[k] = std::log(p[k]) - std::log(p[a - 1]);
  return out;
}

// Multiplicative logratio: m(p)_k = log(p_k / (p_{k+1} + ... + p_A)).
// The denominator is the tail sum, kept as such for accuracy near 1.
inline Eigen::VectorXd logratio_multiplicative(const Eigen::VectorXd& p) {
  detail::check_simplex("logratio", p);
  const int a = static_cast<int>(p.size());
  Eigen::VectorXd out(a - 1);
  double tail = p[a - 1];
  for (int k = a - 2; k >= 0; --k) {
    out[k] = std::log(p[k]) - std::log(tail);
    tail += p[k];
  }
  return out;
}

// Inverse additive logratio: softmax of (a_1, ..., a_{A-1}, 0), shifted for
// overflow safety.
inline Eigen::VectorXd logratio_additive_inverse(const Eigen::VectorXd& a) {
  const int n = static_cast<int>(a.size());
  double shift = 0.0;
  for (int k = 0; k < n; ++k) shift = std::max(shift, a[k]);
  Eigen::VectorXd p(n + 1);
  double denom = std::exp(-shift);
  for (int k = 0; k < n; ++k) {
    p[k] = std::exp(a[k] - shift);
    denom += p[k];
  }
  for (int k = 0; k < n; ++k) p[k] /= denom;
  p[n] = std::exp(-shift) / denom;
  return p;
}

// Inverse multiplicative logratio: peel components off the remaining mass,
// p_k = r_{k-1} * logistic(m_k) with r_0 = 1.
inline Eigen::VectorXd logratio_multiplicative_inverse(const Eigen::VectorXd& m) {
  const int n = static_cast<int>(m.size());
  Eigen::VectorXd p(n + 1);
  double remaining = 1.0;
  for (int k = 0; k < n; ++k) {
    double s = m[k] > 0 ? 1.0 / (1.0 + std::exp(-m[k])) : std::exp(m[k]) / (1.0 + std::exp(m[k]));
    p[k] = remaining * s;
    remaining -= p[k];
  }
  p[n] = remaining;
  return p;
}

// Logistic-normal log-density for observed proportions p against predicted
// proportions pi, over the logratio coordinates the family prescribes.
// Carries the (p_1 ... p_A)^{-1} change-of-variables factor, so this is a
// proper density on the simplex.
inline double logpdf_composition(Family f, const Eigen::VectorXd& p, const Eigen::VectorXd& pi,
                                 const Eigen::MatrixXd& sigma) {
  detail::CompositionKind kind = detail::composition_kind(f);
  if (kind == detail::CompositionKind::Dirichlet)
    throw std::invalid_argument(std::string(family_code(f)) +
                                " takes a concentration, not a scale matrix");
  const int a = static_cast<int>(p.size());
  if (pi.size() != a || sigma.rows() != a - 1 || sigma.cols() != a - 1)
    throw std::invalid_argument("logpdf_composition: dimension mismatch");
  detail::check_interior(f, p);
  detail::check_interior(f, pi);
  if (a == 1) return 0.0;  // one age: the proportion is identically 1
  Eigen::VectorXd z = (kind == detail::CompositionKind::Additive)
                          ? Eigen::VectorXd(logratio_additive(p) - logratio_additive(pi))
                          : Eigen::VectorXd(logratio_multiplicative(p) -
                                            logratio_multiplicative(pi));
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success)
    throw std::domain_error(std::string(family_code(f)) + ": scale matrix is not positive definite");
  Eigen::VectorXd w = llt.matrixL().solve(z);
  double log_det = 0.0;
  for (int i = 0; i < a - 1; ++i) log_det += 2.0 * std::log(llt.matrixL()(i, i));
  return -(a - 1) * kHalfLog2Pi - 0.5 * log_det - 0.5 * w.squaredNorm() -
         p.array().log().sum();
}

// Dirichlet log-density with concentration vector conc * pi, so marginal
// means are pi_i and all gamma building blocks share one scale.
inline double logpdf_composition(Family f, const Eigen::VectorXd& p, const Eigen::VectorXd& pi,
                                 double concentration) {
  if (detail::composition_kind(f) != detail::CompositionKind::Dirichlet)
    throw std::invalid_argument(std::string(family_code(f)) +
                                " takes a scale matrix, not a concentration");
  if (pi.size() != p.size()) throw std::invalid_argument("logpdf_composition: dimension mismatch");
  if (!(concentration > 0))
    throw std::domain_error(std::string(family_code(f)) + ": concentration must be positive");
  detail::check_interior(f, p);
  detail::check_interior(f, pi);
  double lp = std::lgamma(concentration);
  for (int i = 0; i < p.size(); ++i) {
    double c = concentration * pi[i];
    lp += (c - 1.0) * std::log(p[i]) - std::lgamma(c);
  }
  return lp;
}

// ---------------------------------------------------------------------------
// AR(1) fast paths. For Sigma = D R D with R_ij = rho^|i-j|, the density in
// innovations form is
//   w_i = z_i / sd_i,
//   z' Sigma^{-1} z = w_1^2 + sum_{i>=2} (w_i - rho w_{i-1})^2 / (1 - rho^2),
//   log|Sigma|     = 2 sum log sd_i + (n-1) log(1 - rho^2),
// which needs no factorization and differentiates cleanly.
// ---------------------------------------------------------------------------

// Centered multivariate normal log-density of residuals z under an AR(1)
// scale. All arguments may be AD duals.
template <class T>
T logpdf_gauss_ar1(const std::vector<T>& z, const std::vector<T>& sds, const T& rho) {
  using std::log;
  const int n = static_cast<int>(z.size());
  if (n == 0 || sds.size() != z.size())
    throw std::invalid_argument("logpdf_gauss_ar1: dimension mismatch");
  if (!(std::abs(ad::value_of(rho)) < 1))
    throw std::domain_error("logpdf_gauss_ar1: |rho| must be < 1");
  T w_prev = z[0] / sds[0];
  T quad = w_prev * w_prev;
  T log_det = 2.0 * log(sds[0]);
  if (n > 1) {
    T one_minus_rho2 = 1.0 - rho * rho;
    for (int i = 1; i < n; ++i) {
      T w = z[i] / sds[i];
      T innov = w - rho * w_prev;
      quad += innov * innov / one_minus_rho2;
      log_det += 2.0 * log(sds[i]) + log(one_minus_rho2);
      w_prev = w;
    }
  }
  return -n * kHalfLog2Pi - 0.5 * log_det - 0.5 * quad;
}

// AR(1)-scale multivariate log-normal; log_mu are the log medians (the
// process model produces predictions on log scale).
template <class T>
T logpdf_mvlognormal_ar1(const std::vector<double>& x, const std::vector<T>& log_mu,
                         const std::vector<T>& sds, const T& rho) {
  if (log_mu.size() != x.size()) throw std::invalid_argument("logpdf_mvlognormal_ar1: dimension mismatch");
  std::vector<T> z;
  z.reserve(x.size());
  double log_x_sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0)) detail::domain_fail(Family::M7, x[i], "x > 0");
    double lx = std::log(x[i]);
    log_x_sum += lx;
    z.push_back(lx - log_mu[i]);
  }
  return logpdf_gauss_ar1(z, sds, rho) - log_x_sum;
}

// Logistic-normal log-density with an AR(1) scale over the logratio
// coordinates. pred is the predicted catch vector, which only enters
// through ratios, so it need not be normalized; p must be.
template <class T>
T logpdf_composition_ar1(Family f, const std::vector<double>& p, const std::vector<T>& pred,
                         const std::vector<T>& sds, const T& rho) {
  using std::log;
  detail::CompositionKind kind = detail::composition_kind(f);
  if (kind == detail::CompositionKind::Dirichlet)
    throw std::invalid_argument(std::string(family_code(f)) +
                                " takes a concentration, not AR(1) scales");
  const int a = static_cast<int>(p.size());
  if (pred.size() != p.size() || sds.size() + 1 != p.size())
    throw std::invalid_argument("logpdf_composition_ar1: dimension mismatch");
  double p_sum = 0.0, log_p_sum = 0.0;
  for (double pi_obs : p) {
    if (!(pi_obs > 0)) detail::domain_fail(f, pi_obs, "all components > 0");
    p_sum += pi_obs;
    log_p_sum += std::log(pi_obs);
  }
  if (std::abs(p_sum - 1.0) > 1e-8)
    throw std::domain_error(std::string(family_code(f)) + ": proportions must sum to 1");
  for (const T& c : pred)
    if (!(ad::value_of(c) > 0))
      throw std::domain_error(std::string(family_code(f)) + ": predictions must be positive");
  if (a == 1) return ad::make_constant<T>(0.0);
  std::vector<T> z;
  z.reserve(a - 1);
  if (kind == detail::CompositionKind::Additive) {
    T log_ref = log(pred[a - 1]);
    for (int k = 0; k < a - 1; ++k)
      z.push_back((std::log(p[k]) - std::log(p[a - 1])) - (log(pred[k]) - log_ref));
  } else {
    // Tail sums of both p and pred, accumulated from the oldest age down.
    double tail_p = p[a - 1];
    T tail_pred = pred[a - 1];
    z.resize(a - 1, ad::make_constant<T>(0.0));
    for (int k = a - 2; k >= 0; --k) {
      z[k] = (std::log(p[k]) - std::log(tail_p)) - (log(pred[k]) - log(tail_pred));
      tail_p += p[k];
      tail_pred += pred[k];
    }
  }
  return logpdf_gauss_ar1(z, sds, rho) - log_p_sum;
}

// Dirichlet log-density where the predicted catch vector sets the mean
// after normalization; conc is the per-fleet concentration.
template <class T>
T logpdf_dirichlet(const std::vector<double>& p, const std::vector<T>& pred, const T& conc) {
  using std::lgamma;
  using std::log;
  if (pred.size() != p.size()) throw std::invalid_argument("logpdf_dirichlet: dimension mismatch");
  if (!(ad::value_of(conc) > 0)) throw std::domain_error("M10: concentration must be positive");
  double p_sum = 0.0;
  for (double pi_obs : p) {
    if (!(pi_obs > 0)) detail::domain_fail(Family::M10, pi_obs, "all components > 0");
    p_sum += pi_obs;
  }
  if (std::abs(p_sum - 1.0) > 1e-8) throw std::domain_error("M10: proportions must sum to 1");
  T pred_sum = pred[0];
  for (std::size_t i = 1; i < pred.size(); ++i) pred_sum += pred[i];
  T lp = lgamma(conc);
  for (std::size_t i = 0; i < p.size(); ++i) {
    T c = conc * (pred[i] / pred_sum);
    lp += (c - 1.0) * std::log(p[i]) - lgamma(c);
  }
  return lp;
}

// ---------------------------------------------------------------------------
// Samplers (plain double; used by the simulator and as test oracles).
// ---------------------------------------------------------------------------

namespace detail {
inline Eigen::VectorXd correlated_normals(const Eigen::MatrixXd& sigma, std::mt19937_64& rng) {
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success)
    throw std::domain_error("sample_mv: scale matrix is not positive definite");
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd eps(sigma.rows());
  for (int i = 0; i < eps.size(); ++i) eps[i] = gauss(rng);
  return llt.matrixL() * eps;
}
}  // namespace detail

// Draw one observation vector. For M7, mu_or_pi holds the medians and sigma
// is A x A; for M8/M9, mu_or_pi holds the predicted proportions and sigma
// is (A-1) x (A-1) over the logratio coordinates.
inline Eigen::VectorXd sample_mv(Family f, const Eigen::VectorXd& mu_or_pi,
                                 const Eigen::MatrixXd& sigma, std::mt19937_64& rng) {
  if (f == Family::M7) {
    if (sigma.rows() != mu_or_pi.size())
      throw std::invalid_argument("sample_mv: dimension mismatch");
    Eigen::VectorXd eps = detail::correlated_normals(sigma, rng);
    return (mu_or_pi.array().log() + eps.array()).exp();
  }
  detail::CompositionKind kind = detail::composition_kind(f);
  if (kind == detail::CompositionKind::Dirichlet)
    throw std::invalid_argument("sample_mv: Dirichlet families take a concentration");
  if (sigma.rows() + 1 != mu_or_pi.size())
    throw std::invalid_argument("sample_mv: dimension mismatch");
  Eigen::VectorXd eps = detail::correlated_normals(sigma, rng);
  if (kind == detail::CompositionKind::Additive)
    return logratio_additive_inverse(logratio_additive(mu_or_pi) + eps);
  return logratio_multiplicative_inverse(logratio_multiplicative(mu_or_pi) + eps);
}

// Dirichlet draw via normalized gamma variables with common scale.
inline Eigen::VectorXd sample_mv(Family f, const Eigen::VectorXd& pi, double concentration,
                                 std::mt19937_64& rng) {
  if (detail::composition_kind(f) != detail::CompositionKind::Dirichlet)
    throw std::invalid_argument("sample_mv: logistic-normal families take a scale matrix");
  if (!(concentration > 0)) throw std::domain_error("sample_mv: concentration must be positive");
  Eigen::VectorXd g(pi.size());
  for (int i = 0; i < pi.size(); ++i) {
    std::gamma_distribution<double> gamma(concentration * pi[i], 1.0);
    g[i] = gamma(rng);
  }
  return g / g.sum();
}

}  // namespace stocklik
