#pragma once

// Latent population dynamics: fishing-mortality random walk, survival with
// a plus group, recruitment, and the prediction formulas the observation
// likelihoods are built on. Everything on the hot path is templated so the
// estimator can push dual numbers through it.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "stocklik/dataset.hpp"
#include "stocklik/densities_mv.hpp"
#include "stocklik/densities_uv.hpp"
#include "stocklik/fwdad.hpp"

namespace stocklik {

enum class Recruitment { RandomWalk, BevertonHolt };

// Year-1 states get a wide fixed normal so the marginal likelihood is
// proper; with decades of data its pull is negligible.
inline constexpr double kDiffuseSd = 10.0;

// Ages and years are indexed from zero here; first_age/first_year anchor
// lookups into the biology tables. The oldest ages may share one F state:
// age index a maps to state min(a, f_dim-1).
struct ProcessLayout {
  int first_age = 0;
  int first_year = 0;
  int n_ages = 0;
  int n_years = 0;
  int f_dim = 0;

  int f_state(int age_idx) const { return std::min(age_idx, f_dim - 1); }

  void validate() const {
    if (n_ages < 1 || n_years < 2) throw std::invalid_argument("layout needs >= 1 age, >= 2 years");
    if (f_dim < 1 || f_dim > n_ages)
      throw std::invalid_argument("f_dim must lie in 1..n_ages");
  }
};

// 0 requests one state per age; otherwise clamp to the age count.
inline int resolve_f_dim(int a_star, int n_ages) {
  if (a_star <= 0 || a_star > n_ages) return n_ages;
  return a_star;
}

struct LatentStates {
  Eigen::MatrixXd logF;  // f_dim x years
  Eigen::MatrixXd logN;  // ages x years
};

struct ProcessParams {
  Ar1Scale F_scale;  // sd per F state, correlation across states
  double survival_sd = 0.0;
  Recruitment recruitment = Recruitment::RandomWalk;
  double bh_a = 0.0;  // Beverton-Holt slope at the origin
  double bh_b = 0.0;
  double rec_sd = 0.0;

  void validate(int f_dim) const {
    if (static_cast<int>(F_scale.sds.size()) != f_dim)
      throw std::invalid_argument("F_scale has " + std::to_string(F_scale.sds.size()) +
                                  " sds for " + std::to_string(f_dim) + " F states");
    if (!(survival_sd > 0) || !(rec_sd > 0))
      throw std::invalid_argument("process sds must be positive");
    if (recruitment == Recruitment::BevertonHolt && (!(bh_a > 0) || !(bh_b > 0)))
      throw std::invalid_argument("Beverton-Holt needs a > 0 and b > 0");
  }
};

// Baranov catch: C = F/Z (1 - e^{-Z}) N with Z = F + M, continuously 0 at
// F = 0 (the F = M = 0 limit included).
template <class T>
T baranov_catch(const T& F, double M, const T& N) {
  using std::exp;
  if (ad::value_of(F) == 0.0) return ad::make_constant<T>(0.0);
  T Z = F + M;
  return F / Z * (1.0 - exp(-Z)) * N;
}

template <class T>
T survey_index(const T& q, const T& F, double M, const T& N, double timing) {
  using std::exp;
  return q * N * exp(-(F + M) * timing);
}

inline double ssb(const Eigen::VectorXd& maturity, const Eigen::VectorXd& weights,
                  const Eigen::VectorXd& N) {
  if (maturity.size() != N.size() || weights.size() != N.size())
    throw std::invalid_argument("ssb: dimension mismatch");
  return (maturity.array() * weights.array() * N.array()).sum();
}

template <class T>
T ssb(const std::vector<double>& maturity, const std::vector<double>& weights,
      const std::vector<T>& N) {
  if (maturity.size() != N.size() || weights.size() != N.size())
    throw std::invalid_argument("ssb: dimension mismatch");
  T out = ad::make_constant<T>(0.0);
  for (std::size_t a = 0; a < N.size(); ++a) out = out + maturity[a] * weights[a] * N[a];
  return out;
}

// Unweighted mean of F over an inclusive index range into the age axis.
inline double fbar(const Eigen::VectorXd& F_by_age, int lo, int hi) {
  if (lo < 0 || hi >= F_by_age.size() || hi < lo)
    throw std::invalid_argument("fbar: empty or out-of-range age span");
  return F_by_age.segment(lo, hi - lo + 1).mean();
}

template <class T>
T beverton_holt_mean(const T& a, const T& b, const T& spawners) {
  return a * spawners / (1.0 + b * spawners);
}

inline double recruitment_mean(Recruitment kind, const ProcessParams& p, double N1_prev,
                               double ssb_prev) {
  if (kind == Recruitment::RandomWalk) return N1_prev;
  return beverton_holt_mean(p.bh_a, p.bh_b, ssb_prev);
}

namespace detail {

// log(e^x + e^y) without overflow; branch keeps the exp argument <= 0.
template <class T>
T log_add(const T& x, const T& y) {
  using std::exp;
  using std::log;
  if (ad::value_of(x) >= ad::value_of(y)) return x + log(1.0 + exp(y - x));
  return y + log(1.0 + exp(x - y));
}

template <class T>
T centered_normal_nll(const T& resid, const T& sd) {
  using std::log;
  T w = resid / sd;
  return kHalfLog2Pi + log(sd) + 0.5 * w * w;
}

}  // namespace detail

// Negative log-density of the latent field: AR(1)-correlated logF
// increments, independent survival residuals (plus group folded in),
// recruitment residuals, and the diffuse year-1 contribution.
inline double process_nll(const ProcessLayout& layout, const LatentStates& s,
                          const ProcessParams& p, const BiologyInputs& biology) {
  layout.validate();
  p.validate(layout.f_dim);
  const int A = layout.n_ages;
  const int Y = layout.n_years;
  if (s.logF.rows() != layout.f_dim || s.logF.cols() != Y || s.logN.rows() != A ||
      s.logN.cols() != Y)
    throw std::invalid_argument("process_nll: state dimensions do not match the layout");

  auto M_at = [&](int a, int y) {
    return biology.mortality.at(layout.first_age + a, layout.first_year + y);
  };
  auto Z_at = [&](int a, int y) { return std::exp(s.logF(layout.f_state(a), y)) + M_at(a, y); };

  double nll = 0.0;

  // Diffuse year-1 states.
  for (int i = 0; i < layout.f_dim; ++i)
    nll += kHalfLog2Pi + std::log(kDiffuseSd) + 0.5 * std::pow(s.logF(i, 0) / kDiffuseSd, 2);
  for (int a = 0; a < A; ++a)
    nll += kHalfLog2Pi + std::log(kDiffuseSd) + 0.5 * std::pow(s.logN(a, 0) / kDiffuseSd, 2);

  // F random walk, correlated across states within a year step.
  for (int y = 1; y < Y; ++y) {
    std::vector<double> inc(static_cast<std::size_t>(layout.f_dim));
    for (int i = 0; i < layout.f_dim; ++i) inc[static_cast<std::size_t>(i)] = s.logF(i, y) - s.logF(i, y - 1);
    std::vector<double> sds(p.F_scale.sds.data(), p.F_scale.sds.data() + layout.f_dim);
    nll -= logpdf_gauss_ar1(inc, sds, p.F_scale.rho);
  }

  // Survival into ages 2..A, the last age accumulating its own survivors.
  for (int y = 1; y < Y; ++y) {
    for (int a = 1; a < A; ++a) {
      double pred;
      if (a == A - 1 && A >= 2) {
        double from_below = s.logN(a - 1, y - 1) - Z_at(a - 1, y - 1);
        double stayed = s.logN(a, y - 1) - Z_at(a, y - 1);
        pred = detail::log_add(from_below, stayed);
      } else {
        pred = s.logN(a - 1, y - 1) - Z_at(a - 1, y - 1);
      }
      nll += detail::centered_normal_nll(s.logN(a, y) - pred, p.survival_sd);
    }
  }

  // Recruitment.
  for (int y = 1; y < Y; ++y) {
    double mean_log;
    if (p.recruitment == Recruitment::RandomWalk) {
      mean_log = s.logN(0, y - 1);
    } else {
      Eigen::VectorXd N_prev(A), mat(A), w(A);
      for (int a = 0; a < A; ++a) {
        N_prev[a] = std::exp(s.logN(a, y - 1));
        mat[a] = biology.maturity.at(layout.first_age + a, layout.first_year + y - 1);
        w[a] = biology.stock_weights.at(layout.first_age + a, layout.first_year + y - 1);
      }
      mean_log = std::log(beverton_holt_mean(p.bh_a, p.bh_b, ssb(mat, w, N_prev)));
    }
    nll += detail::centered_normal_nll(s.logN(0, y) - mean_log, p.rec_sd);
  }

  return nll;
}

}  // namespace stocklik
