#pragma once

// Change of variables between numbers-at-age and (proportions, total).
// The proportions families are defined on the transformed scale, but model
// comparison needs every family's likelihood on the common numbers scale,
// so their log-likelihoods are corrected by log|det Dg| of the transform
//   g(x) = (x_1/S, ..., x_{A-1}/S, S),  S = sum x_i,
// or, when the total is taken in weight, with last component sum w_i x_i.
// The observed totals pair with a log-normal whose median is the predicted
// total.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/LU>

#include "stocklik/densities_mv.hpp"
#include "stocklik/densities_uv.hpp"
#include "stocklik/families.hpp"
#include "stocklik/fwdad.hpp"

namespace stocklik {

enum class TotalKind { Numbers, Weight };

inline TotalKind family_total_kind(Family f) {
  return total_is_weight(f) ? TotalKind::Weight : TotalKind::Numbers;
}

// A numbers-at-age vector re-expressed as proportions plus a total. The
// full proportion vector is stored (its last entry is determined by the
// others); weights are the known catch weight-at-age, kept so the split
// stays invertible.
struct SplitObs {
  Eigen::VectorXd proportions;
  double total = 0.0;
  TotalKind total_kind = TotalKind::Numbers;
  Eigen::VectorXd weights;
};

namespace detail {

inline void check_positive_vector(const char* who, const Eigen::VectorXd& x) {
  if (x.size() == 0) throw std::invalid_argument(std::string(who) + ": empty vector");
  for (int i = 0; i < x.size(); ++i)
    if (!(x[i] > 0))
      throw std::domain_error(std::string(who) + ": entry " + std::to_string(x[i]) +
                              " must be positive");
}

inline void check_weights(const char* who, TotalKind kind, const Eigen::VectorXd& weights,
                          int ages) {
  if (kind == TotalKind::Numbers) return;
  if (weights.size() != ages)
    throw std::invalid_argument(std::string(who) + ": need one weight per age");
  check_positive_vector(who, weights);
}

}  // namespace detail

inline SplitObs split_total(const Eigen::VectorXd& x, TotalKind kind,
                            const Eigen::VectorXd& weights = Eigen::VectorXd()) {
  detail::check_positive_vector("split_total", x);
  detail::check_weights("split_total", kind, weights, static_cast<int>(x.size()));
  SplitObs out;
  out.total_kind = kind;
  out.proportions = x / x.sum();
  out.total = (kind == TotalKind::Numbers) ? x.sum() : weights.dot(x);
  if (kind == TotalKind::Weight) out.weights = weights;
  return out;
}

// Inverse of split_total. For the weight kind the common factor s solves
// sum w_i p_i s = total.
inline Eigen::VectorXd combine(const SplitObs& y) {
  detail::check_positive_vector("combine", y.proportions);
  if (!(y.total > 0)) throw std::domain_error("combine: total must be positive");
  if (y.total_kind == TotalKind::Numbers) return y.proportions * y.total;
  detail::check_weights("combine", y.total_kind, y.weights,
                        static_cast<int>(y.proportions.size()));
  double s = y.total / y.weights.dot(y.proportions);
  return y.proportions * s;
}

// log|det Dg(x)| from the printed Jacobian entries: proportion rows have
// 1/S - x_i/S^2 on the diagonal and -x_i/S^2 off it; the last row is all
// ones (numbers) or the weights. Determinant by dense LU.
inline double log_abs_det_jacobian(const Eigen::VectorXd& x, TotalKind kind,
                                   const Eigen::VectorXd& weights = Eigen::VectorXd()) {
  detail::check_positive_vector("log_abs_det_jacobian", x);
  const int a = static_cast<int>(x.size());
  detail::check_weights("log_abs_det_jacobian", kind, weights, a);
  const double s = x.sum();
  Eigen::MatrixXd dg(a, a);
  for (int i = 0; i + 1 < a; ++i)
    for (int j = 0; j < a; ++j) dg(i, j) = (i == j ? 1.0 / s : 0.0) - x[i] / (s * s);
  for (int j = 0; j < a; ++j) dg(a - 1, j) = (kind == TotalKind::Numbers) ? 1.0 : weights[j];
  double det = Eigen::PartialPivLU<Eigen::MatrixXd>(dg).determinant();
  if (!(std::abs(det) > 0)) throw std::domain_error("log_abs_det_jacobian: singular transform");
  return std::log(std::abs(det));
}

// Parameters of a proportions family on the transformed scale: an AR(1)
// logratio scale (logistic-normal kinds) or a concentration (Dirichlet
// kinds), plus the log-normal sd of the total.
template <class T>
struct ProportionsParams {
  std::vector<T> logratio_sds;
  T rho{};
  T concentration{};
  T total_sd{};
};

// Log-likelihood of a numbers-at-age observation under a proportions
// family, reported on the numbers scale: composition density of the
// proportions, log-normal density of the total with the predicted total as
// median, and the change-of-variables correction. pred is the predicted
// catch vector; x is data.
template <class T>
T corrected_obs_loglik(Family f, const std::vector<double>& x, const std::vector<T>& pred,
                       const ProportionsParams<T>& params,
                       const std::vector<double>& weights = {}) {
  if (!is_proportions(f))
    throw std::invalid_argument(std::string(family_code(f)) + " is not a proportions family");
  if (pred.size() != x.size())
    throw std::invalid_argument("corrected_obs_loglik: dimension mismatch");
  const TotalKind kind = family_total_kind(f);
  const int a = static_cast<int>(x.size());
  Eigen::VectorXd xe = Eigen::Map<const Eigen::VectorXd>(x.data(), a);
  Eigen::VectorXd we;
  if (kind == TotalKind::Weight)
    we = Eigen::Map<const Eigen::VectorXd>(weights.data(), static_cast<int>(weights.size()));
  SplitObs y = split_total(xe, kind, we);
  std::vector<double> p(y.proportions.data(), y.proportions.data() + a);

  T pred_total;
  if (kind == TotalKind::Numbers) {
    pred_total = pred[0];
    for (int i = 1; i < a; ++i) pred_total += pred[static_cast<std::size_t>(i)];
  } else {
    pred_total = weights[0] * pred[0];
    for (int i = 1; i < a; ++i)
      pred_total += weights[static_cast<std::size_t>(i)] * pred[static_cast<std::size_t>(i)];
  }

  T composition = is_dirichlet(f)
                      ? logpdf_dirichlet(p, pred, params.concentration)
                      : logpdf_composition_ar1(f, p, pred, params.logratio_sds, params.rho);
  T total = logpdf_lognormal(y.total, pred_total, params.total_sd);
  return composition + total + log_abs_det_jacobian(xe, kind, we);
}

// Reference form taking a dense logratio scale matrix; the templated
// overload above is the one the fitting machinery uses.
struct BridgeParams {
  Eigen::MatrixXd sigma;
  double concentration = 0.0;
  double total_sd = 0.0;
};

inline double corrected_obs_loglik(Family f, const Eigen::VectorXd& x,
                                   const Eigen::VectorXd& predicted, const BridgeParams& params,
                                   const Eigen::VectorXd& weights = Eigen::VectorXd()) {
  if (!is_proportions(f))
    throw std::invalid_argument(std::string(family_code(f)) + " is not a proportions family");
  if (predicted.size() != x.size())
    throw std::invalid_argument("corrected_obs_loglik: dimension mismatch");
  const TotalKind kind = family_total_kind(f);
  SplitObs y = split_total(x, kind, weights);
  Eigen::VectorXd pi = predicted / predicted.sum();
  double pred_total =
      (kind == TotalKind::Numbers) ? predicted.sum() : weights.dot(predicted);
  double composition = is_dirichlet(f)
                           ? logpdf_composition(f, y.proportions, pi, params.concentration)
                           : logpdf_composition(f, y.proportions, pi, params.sigma);
  double total = logpdf_lognormal(y.total, pred_total, params.total_sd);
  return composition + total + log_abs_det_jacobian(x, kind, weights);
}

}  // namespace stocklik
