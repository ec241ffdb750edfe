#pragma once

// Laplace approximation of the marginal likelihood: Newton over the
// latent states at fixed parameters, then value and exact parameter
// gradient of
//
//   L(theta) = f(u_hat, theta) + (1/2) log det H - (n_u/2) log 2 pi,
//
// where f is the joint negative log density and H its latent Hessian at
// the inner optimum. The gradient accounts for the dependence of both
// u_hat and H on theta, using one reverse sweep over the terms with the
// selected inverse of H as trace weights.

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "stocklik/block_chol.hpp"
#include "stocklik/densities_uv.hpp"
#include "stocklik/terms.hpp"

namespace stocklik {

struct InnerOptions {
  double grad_tol = 1e-8;  // infinity norm of the latent gradient
  int max_iter = 200;

  // Second stopping rule: an unshifted Newton step below this (relative to
  // the iterate) means the mode is resolved in the latents themselves, the
  // quantity that actually bounds the precision of the Laplace value. On
  // stiff problems the gradient norm floors above grad_tol long after the
  // mode has stopped moving. Zero disables the rule.
  double step_tol = 1e-11;
};

struct InnerResult {
  Eigen::VectorXd u_hat;
  double joint = 0.0;    // f(u_hat, theta)
  double log_det = 0.0;  // log det H(u_hat, theta)
  BlockCholesky chol;    // factorization of H at the optimum
  int iterations = 0;
  double grad_norm = 0.0;
};

namespace detail {

// Joint value that treats evaluation failures (out-of-domain trial
// points) as infinitely bad rather than fatal.
inline double guarded_value(const TermCollection& terms, const Eigen::VectorXd& u,
                            const Eigen::VectorXd& theta) {
  try {
    double v = terms.value(u, theta);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  } catch (const std::domain_error&) {
    return std::numeric_limits<double>::infinity();
  }
}

}  // namespace detail

// Damped Newton with a ridge fallback: indefinite Hessians get an
// escalating diagonal shift, and steps backtrack until the joint value
// decreases. The Hessian at the returned optimum must factor without a
// shift, since its determinant enters the marginal value.
inline InnerResult inner_optimize(const TermCollection& terms, const Eigen::VectorXd& theta,
                                  Eigen::VectorXd u0, const InnerOptions& opts = {}) {
  const int nu = terms.nu();
  if (u0.size() != nu) throw std::invalid_argument("inner_optimize: wrong start dimension");
  if (!(opts.grad_tol > 0) || opts.max_iter < 1 || !(opts.step_tol >= 0))
    throw std::invalid_argument("inner_optimize: bad options");

  Eigen::VectorXd u = std::move(u0), grad(nu);
  BlockTridiag H(terms.n_blocks(), terms.block_size());
  double f = 0.0;
  double endgame_best = std::numeric_limits<double>::infinity();
  int endgame_stall = 0;
  bool polished = false;

  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    f = terms.derivatives_u(u, theta, grad, H);
    if (!std::isfinite(f)) throw std::runtime_error("inner optimization started outside the domain");
    const double gnorm = grad.lpNorm<Eigen::Infinity>();

    // Factor with the smallest ridge that works.
    double ridge = 0.0;
    BlockCholesky chol;
    for (;;) {
      BlockTridiag Hr = H;
      if (ridge > 0)
        for (auto& blk : Hr.diag) blk.diagonal().array() += ridge;
      if (chol.factor(Hr)) break;
      ridge = ridge == 0 ? 1e-6 : ridge * 10.0;
      if (ridge > 1e12) throw std::runtime_error("latent Hessian cannot be stabilized");
    }
    if (gnorm < opts.grad_tol && ridge > 0) {
      BlockCholesky bare;
      bare.factor(H);
      throw std::runtime_error(
          "latent Hessian is not positive definite at the inner optimum (year block " +
          std::to_string(bare.failed_block()) + ")");
    }

    Eigen::VectorXd step = chol.solve(grad);
    const double slope = grad.dot(step);  // positive for a descent direction of f
    auto resolved = [&]() {
      InnerResult r;
      r.chol = std::move(chol);
      r.u_hat = std::move(u);
      r.joint = f;
      r.log_det = r.chol.log_det();
      r.iterations = iter;
      r.grad_norm = gnorm;
      return r;
    };

    // Converged: a gradient below tolerance, or an unshifted Newton step
    // too small to move the mode. The first time either test passes, one
    // more full Newton step is taken before stopping; that squares the
    // remaining mode error down to rounding level, so the reported value
    // varies smoothly with theta instead of jumping by the stopping
    // tolerance whenever the iteration count changes.
    if (ridge == 0.0 &&
        (gnorm < opts.grad_tol ||
         (opts.step_tol > 0 &&
          step.lpNorm<Eigen::Infinity>() <= opts.step_tol * (1.0 + u.lpNorm<Eigen::Infinity>())))) {
      if (polished) return resolved();
      polished = true;
      u -= step;
      continue;
    }
    polished = false;

    // Close to the optimum with an unshifted positive definite Hessian,
    // plain Newton converges quadratically; value comparisons down there
    // drown in rounding noise, so skip them. When the gradient norm stops
    // halving in this regime it has hit the rounding floor for this
    // Hessian's scale, and the mode is as resolved as doubles allow.
    if (ridge == 0.0 && gnorm < 1e-5) {
      if (gnorm < 0.5 * endgame_best) {
        endgame_best = gnorm;
        endgame_stall = 0;
      } else if (++endgame_stall >= 2) {
        return resolved();
      }
      u -= step;
      continue;
    }
    endgame_best = std::numeric_limits<double>::infinity();
    endgame_stall = 0;

    const double noise = 64.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(f));
    double t = 1.0;
    bool moved = false;
    for (int half = 0; half < 60; ++half) {
      const double f_try = detail::guarded_value(terms, u - t * step, theta);
      const double want = 1e-4 * t * slope;
      if (f_try <= f - want || (want < noise && f_try <= f + noise)) {
        u -= t * step;
        moved = true;
        break;
      }
      t *= 0.5;
    }
    if (!moved) throw std::runtime_error("inner optimization stalled in line search");
  }
  throw std::runtime_error("inner optimization did not converge in " +
                           std::to_string(opts.max_iter) + " iterations");
}

struct MarginalEval {
  double value = 0.0;
  Eigen::VectorXd gradient;  // empty unless requested
  InnerResult inner;
};

inline double laplace_value(const InnerResult& r, int nu) {
  return r.joint + 0.5 * r.log_det - nu * kHalfLog2Pi;
}

// Marginal value, and optionally its exact gradient:
//   dL/dtheta_j = df/dtheta_j + (1/2) <S, dH/dtheta_j> - (1/2) r' m_j,
// with S the selected inverse of H, r = H^{-1} T (T the weighted third
// derivatives), and m_j the mixed latent-parameter second derivatives.
inline MarginalEval eval_marginal(const TermCollection& terms, const Eigen::VectorXd& theta,
                                  const Eigen::VectorXd& u0, bool with_gradient,
                                  const InnerOptions& opts = {}) {
  MarginalEval out;
  out.inner = inner_optimize(terms, theta, u0, opts);
  out.value = laplace_value(out.inner, terms.nu());
  if (with_gradient) {
    BlockTridiag S = out.inner.chol.selected_inverse();
    OuterPass pass = terms.outer_pass(out.inner.u_hat, theta, S);
    Eigen::VectorXd r = out.inner.chol.solve(pass.T);
    out.gradient = pass.f_theta + 0.5 * pass.trace_theta - 0.5 * pass.mixed.transpose() * r;
  }
  return out;
}

}  // namespace stocklik
