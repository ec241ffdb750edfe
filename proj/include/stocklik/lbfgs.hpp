#pragma once

// Bounded-memory BFGS with a strong Wolfe line search, used for the outer
// minimization over fixed parameters. The objective is a functor
// double(const VectorXd& x, VectorXd& grad). A non-finite value is read as
// "out of domain": the line search treats it like insufficient decrease and
// backs toward the last good point, so barrier-like objectives work without
// explicit bounds.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace stocklik {

struct LbfgsOptions {
  int memory = 10;
  double grad_tol = 1e-6;  // two-norm of the gradient
  int max_iter = 400;
  double c1 = 1e-4;  // sufficient decrease
  double c2 = 0.9;   // curvature

  // Absolute evaluation noise of the objective's value. Near a minimum the
  // true per-step decrease falls below this; a trial whose value is within
  // the noise but whose gradient norm strictly improves then still counts
  // as an acceptable step. Zero means plain rounding noise.
  double value_noise = 0.0;

  void validate() const {
    if (memory < 1) throw std::invalid_argument("lbfgs: memory must be at least 1");
    if (!(grad_tol > 0)) throw std::invalid_argument("lbfgs: grad_tol must be positive");
    if (max_iter < 1) throw std::invalid_argument("lbfgs: max_iter must be at least 1");
    if (!(0 < c1 && c1 < c2 && c2 < 1))
      throw std::invalid_argument("lbfgs: need 0 < c1 < c2 < 1");
    if (!(value_noise >= 0)) throw std::invalid_argument("lbfgs: value_noise must be nonnegative");
  }
};

struct LbfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd gradient;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
};

template <class F>
LbfgsResult lbfgs_minimize(F&& f, Eigen::VectorXd x, const LbfgsOptions& opts = {}) {
  opts.validate();
  const auto n = x.size();

  LbfgsResult out;
  Eigen::VectorXd g(n);
  auto eval = [&](const Eigen::VectorXd& p, Eigen::VectorXd& grad) {
    ++out.evaluations;
    return f(p, grad);
  };
  double fx = eval(x, g);
  if (!std::isfinite(fx) || !g.allFinite())
    throw std::invalid_argument("lbfgs: objective is not finite at the starting point");

  std::vector<Eigen::VectorXd> S, Yv;
  std::vector<double> invsy;

  // One strong Wolfe search along d from the current point. On a bracketing
  // breakdown the best Armijo point seen still counts as progress; only a
  // step that never improves anything fails.
  struct Trial {
    double t = 0.0, value = 0.0, slope = 0.0;
    Eigen::VectorXd grad;
  };
  Eigen::VectorXd xt(n), gt(n);
  auto probe = [&](double t, const Eigen::VectorXd& d) {
    Trial p;
    p.t = t;
    xt = x + t * d;
    p.value = eval(xt, gt);
    if (!std::isfinite(p.value) || !gt.allFinite()) {
      p.value = std::numeric_limits<double>::infinity();
      return p;
    }
    p.slope = gt.dot(d);
    p.grad = gt;
    return p;
  };

  auto wolfe_search = [&](const Eigen::VectorXd& d, double slope0, Trial& hit) {
    const double armijo_cut = opts.c1 * slope0;
    const double noise = std::max(
        64.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(fx)), opts.value_noise);
    Trial best;  // lowest Armijo-satisfying point seen, t = 0 if none
    Trial calm;  // smallest gradient norm within the value noise, t = 0 if none
    double calm_norm = g.norm();
    auto armijo = [&](const Trial& p) { return p.value <= fx + p.t * armijo_cut; };
    auto note = [&](const Trial& p) {
      if (!std::isfinite(p.value) || p.value > fx + noise) return;
      const double pn = p.grad.norm();
      if (pn < calm_norm) {
        calm = p;
        calm_norm = pn;
      }
    };

    // Bracket: expand until the Wolfe conditions hold or the minimum is
    // straddled.
    Trial lo;  // t = 0 endpoint
    lo.value = fx;
    lo.slope = slope0;
    Trial high;
    bool bracketed = false;
    double t = 1.0;
    for (int i = 0; i < 40 && !bracketed; ++i, t *= 2.0) {
      Trial p = probe(t, d);
      note(p);
      if (!armijo(p) || (i > 0 && p.value >= lo.value)) {
        high = p;
        bracketed = true;
        break;
      }
      if (best.t == 0.0 || p.value < best.value) best = p;
      if (std::abs(p.slope) <= -opts.c2 * slope0) {
        hit = p;
        return true;
      }
      if (p.slope >= 0.0) {
        high = lo;
        lo = p;
        bracketed = true;
        break;
      }
      lo = p;
    }
    if (!bracketed) {
      // Forty doublings without a bracket means the function keeps falling
      // along d; take the best point rather than chase the slope further.
      if (best.t > 0.0) {
        hit = best;
        return true;
      }
      if (calm.t > 0.0) {
        hit = calm;
        return true;
      }
      return false;
    }

    // Zoom by bisection; lo always satisfies Armijo with the lowest value.
    for (int i = 0; i < 60; ++i) {
      const double tm = 0.5 * (lo.t + high.t);
      if (!(std::abs(high.t - lo.t) > 1e-14 * (1.0 + std::abs(lo.t)))) break;
      Trial p = probe(tm, d);
      note(p);
      if (!armijo(p) || p.value >= lo.value) {
        high = p;
        continue;
      }
      if (best.t == 0.0 || p.value < best.value) best = p;
      if (std::abs(p.slope) <= -opts.c2 * slope0) {
        hit = p;
        return true;
      }
      if (p.slope * (high.t - lo.t) >= 0.0) high = lo;
      lo = p;
    }
    if (best.t > 0.0) {
      hit = best;
      return true;
    }
    if (calm.t > 0.0) {
      hit = calm;
      return true;
    }
    return false;
  };

  while (out.iterations < opts.max_iter) {
    if (g.norm() <= opts.grad_tol) {
      out.converged = true;
      break;
    }

    // Two-loop recursion with the standard s'y / y'y initial scaling.
    Eigen::VectorXd q = g;
    const int m = static_cast<int>(S.size());
    std::vector<double> alpha(static_cast<std::size_t>(m));
    for (int i = m - 1; i >= 0; --i) {
      alpha[static_cast<std::size_t>(i)] =
          invsy[static_cast<std::size_t>(i)] * S[static_cast<std::size_t>(i)].dot(q);
      q -= alpha[static_cast<std::size_t>(i)] * Yv[static_cast<std::size_t>(i)];
    }
    if (m > 0) q *= S.back().dot(Yv.back()) / Yv.back().squaredNorm();
    for (int i = 0; i < m; ++i) {
      const double beta =
          invsy[static_cast<std::size_t>(i)] * Yv[static_cast<std::size_t>(i)].dot(q);
      q += (alpha[static_cast<std::size_t>(i)] - beta) * S[static_cast<std::size_t>(i)];
    }
    Eigen::VectorXd d = -q;
    double slope0 = g.dot(d);
    if (!(slope0 < 0.0)) {
      // The memory has gone stale (possible after skipped updates); restart
      // from steepest descent.
      d = -g;
      slope0 = -g.squaredNorm();
      S.clear();
      Yv.clear();
      invsy.clear();
    }

    Trial step;
    if (!wolfe_search(d, slope0, step)) {
      // A stale quasi-Newton direction can defeat the line search on hard
      // ridges; drop the memory and give plain gradient descent one try
      // before declaring the iteration stuck.
      S.clear();
      Yv.clear();
      invsy.clear();
      d = -g;
      slope0 = -g.squaredNorm();
      if (!wolfe_search(d, slope0, step)) {
        out.message = "line search found no acceptable step at iteration " +
                      std::to_string(out.iterations);
        break;
      }
    }

    const Eigen::VectorXd s = step.t * d;
    const Eigen::VectorXd y = step.grad - g;
    const double sy = s.dot(y);
    if (sy > 1e-10 * s.norm() * y.norm()) {
      S.push_back(s);
      Yv.push_back(y);
      invsy.push_back(1.0 / sy);
      if (static_cast<int>(S.size()) > opts.memory) {
        S.erase(S.begin());
        Yv.erase(Yv.begin());
        invsy.erase(invsy.begin());
      }
    }
    x += s;
    fx = step.value;
    g = step.grad;
    ++out.iterations;
  }

  if (!out.converged && g.norm() <= opts.grad_tol) out.converged = true;
  if (!out.converged && out.message.empty())
    out.message = "no convergence in " + std::to_string(opts.max_iter) + " iterations";
  out.x = std::move(x);
  out.value = fx;
  out.gradient = std::move(g);
  return out;
}

}  // namespace stocklik
