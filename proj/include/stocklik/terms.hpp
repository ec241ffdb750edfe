#pragma once

// The joint negative log-likelihood as a sum of small terms, each reading
// a handful of latent states (at most two adjacent year blocks) and fixed
// parameters. One generic body per term serves three evaluation modes:
// plain value, gradient+Hessian in the latents, and the trace-augmented
// pass that contracts third derivatives against the inverse curvature for
// the marginal-likelihood gradient.

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stocklik/block_chol.hpp"
#include "stocklik/fwdad.hpp"

namespace stocklik {

struct TermBase {
  std::vector<int> u_idx;   // global latent indices, duplicates forbidden
  std::vector<int> th_idx;  // global parameter indices
  std::string label;        // context prefixed to density errors

  virtual ~TermBase() = default;
  // x holds the latent locals then the parameter locals, in index order.
  virtual double value(const double* x) const = 0;
  virtual ad::Dual2<false> eval(const ad::Dual2<false>* x) const = 0;
  virtual ad::Dual2<true> eval(const ad::Dual2<true>* x) const = 0;
};

namespace detail {

template <class F>
struct GenericTerm final : TermBase {
  F f;
  explicit GenericTerm(F fn) : f(std::move(fn)) {}
  double value(const double* x) const override { return f(x); }
  ad::Dual2<false> eval(const ad::Dual2<false>* x) const override { return f(x); }
  ad::Dual2<true> eval(const ad::Dual2<true>* x) const override { return f(x); }
};

}  // namespace detail

// The body f is a generic callable taking a pointer to its locals and
// returning the same scalar type.
template <class F>
std::unique_ptr<TermBase> make_term(std::vector<int> u_idx, std::vector<int> th_idx,
                                    std::string label, F f) {
  auto t = std::make_unique<detail::GenericTerm<F>>(std::move(f));
  t->u_idx = std::move(u_idx);
  t->th_idx = std::move(th_idx);
  t->label = std::move(label);
  return t;
}

// Pieces of the marginal-likelihood gradient accumulated in one pass over
// the terms at the inner optimum, given the selected inverse S of the
// latent curvature:
//   f_theta      direct parameter gradient of the joint value
//   trace_theta  sum_pq S_pq d3f/du_p du_q dtheta_j
//   T            sum_pq S_pq d3f/du_p du_q du_k
//   mixed        cross second derivatives d2f/du dtheta
struct OuterPass {
  Eigen::VectorXd f_theta;
  Eigen::VectorXd trace_theta;
  Eigen::VectorXd T;
  Eigen::MatrixXd mixed;
};

class TermCollection {
 public:
  TermCollection(int n_blocks, int block_size, int n_theta)
      : nb_(n_blocks), bs_(block_size), ntheta_(n_theta) {
    if (nb_ < 1 || bs_ < 1 || ntheta_ < 0)
      throw std::invalid_argument("term collection needs positive block dimensions");
  }

  int nu() const { return nb_ * bs_; }
  int ntheta() const { return ntheta_; }
  int n_blocks() const { return nb_; }
  int block_size() const { return bs_; }
  std::size_t size() const { return terms_.size(); }
  const TermBase& term(std::size_t i) const { return *terms_[i]; }

  void add(std::unique_ptr<TermBase> t) {
    int lo_block = nb_, hi_block = -1;
    std::vector<int> seen;
    for (int g : t->u_idx) {
      if (g < 0 || g >= nu()) throw std::invalid_argument(t->label + ": latent index out of range");
      for (int s : seen)
        if (s == g) throw std::invalid_argument(t->label + ": duplicate latent index");
      seen.push_back(g);
      lo_block = std::min(lo_block, g / bs_);
      hi_block = std::max(hi_block, g / bs_);
    }
    if (hi_block >= 0 && hi_block - lo_block > 1)
      throw std::invalid_argument(t->label + ": term spans more than two adjacent blocks");
    for (int j : t->th_idx)
      if (j < 0 || j >= ntheta_)
        throw std::invalid_argument(t->label + ": parameter index out of range");
    if (t->u_idx.size() + t->th_idx.size() > static_cast<std::size_t>(ad::kMaxVars))
      throw std::invalid_argument(t->label + ": too many local variables");
    terms_.push_back(std::move(t));
  }

  double value(const Eigen::VectorXd& u, const Eigen::VectorXd& theta) const {
    check_sizes(u, theta);
    double total = 0.0;
    std::vector<double> x;
    for (const auto& t : terms_) {
      gather(*t, u, theta, x);
      total += guarded(*t, [&] { return t->value(x.data()); });
    }
    return total;
  }

  // Value, latent gradient, and latent Hessian in block-tridiagonal form.
  double derivatives_u(const Eigen::VectorXd& u, const Eigen::VectorXd& theta,
                       Eigen::VectorXd& grad, BlockTridiag& H) const {
    check_sizes(u, theta);
    grad.setZero(nu());
    if (H.nb != nb_ || H.bs != bs_) H = BlockTridiag(nb_, bs_);
    else H.set_zero();

    using D2 = ad::Dual2<false>;
    std::vector<D2> locals(static_cast<std::size_t>(ad::kMaxVars));
    double total = 0.0;
    for (const auto& t : terms_) {
      const int nloc = static_cast<int>(t->u_idx.size());
      for (int i = 0; i < nloc; ++i) locals[i] = D2::variable(u[t->u_idx[i]], i);
      for (std::size_t j = 0; j < t->th_idx.size(); ++j)
        locals[nloc + j] = D2::constant(theta[t->th_idx[j]]);
      D2 r = guarded(*t, [&] { return t->eval(locals.data()); });
      total += r.v;
      for (int p = 0; p < nloc; ++p) {
        grad[t->u_idx[p]] += r.grad(p);
        for (int q = 0; q <= p; ++q) add_entry(H, t->u_idx[p], t->u_idx[q], r.hess(p, q));
      }
    }
    return total;
  }

  // Trace-augmented pass at the inner optimum; S is the selected inverse
  // of the latent Hessian there.
  OuterPass outer_pass(const Eigen::VectorXd& u, const Eigen::VectorXd& theta,
                       const BlockTridiag& S) const {
    check_sizes(u, theta);
    OuterPass out;
    out.f_theta.setZero(ntheta_);
    out.trace_theta.setZero(ntheta_);
    out.T.setZero(nu());
    out.mixed.setZero(nu(), ntheta_);

    using D2T = ad::Dual2<true>;
    std::vector<D2T> locals(static_cast<std::size_t>(ad::kMaxVars));
    std::vector<double> W;
    for (const auto& t : terms_) {
      const int nloc = static_cast<int>(t->u_idx.size());
      const int ntl = static_cast<int>(t->th_idx.size());
      W.assign(static_cast<std::size_t>(nloc) * nloc, 0.0);
      for (int p = 0; p < nloc; ++p)
        for (int q = 0; q < nloc; ++q) W[static_cast<std::size_t>(p) * nloc + q] = s_entry(S, t->u_idx[p], t->u_idx[q]);
      ad::TraceWeights wts{nloc, W.data()};

      for (int i = 0; i < nloc; ++i) locals[i] = D2T::variable(u[t->u_idx[i]], i, &wts);
      for (int j = 0; j < ntl; ++j)
        locals[nloc + j] = D2T::variable(theta[t->th_idx[j]], nloc + j, &wts);
      D2T r = guarded(*t, [&] { return t->eval(locals.data()); });

      for (int j = 0; j < ntl; ++j) {
        out.f_theta[t->th_idx[j]] += r.grad(nloc + j);
        out.trace_theta[t->th_idx[j]] += r.trace_grad(nloc + j);
      }
      for (int p = 0; p < nloc; ++p) {
        out.T[t->u_idx[p]] += r.trace_grad(p);
        for (int j = 0; j < ntl; ++j) out.mixed(t->u_idx[p], t->th_idx[j]) += r.hess(p, nloc + j);
      }
    }
    return out;
  }

 private:
  void check_sizes(const Eigen::VectorXd& u, const Eigen::VectorXd& theta) const {
    if (u.size() != nu() || theta.size() != ntheta_)
      throw std::invalid_argument("term evaluation: latent or parameter vector has wrong size");
  }

  void gather(const TermBase& t, const Eigen::VectorXd& u, const Eigen::VectorXd& theta,
              std::vector<double>& x) const {
    x.clear();
    for (int g : t.u_idx) x.push_back(u[g]);
    for (int j : t.th_idx) x.push_back(theta[j]);
  }

  template <class Fn>
  auto guarded(const TermBase& t, Fn fn) const -> decltype(fn()) {
    try {
      return fn();
    } catch (const std::domain_error& e) {
      throw std::domain_error(t.label + ": " + e.what());
    }
  }

  void add_entry(BlockTridiag& H, int gi, int gj, double v) const {
    const int yi = gi / bs_, yj = gj / bs_, ii = gi % bs_, jj = gj % bs_;
    if (yi == yj) {
      H.diag[static_cast<std::size_t>(yi)](ii, jj) += v;
      if (gi != gj) H.diag[static_cast<std::size_t>(yi)](jj, ii) += v;
    } else if (yi == yj + 1) {
      H.sub[static_cast<std::size_t>(yj)](ii, jj) += v;
    } else {
      H.sub[static_cast<std::size_t>(yi)](jj, ii) += v;
    }
  }

  double s_entry(const BlockTridiag& S, int gi, int gj) const {
    const int yi = gi / bs_, yj = gj / bs_, ii = gi % bs_, jj = gj % bs_;
    if (yi == yj) return S.diag[static_cast<std::size_t>(yi)](ii, jj);
    if (yi == yj + 1) return S.sub[static_cast<std::size_t>(yj)](ii, jj);
    return S.sub[static_cast<std::size_t>(yi)](jj, ii);
  }

  int nb_, bs_, ntheta_;
  std::vector<std::unique_ptr<TermBase>> terms_;
};

}  // namespace stocklik
