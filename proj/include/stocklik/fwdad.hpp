#pragma once

// Forward-mode automatic differentiation scalars carrying value, gradient
// and dense Hessian over a small set of local variables. Two flavours:
//
//   D2  = Dual2<false>  value + gradient + Hessian
//   D2T = Dual2<true>   additionally tracks t = sum_{p,q} W_pq * d2y/dz_p dz_q
//                       together with the gradient of t.
//
// The trace augmentation gives third-order information contracted against a
// fixed symmetric weight matrix W over the first `nu` variables, which is
// what the marginal-likelihood gradient needs (W is a block of the inverse
// curvature there). Propagating the contracted trace costs O(n^2) per
// operation instead of the O(n^3) a full third-order tensor would.
//
// Variables use prefix semantics: a scalar with active size n has zero
// derivatives for all variable indices >= n. Constants have n = 0. This
// keeps partial subexpressions cheap when a term touches many variables.

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <cstring>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/polygamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

namespace stocklik::ad {

inline constexpr int kMaxVars = 64;

constexpr int tri_size(int n) { return n * (n + 1) / 2; }
// Packed lower-triangle index; requires i >= j.
constexpr int tri(int i, int j) { return i * (i + 1) / 2 + j; }

// Symmetric weight matrix over the first nu variables, row-major nu x nu.
// Referenced, not owned; must outlive the evaluation.
struct TraceWeights {
  int nu = 0;
  const double* w = nullptr;
  double at(int p, int q) const { return w[p * nu + q]; }
};

template <bool Trace>
struct Dual2 {
  static constexpr bool has_trace = Trace;

  int n = 0;       // active variable prefix
  double v = 0;
  double t = 0;    // <W, Hessian block>, tracked when Trace
  const TraceWeights* wts = nullptr;
  double g[kMaxVars];
  double gt[kMaxVars];          // gradient of t, tracked when Trace
  double h[tri_size(kMaxVars)]; // Hessian, packed lower triangle

  Dual2() = default;
  Dual2(const Dual2& o) { assign(o); }
  Dual2& operator=(const Dual2& o) {
    if (this != &o) assign(o);
    return *this;
  }

  static Dual2 constant(double value) {
    Dual2 c;
    c.v = value;
    return c;
  }

  // Seeds variable `index`; the active prefix becomes index+1.
  static Dual2 variable(double value, int index, const TraceWeights* wts = nullptr) {
    assert(index >= 0 && index < kMaxVars);
    Dual2 c;
    c.n = index + 1;
    c.v = value;
    c.wts = wts;
    std::fill_n(c.g, c.n, 0.0);
    std::fill_n(c.h, tri_size(c.n), 0.0);
    if constexpr (Trace) std::fill_n(c.gt, c.n, 0.0);
    c.g[index] = 1.0;
    return c;
  }

  double value() const { return v; }
  double grad(int i) const { return i < n ? g[i] : 0.0; }
  double hess(int i, int j) const {
    int a = std::max(i, j), b = std::min(i, j);
    return a < n ? h[tri(a, b)] : 0.0;
  }
  double trace() const { return t; }
  double trace_grad(int i) const { return i < n ? gt[i] : 0.0; }

  // Zero-extends the active prefix to m variables.
  void grow(int m) {
    assert(m <= kMaxVars);
    if (m <= n) return;
    std::fill(g + n, g + m, 0.0);
    std::fill(h + tri_size(n), h + tri_size(m), 0.0);
    if constexpr (Trace) std::fill(gt + n, gt + m, 0.0);
    n = m;
  }

  Dual2& operator+=(const Dual2& o) {
    take_wts(o);
    grow(o.n);
    v += o.v;
    for (int i = 0; i < o.n; ++i) g[i] += o.g[i];
    int hs = tri_size(o.n);
    for (int k = 0; k < hs; ++k) h[k] += o.h[k];
    if constexpr (Trace) {
      t += o.t;
      for (int i = 0; i < o.n; ++i) gt[i] += o.gt[i];
    }
    return *this;
  }
  Dual2& operator-=(const Dual2& o) {
    take_wts(o);
    grow(o.n);
    v -= o.v;
    for (int i = 0; i < o.n; ++i) g[i] -= o.g[i];
    int hs = tri_size(o.n);
    for (int k = 0; k < hs; ++k) h[k] -= o.h[k];
    if constexpr (Trace) {
      t -= o.t;
      for (int i = 0; i < o.n; ++i) gt[i] -= o.gt[i];
    }
    return *this;
  }
  Dual2& operator+=(double c) {
    v += c;
    return *this;
  }
  Dual2& operator-=(double c) {
    v -= c;
    return *this;
  }
  Dual2& operator*=(double c) {
    v *= c;
    for (int i = 0; i < n; ++i) g[i] *= c;
    int hs = tri_size(n);
    for (int k = 0; k < hs; ++k) h[k] *= c;
    if constexpr (Trace) {
      t *= c;
      for (int i = 0; i < n; ++i) gt[i] *= c;
    }
    return *this;
  }
  Dual2& operator*=(const Dual2& o) {
    *this = *this * o;
    return *this;
  }

  friend Dual2 operator+(Dual2 a, const Dual2& b) {
    a += b;
    return a;
  }
  friend Dual2 operator-(Dual2 a, const Dual2& b) {
    a -= b;
    return a;
  }
  friend Dual2 operator+(Dual2 a, double c) {
    a.v += c;
    return a;
  }
  friend Dual2 operator+(double c, Dual2 a) {
    a.v += c;
    return a;
  }
  friend Dual2 operator-(Dual2 a, double c) {
    a.v -= c;
    return a;
  }
  friend Dual2 operator-(double c, const Dual2& a) { return -a + c; }
  friend Dual2 operator-(const Dual2& a) {
    Dual2 c(a);
    c *= -1.0;
    return c;
  }
  friend Dual2 operator*(Dual2 a, double c) {
    a *= c;
    return a;
  }
  friend Dual2 operator*(double c, Dual2 a) {
    a *= c;
    return a;
  }
  friend Dual2 operator/(Dual2 a, double c) {
    a *= 1.0 / c;
    return a;
  }

  friend Dual2 operator*(const Dual2& a, const Dual2& b) {
    Dual2 c;
    c.n = std::max(a.n, b.n);
    c.v = a.v * b.v;
    c.wts = a.wts ? a.wts : b.wts;
    assert(!(a.wts && b.wts) || a.wts == b.wts);
    const double av = a.v, bv = b.v;
    for (int i = 0; i < c.n; ++i) c.g[i] = av * b.grad(i) + bv * a.grad(i);
    // Hessian: av*Hb + bv*Ha + ga gb' + gb ga'. Split rows by which operand
    // still has entries to avoid per-entry bounds checks.
    int na = a.n, nb = b.n;
    int lo = std::min(na, nb);
    for (int i = 0; i < lo; ++i)
      for (int j = 0; j <= i; ++j)
        c.h[tri(i, j)] = av * b.h[tri(i, j)] + bv * a.h[tri(i, j)] + a.g[i] * b.g[j] + a.g[j] * b.g[i];
    for (int i = lo; i < na; ++i)
      for (int j = 0; j <= i; ++j)
        c.h[tri(i, j)] = bv * a.h[tri(i, j)] + a.g[i] * b.grad(j) + a.grad(j) * b.grad(i);
    for (int i = lo; i < nb; ++i)
      for (int j = 0; j <= i; ++j)
        c.h[tri(i, j)] = av * b.h[tri(i, j)] + a.grad(i) * b.g[j] + a.grad(j) * b.g[i];
    if constexpr (Trace) {
      const TraceWeights* W = c.wts;
      double sa[kMaxVars], sb[kMaxVars];
      int nu = W ? W->nu : 0;
      int nua = std::min(nu, na), nub = std::min(nu, nb);
      // s* = W * g* over the weighted prefix.
      for (int p = 0; p < nu; ++p) {
        double xa = 0, xb = 0;
        for (int q = 0; q < nua; ++q) xa += W->at(p, q) * a.g[q];
        for (int q = 0; q < nub; ++q) xb += W->at(p, q) * b.g[q];
        sa[p] = xa;
        sb[p] = xb;
      }
      double cross = 0;
      for (int p = 0; p < nua; ++p) cross += a.g[p] * sb[p];
      c.t = av * b.t + bv * a.t + 2.0 * cross;
      for (int m = 0; m < c.n; ++m) {
        double x = a.grad(m) * b.t + av * b.trace_grad(m) + b.grad(m) * a.t + bv * a.trace_grad(m);
        double hv = 0;
        if (m < na)
          for (int p = 0; p < nua; ++p) hv += a.h[tri(std::max(m, p), std::min(m, p))] * sb[p];
        if (m < nb)
          for (int p = 0; p < nub; ++p) hv += b.h[tri(std::max(m, p), std::min(m, p))] * sa[p];
        c.gt[m] = x + 2.0 * hv;
      }
    }
    return c;
  }

  friend Dual2 operator/(const Dual2& a, const Dual2& b) { return a * recip(b); }
  friend Dual2 operator/(double c, const Dual2& b) { return recip(b) * c; }

 private:
  void assign(const Dual2& o) {
    n = o.n;
    v = o.v;
    t = o.t;
    wts = o.wts;
    std::memcpy(g, o.g, sizeof(double) * static_cast<std::size_t>(n));
    std::memcpy(h, o.h, sizeof(double) * static_cast<std::size_t>(tri_size(n)));
    if constexpr (Trace) std::memcpy(gt, o.gt, sizeof(double) * static_cast<std::size_t>(n));
  }
  void take_wts(const Dual2& o) {
    assert(!(wts && o.wts) || wts == o.wts);
    if (!wts) wts = o.wts;
  }
};

using D2 = Dual2<false>;
using D2T = Dual2<true>;

// Chain rule for a scalar function given derivatives f1..f3 at a.v.
// f3 only matters for the trace flavour.
template <bool Trace>
Dual2<Trace> apply(const Dual2<Trace>& a, double f0, double f1, double f2, double f3 = 0.0) {
  Dual2<Trace> c;
  c.n = a.n;
  c.v = f0;
  c.wts = a.wts;
  for (int i = 0; i < a.n; ++i) c.g[i] = f1 * a.g[i];
  for (int i = 0; i < a.n; ++i)
    for (int j = 0; j <= i; ++j) c.h[tri(i, j)] = f1 * a.h[tri(i, j)] + f2 * a.g[i] * a.g[j];
  if constexpr (Trace) {
    const TraceWeights* W = a.wts;
    int nu = W ? std::min(W->nu, a.n) : 0;
    double s[kMaxVars];
    for (int p = 0; p < nu; ++p) {
      double x = 0;
      for (int q = 0; q < nu; ++q) x += W->at(p, q) * a.g[q];
      s[p] = x;
    }
    double quad = 0;
    for (int p = 0; p < nu; ++p) quad += a.g[p] * s[p];
    c.t = f1 * a.t + f2 * quad;
    for (int m = 0; m < a.n; ++m) {
      double hv = 0;
      for (int p = 0; p < nu; ++p) hv += a.h[tri(std::max(m, p), std::min(m, p))] * s[p];
      c.gt[m] = f2 * a.g[m] * a.t + f1 * a.gt[m] + f3 * a.g[m] * quad + 2.0 * f2 * hv;
    }
  }
  return c;
}

template <bool Trace>
Dual2<Trace> recip(const Dual2<Trace>& a) {
  double iv = 1.0 / a.v;
  return apply(a, iv, -iv * iv, 2.0 * iv * iv * iv, -6.0 * iv * iv * iv * iv);
}

template <bool Trace>
Dual2<Trace> exp(const Dual2<Trace>& a) {
  double e = std::exp(a.v);
  return apply(a, e, e, e, e);
}

template <bool Trace>
Dual2<Trace> log(const Dual2<Trace>& a) {
  double iv = 1.0 / a.v;
  return apply(a, std::log(a.v), iv, -iv * iv, 2.0 * iv * iv * iv);
}

template <bool Trace>
Dual2<Trace> sqrt(const Dual2<Trace>& a) {
  double r = std::sqrt(a.v);
  return apply(a, r, 0.5 / r, -0.25 / (r * a.v), 0.375 / (r * a.v * a.v));
}

template <bool Trace>
Dual2<Trace> pow(const Dual2<Trace>& a, double p) {
  double f0 = std::pow(a.v, p);
  double f1 = p * std::pow(a.v, p - 1);
  double f2 = p * (p - 1) * std::pow(a.v, p - 2);
  double f3 = p * (p - 1) * (p - 2) * std::pow(a.v, p - 3);
  return apply(a, f0, f1, f2, f3);
}

template <bool Trace>
Dual2<Trace> tanh(const Dual2<Trace>& a) {
  double y = std::tanh(a.v);
  double s = 1.0 - y * y;  // sech^2
  return apply(a, y, s, -2.0 * y * s, s * (6.0 * y * y - 2.0));
}

template <bool Trace>
Dual2<Trace> lgamma(const Dual2<Trace>& a) {
  double f3 = 0;
  if constexpr (Trace) f3 = boost::math::polygamma(2, a.v);
  return apply(a, std::lgamma(a.v), boost::math::digamma(a.v), boost::math::trigamma(a.v), f3);
}

template <bool Trace>
Dual2<Trace> erfc(const Dual2<Trace>& a) {
  constexpr double c = 1.1283791670955126;  // 2/sqrt(pi)
  double z = a.v;
  double e = std::exp(-z * z);
  return apply(a, std::erfc(z), -c * e, 2.0 * c * z * e, c * (2.0 - 4.0 * z * z) * e);
}

// First-order dual for delta-method gradients of reporting functionals.
struct Dual1 {
  int n = 0;
  double v = 0;
  double g[kMaxVars];

  Dual1() = default;
  Dual1(const Dual1& o) { assign(o); }
  Dual1& operator=(const Dual1& o) {
    if (this != &o) assign(o);
    return *this;
  }
  static Dual1 constant(double value) {
    Dual1 c;
    c.v = value;
    return c;
  }
  static Dual1 variable(double value, int index) {
    assert(index >= 0 && index < kMaxVars);
    Dual1 c;
    c.n = index + 1;
    c.v = value;
    std::fill_n(c.g, c.n, 0.0);
    c.g[index] = 1.0;
    return c;
  }
  double value() const { return v; }
  double grad(int i) const { return i < n ? g[i] : 0.0; }
  void grow(int m) {
    if (m <= n) return;
    std::fill(g + n, g + m, 0.0);
    n = m;
  }
  Dual1& operator+=(const Dual1& o) {
    grow(o.n);
    v += o.v;
    for (int i = 0; i < o.n; ++i) g[i] += o.g[i];
    return *this;
  }
  Dual1& operator-=(const Dual1& o) {
    grow(o.n);
    v -= o.v;
    for (int i = 0; i < o.n; ++i) g[i] -= o.g[i];
    return *this;
  }
  Dual1& operator*=(double c) {
    v *= c;
    for (int i = 0; i < n; ++i) g[i] *= c;
    return *this;
  }
  friend Dual1 operator+(Dual1 a, const Dual1& b) { return a += b; }
  friend Dual1 operator-(Dual1 a, const Dual1& b) { return a -= b; }
  friend Dual1 operator+(Dual1 a, double c) {
    a.v += c;
    return a;
  }
  friend Dual1 operator+(double c, Dual1 a) {
    a.v += c;
    return a;
  }
  friend Dual1 operator-(Dual1 a, double c) {
    a.v -= c;
    return a;
  }
  friend Dual1 operator-(double c, const Dual1& a) {
    Dual1 r(a);
    r *= -1.0;
    r.v += c;
    return r;
  }
  friend Dual1 operator-(const Dual1& a) {
    Dual1 r(a);
    r *= -1.0;
    return r;
  }
  friend Dual1 operator*(Dual1 a, double c) { return a *= c; }
  friend Dual1 operator*(double c, Dual1 a) { return a *= c; }
  friend Dual1 operator/(Dual1 a, double c) { return a *= 1.0 / c; }
  friend Dual1 operator*(const Dual1& a, const Dual1& b) {
    Dual1 c;
    c.n = std::max(a.n, b.n);
    c.v = a.v * b.v;
    for (int i = 0; i < c.n; ++i) c.g[i] = a.v * b.grad(i) + b.v * a.grad(i);
    return c;
  }
  friend Dual1 operator/(const Dual1& a, const Dual1& b) {
    Dual1 c;
    c.n = std::max(a.n, b.n);
    c.v = a.v / b.v;
    double ib = 1.0 / b.v;
    for (int i = 0; i < c.n; ++i) c.g[i] = (a.grad(i) - c.v * b.grad(i)) * ib;
    return c;
  }

 private:
  void assign(const Dual1& o) {
    n = o.n;
    v = o.v;
    std::memcpy(g, o.g, sizeof(double) * static_cast<std::size_t>(n));
  }
};

inline Dual1 apply1(const Dual1& a, double f0, double f1) {
  Dual1 c;
  c.n = a.n;
  c.v = f0;
  for (int i = 0; i < a.n; ++i) c.g[i] = f1 * a.g[i];
  return c;
}
inline Dual1 exp(const Dual1& a) {
  double e = std::exp(a.v);
  return apply1(a, e, e);
}
inline Dual1 log(const Dual1& a) { return apply1(a, std::log(a.v), 1.0 / a.v); }
inline Dual1 sqrt(const Dual1& a) {
  double r = std::sqrt(a.v);
  return apply1(a, r, 0.5 / r);
}
inline Dual1 pow(const Dual1& a, double p) {
  return apply1(a, std::pow(a.v, p), p * std::pow(a.v, p - 1));
}
inline Dual1 tanh(const Dual1& a) {
  double y = std::tanh(a.v);
  return apply1(a, y, 1.0 - y * y);
}
inline Dual1 lgamma(const Dual1& a) {
  return apply1(a, std::lgamma(a.v), boost::math::digamma(a.v));
}
inline Dual1 erfc(const Dual1& a) {
  constexpr double c = 1.1283791670955126;
  return apply1(a, std::erfc(a.v), -c * std::exp(-a.v * a.v));
}

// Uniform access for code templated over double and the dual types.
inline double value_of(double x) { return x; }
template <bool Trace>
double value_of(const Dual2<Trace>& x) {
  return x.v;
}
inline double value_of(const Dual1& x) { return x.v; }

template <class T>
T make_constant(double v) {
  return T::constant(v);
}
template <>
inline double make_constant<double>(double v) {
  return v;
}

}  // namespace stocklik::ad
