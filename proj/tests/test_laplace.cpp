#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "stocklik/laplace.hpp"
#include "stocklik/model.hpp"
#include "support/toy_models.hpp"

using namespace stocklik;

namespace {

// Quadratic joint density with parameter-dependent mean and offset:
//   f(u, th) = sum_i d_i/2 (u_i - b_i th_0)^2 + sum couplings c u_i u_j
//              + th_1^2 / 2.
// Its Gaussian integral is known in closed form, so the Laplace value
// must be exact and the inner step must land on the mean.
struct GaussToy {
  TermCollection terms{2, 2, 2};
  Eigen::Vector4d d{3.0, 2.5, 2.8, 3.4};
  Eigen::Vector4d b{1.0, -0.6, 0.4, 0.9};
  std::vector<std::pair<int, int>> pairs{{0, 1}, {1, 2}, {2, 3}};
  std::vector<double> c{0.4, -0.3, 0.5};

  GaussToy() {
    for (int i = 0; i < 4; ++i) {
      double di = d[i], bi = b[i];
      terms.add(make_term({i}, {0}, "pull " + std::to_string(i), [di, bi](const auto* x) {
        auto r = x[0] - bi * x[1];
        return 0.5 * di * r * r;
      }));
    }
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      double cp = c[p];
      terms.add(make_term({pairs[p].first, pairs[p].second}, {}, "couple " + std::to_string(p),
                          [cp](const auto* x) { return cp * x[0] * x[1]; }));
    }
    terms.add(make_term({0}, {1}, "offset", [](const auto* x) { return 0.5 * x[1] * x[1]; }));
  }

  Eigen::Matrix4d hess() const {
    Eigen::Matrix4d H = d.asDiagonal();
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      H(pairs[p].first, pairs[p].second) += c[p];
      H(pairs[p].second, pairs[p].first) += c[p];
    }
    return H;
  }

  // -log of the Gaussian integral of exp(-f) over u.
  double marginal(const Eigen::Vector2d& th) const {
    Eigen::Matrix4d H = hess();
    Eigen::Vector4d m = (d.array() * b.array()).matrix() * th[0];
    double kappa = 0.5 * th[0] * th[0] * (d.array() * b.array().square()).sum() + 0.5 * th[1] * th[1];
    return kappa - 0.5 * m.dot(H.inverse() * m) + 0.5 * std::log(H.determinant()) -
           2.0 * std::log(2.0 * M_PI);
  }
};

}  // namespace

TEST_CASE("the marginal of a gaussian toy is exact", "[laplace]") {
  GaussToy toy;
  Eigen::Vector2d th(0.8, -0.5);

  Eigen::VectorXd u0 = Eigen::VectorXd::Zero(4);
  MarginalEval eval = eval_marginal(toy.terms, th, u0, true);

  REQUIRE_THAT(eval.value, Catch::Matchers::WithinAbs(toy.marginal(th), 1e-10));

  // The inner optimum is the Gaussian mean, reached in one Newton step.
  Eigen::Vector4d m = (toy.d.array() * toy.b.array()).matrix() * th[0];
  Eigen::Vector4d mean = toy.hess().inverse() * m;
  for (int i = 0; i < 4; ++i)
    REQUIRE_THAT(eval.inner.u_hat[i], Catch::Matchers::WithinAbs(mean[i], 1e-9));
  REQUIRE(eval.inner.iterations <= 2);

  // Exact gradient against the closed form, differentiated analytically.
  Eigen::Vector4d db = (toy.d.array() * toy.b.array()).matrix();
  double dL0 = th[0] * (toy.d.array() * toy.b.array().square()).sum() -
               db.dot(toy.hess().inverse() * m);
  REQUIRE_THAT(eval.gradient[0], Catch::Matchers::WithinAbs(dL0, 1e-10));
  REQUIRE_THAT(eval.gradient[1], Catch::Matchers::WithinAbs(th[1], 1e-10));
}

TEST_CASE("the marginal matches a Kalman filter on a linear state model", "[laplace]") {
  // Random walk observed with noise, twenty years, one state per year.
  const int Y = 20;
  const double sd0 = 10.0;
  std::mt19937 rng(2024);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> z(Y);
  double x = 0.0;
  for (int y = 0; y < Y; ++y) {
    x += 0.3 * n01(rng);
    z[static_cast<std::size_t>(y)] = x + 0.5 * n01(rng);
  }

  TermCollection terms(Y, 1, 2);  // theta = (log process sd, log obs sd)
  terms.add(make_term({0}, {}, "diffuse start", [sd0](const auto* xx) {
    auto w = xx[0] * (1.0 / sd0);
    return 0.5 * w * w + (kHalfLog2Pi + std::log(sd0));
  }));
  for (int y = 1; y < Y; ++y)
    terms.add(make_term({y - 1, y}, {0}, "step " + std::to_string(y), [](const auto* xx) {
      using std::exp;
      using std::log;
      auto w = (xx[1] - xx[0]) / exp(xx[2]);
      return 0.5 * w * w + kHalfLog2Pi + xx[2];
    }));
  for (int y = 0; y < Y; ++y) {
    double zy = z[static_cast<std::size_t>(y)];
    terms.add(make_term({y}, {1}, "obs " + std::to_string(y), [zy](const auto* xx) {
      using std::exp;
      auto w = (zy - xx[0]) / exp(xx[1]);
      return 0.5 * w * w + kHalfLog2Pi + xx[1];
    }));
  }

  auto kalman_nll = [&](double q, double r) {
    double mean = 0.0, P = sd0 * sd0, nll = 0.0;
    for (int y = 0; y < Y; ++y) {
      if (y > 0) P += q * q;
      const double S = P + r * r;
      const double nu_res = z[static_cast<std::size_t>(y)] - mean;
      nll += kHalfLog2Pi + 0.5 * std::log(S) + 0.5 * nu_res * nu_res / S;
      const double K = P / S;
      mean += K * nu_res;
      P *= 1.0 - K;
    }
    return nll;
  };

  Eigen::Vector2d th(std::log(0.3), std::log(0.5));
  MarginalEval eval = eval_marginal(terms, th, Eigen::VectorXd::Zero(Y), true);
  REQUIRE_THAT(eval.value, Catch::Matchers::WithinAbs(kalman_nll(0.3, 0.5), 1e-6));

  // Elsewhere in parameter space too.
  Eigen::Vector2d th2(std::log(0.7), std::log(0.2));
  MarginalEval eval2 = eval_marginal(terms, th2, eval.inner.u_hat, false);
  REQUIRE_THAT(eval2.value, Catch::Matchers::WithinAbs(kalman_nll(0.7, 0.2), 1e-6));

  // Gradient against central differences of the filter.
  const double h = 1e-6;
  for (int j = 0; j < 2; ++j) {
    Eigen::Vector2d tp = th, tm = th;
    tp[j] += h;
    tm[j] -= h;
    const double fd = (kalman_nll(std::exp(tp[0]), std::exp(tp[1])) -
                       kalman_nll(std::exp(tm[0]), std::exp(tm[1]))) /
                      (2 * h);
    REQUIRE_THAT(eval.gradient[j], Catch::Matchers::WithinAbs(fd, 1e-5));
  }
}

TEST_CASE("starting points do not change the inner optimum", "[laplace]") {
  // Widen the survey to every age: with the oldest age unsurveyed, a
  // large-F small-N mode competes with the data-consistent one and
  // different starts can legitimately land on different optima.
  Dataset d = toy::demo_dataset();
  d.fleets[1].last_age = 3;
  d.obs[1].years.clear();
  for (int year = 2001; year <= 2004; ++year) {
    Eigen::VectorXd x(3);
    for (int j = 0; j < 3; ++j) x[j] = 45.0 * std::exp(-0.4 * j) * (1.0 + 0.05 * (year - 2001));
    d.obs[1].years[year] = x;
  }
  ModelSpec spec;
  spec.family = Family::M1;
  Model m = build_model(spec, d);
  Eigen::VectorXd th = initial_theta(m, initial_latents(m));

  std::mt19937 rng(7);
  std::normal_distribution<double> n(0.0, 1.0);
  double first = 0.0;
  for (int rep = 0; rep < 5; ++rep) {
    Eigen::VectorXd u0 = initial_latents(m);
    if (rep > 0)
      for (int i = 0; i < u0.size(); ++i) u0[i] += n(rng);
    MarginalEval eval = eval_marginal(m.terms, th, u0, false);
    if (rep == 0)
      first = eval.value;
    else
      REQUIRE_THAT(eval.value, Catch::Matchers::WithinAbs(first, 1e-8));
  }
}

TEST_CASE("hot starts converge in a couple of steps", "[laplace]") {
  Dataset d = toy::demo_dataset();
  ModelSpec spec;
  spec.family = Family::M2;
  Model m = build_model(spec, d);
  Eigen::VectorXd th = initial_theta(m, initial_latents(m));

  MarginalEval cold = eval_marginal(m.terms, th, initial_latents(m), false);
  MarginalEval hot = eval_marginal(m.terms, th, cold.inner.u_hat, false);
  REQUIRE(hot.inner.iterations <= 2);
  REQUIRE_THAT(hot.value, Catch::Matchers::WithinAbs(cold.value, 1e-10));
}

TEST_CASE("marginal gradients pass a finite-difference audit", "[laplace]") {
  Dataset d = toy::demo_dataset();
  std::mt19937 rng(11);
  for (Family fam : {Family::M1, Family::M10}) {
    DYNAMIC_SECTION("family " << family_code(fam)) {
      ModelSpec spec;
      spec.family = fam;
      Model m = build_model(spec, d);
      Eigen::VectorXd base = initial_theta(m, initial_latents(m));
      std::normal_distribution<double> n(0.0, 0.15);

      for (int rep = 0; rep < 3; ++rep) {
        Eigen::VectorXd th = base;
        for (int i = 0; i < th.size(); ++i) th[i] += n(rng);
        Eigen::VectorXd u0 = initial_latents(m);
        MarginalEval eval = eval_marginal(m.terms, th, u0, true);

        const double h = 1e-5;
        for (int j = 0; j < m.k(); ++j) {
          Eigen::VectorXd tp = th, tm = th;
          tp[j] += h;
          tm[j] -= h;
          const double fp = eval_marginal(m.terms, tp, eval.inner.u_hat, false).value;
          const double fm = eval_marginal(m.terms, tm, eval.inner.u_hat, false).value;
          const double fd = (fp - fm) / (2 * h);
          REQUIRE_THAT(eval.gradient[j],
                       Catch::Matchers::WithinAbs(fd, 1e-4 * (1.0 + std::abs(fd))));
        }
      }
    }
  }
}

TEST_CASE("inner optimization failures are reported", "[laplace]") {
  Dataset d = toy::demo_dataset();
  ModelSpec spec;
  spec.family = Family::M1;
  Model m = build_model(spec, d);
  Eigen::VectorXd th = initial_theta(m, initial_latents(m));

  InnerOptions strict;
  strict.max_iter = 1;
  Eigen::VectorXd far = initial_latents(m).array() + 3.0;
  REQUIRE_THROWS_WITH(inner_optimize(m.terms, th, far, strict),
                      Catch::Matchers::ContainsSubstring("did not converge"));

  InnerOptions bad;
  bad.grad_tol = 0.0;
  REQUIRE_THROWS_AS(inner_optimize(m.terms, th, initial_latents(m), bad), std::invalid_argument);
  REQUIRE_THROWS_AS(inner_optimize(m.terms, th, Eigen::VectorXd::Zero(3)), std::invalid_argument);
}
