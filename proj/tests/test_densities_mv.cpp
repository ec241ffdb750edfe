#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "stocklik/densities_mv.hpp"
#include "stocklik/densities_uv.hpp"
#include "support/mc.hpp"
#include "support/quadrature.hpp"

using namespace stocklik;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Eigen::VectorXd evec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<int>(v.size()));
  int i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

std::vector<double> svec(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd random_positive(int n, std::mt19937_64& rng, double lo = 0.3, double hi = 3.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::VectorXd out(n);
  for (int i = 0; i < n; ++i) out[i] = u(rng);
  return out;
}

Eigen::VectorXd random_simplex(int a, std::mt19937_64& rng) {
  Eigen::VectorXd p = random_positive(a, rng, 0.2, 2.0);
  return p / p.sum();
}

Eigen::MatrixXd random_spd(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 0.4);
  Eigen::MatrixXd b(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) b(i, j) = gauss(rng);
  return b * b.transpose() + 0.3 * Eigen::MatrixXd::Identity(n, n);
}

// Independent reference for the multivariate log-normal: explicit inverse
// and determinant instead of a Cholesky solve.
double mvlognormal_by_inverse(const Eigen::VectorXd& x, const Eigen::VectorXd& mu,
                              const Eigen::MatrixXd& sigma) {
  const int n = static_cast<int>(x.size());
  Eigen::VectorXd z = x.array().log() - mu.array().log();
  double quad = z.dot(sigma.inverse() * z);
  return -0.5 * n * std::log(2.0 * M_PI) - 0.5 * std::log(sigma.determinant()) - 0.5 * quad -
         x.array().log().sum();
}

}  // namespace

TEST_CASE("AR(1) covariance matrices") {
  Eigen::MatrixXd id = ar1_covariance({evec({1, 1}), 0.0});
  CHECK(id.isApprox(Eigen::MatrixXd::Identity(2, 2), 1e-14));

  Eigen::MatrixXd pinned = ar1_covariance({evec({1, 2}), 0.5});
  CHECK_THAT(pinned(0, 0), WithinAbs(1.0, 1e-14));
  CHECK_THAT(pinned(0, 1), WithinAbs(1.0, 1e-14));
  CHECK_THAT(pinned(1, 0), WithinAbs(1.0, 1e-14));
  CHECK_THAT(pinned(1, 1), WithinAbs(4.0, 1e-14));

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> rho_dist(-0.95, 0.95);
  for (int rep = 0; rep < 20; ++rep) {
    int n = 1 + static_cast<int>(rng() % 8);
    Ar1Scale s{random_positive(n, rng, 0.1, 2.0), rho_dist(rng)};
    Eigen::MatrixXd sigma = ar1_covariance(s);
    CHECK(sigma.isApprox(sigma.transpose(), 1e-14));
    for (int i = 0; i < n; ++i) CHECK_THAT(sigma(i, i), WithinRel(s.sds[i] * s.sds[i], 1e-13));
    Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    CHECK(llt.info() == Eigen::Success);
  }

  CHECK_THROWS_AS(ar1_covariance({evec({1, 1}), 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(ar1_covariance({evec({1, -1}), 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(ar1_covariance({Eigen::VectorXd(), 0.0}), std::invalid_argument);
}

TEST_CASE("multivariate log-normal against reference computations") {
  std::mt19937_64 rng(2);

  SECTION("diagonal scale reduces to independent log-normals") {
    for (int rep = 0; rep < 10; ++rep) {
      int n = 2 + static_cast<int>(rng() % 4);
      Eigen::VectorXd x = random_positive(n, rng);
      Eigen::VectorXd mu = random_positive(n, rng);
      Eigen::VectorXd sds = random_positive(n, rng, 0.2, 1.0);
      Eigen::MatrixXd sigma = sds.array().square().matrix().asDiagonal();
      double sum_uv = 0.0;
      for (int i = 0; i < n; ++i) sum_uv += logpdf_lognormal(x[i], mu[i], sds[i]);
      CHECK_THAT(logpdf_mvlognormal(x, mu, sigma), WithinAbs(sum_uv, 1e-10));
    }
  }

  SECTION("zero quadratic form leaves only the normalizing terms") {
    Eigen::VectorXd x = evec({1.4, 0.6});
    double expected = -std::log(2.0 * M_PI) - std::log(x[0] * x[1]);
    CHECK_THAT(logpdf_mvlognormal(x, x, Eigen::MatrixXd::Identity(2, 2)),
               WithinAbs(expected, 1e-12));
  }

  SECTION("matches the explicit-inverse evaluation") {
    for (int n : {2, 3, 5}) {
      Eigen::VectorXd x = random_positive(n, rng);
      Eigen::VectorXd mu = random_positive(n, rng);
      Eigen::MatrixXd sigma = random_spd(n, rng);
      CHECK_THAT(logpdf_mvlognormal(x, mu, sigma),
                 WithinAbs(mvlognormal_by_inverse(x, mu, sigma), 1e-9));
    }
  }

  SECTION("domain and dimension errors") {
    Eigen::VectorXd ok = evec({1.0, 1.0});
    Eigen::MatrixXd id = Eigen::MatrixXd::Identity(2, 2);
    CHECK_THROWS_AS(logpdf_mvlognormal(evec({1.0, 0.0}), ok, id), std::domain_error);
    CHECK_THROWS_AS(logpdf_mvlognormal(evec({1.0, -2.0}), ok, id), std::domain_error);
    CHECK_THROWS_AS(logpdf_mvlognormal(ok, evec({1.0, -1.0}), id), std::domain_error);
    CHECK_THROWS_AS(logpdf_mvlognormal(ok, evec({1.0}), id), std::invalid_argument);
    Eigen::MatrixXd indefinite = id;
    indefinite(0, 1) = indefinite(1, 0) = 2.0;
    CHECK_THROWS_AS(logpdf_mvlognormal(ok, ok, indefinite), std::domain_error);
  }
}

TEST_CASE("AR(1) fast paths match the factorized densities") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> rho_dist(-0.9, 0.9);

  SECTION("multivariate log-normal") {
    for (int n : {1, 2, 3, 6}) {
      for (double rho : {0.0, rho_dist(rng), rho_dist(rng)}) {
        Ar1Scale s{random_positive(n, rng, 0.2, 1.2), rho};
        Eigen::VectorXd x = random_positive(n, rng);
        Eigen::VectorXd mu = random_positive(n, rng);
        std::vector<double> log_mu(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) log_mu[static_cast<std::size_t>(i)] = std::log(mu[i]);
        double fast = logpdf_mvlognormal_ar1(svec(x), log_mu, svec(s.sds), s.rho);
        double ref = logpdf_mvlognormal(x, mu, ar1_covariance(s));
        CHECK_THAT(fast, WithinAbs(ref, 1e-10));
      }
    }
  }

  SECTION("logistic normals, with unnormalized predictions") {
    for (Family f : {Family::M8, Family::M9}) {
      for (int a : {2, 3, 5}) {
        Ar1Scale s{random_positive(a - 1, rng, 0.3, 1.0), rho_dist(rng)};
        Eigen::VectorXd p = random_simplex(a, rng);
        Eigen::VectorXd pred = random_positive(a, rng, 0.5, 4.0);
        Eigen::VectorXd pi = pred / pred.sum();
        double fast = logpdf_composition_ar1(f, svec(p), svec(pred), svec(s.sds), s.rho);
        double ref = logpdf_composition(f, p, pi, ar1_covariance(s));
        CAPTURE(family_code(f), a);
        CHECK_THAT(fast, WithinAbs(ref, 1e-10));
      }
    }
  }

  SECTION("Dirichlet, with unnormalized predictions") {
    for (int a : {2, 4}) {
      Eigen::VectorXd p = random_simplex(a, rng);
      Eigen::VectorXd pred = random_positive(a, rng, 0.5, 4.0);
      double conc = 5.3;
      double fast = logpdf_dirichlet(svec(p), svec(pred), conc);
      double ref = logpdf_composition(Family::M10, p, Eigen::VectorXd(pred / pred.sum()), conc);
      CHECK_THAT(fast, WithinAbs(ref, 1e-10));
    }
  }
}

TEST_CASE("logratio transforms at hand-computed points") {
  Eigen::VectorXd a = logratio_additive(evec({0.25, 0.25, 0.5}));
  CHECK_THAT(a[0], WithinAbs(-std::log(2.0), 1e-14));
  CHECK_THAT(a[1], WithinAbs(-std::log(2.0), 1e-14));

  Eigen::VectorXd m = logratio_multiplicative(evec({0.2, 0.3, 0.5}));
  CHECK_THAT(m[0], WithinAbs(std::log(0.25), 1e-14));
  CHECK_THAT(m[1], WithinAbs(std::log(0.6), 1e-14));
}

TEST_CASE("logratio transforms invert") {
  std::mt19937_64 rng(4);
  for (int a : {2, 3, 4, 6}) {
    for (int rep = 0; rep < 10; ++rep) {
      Eigen::VectorXd p = random_simplex(a, rng);
      Eigen::VectorXd back_a = logratio_additive_inverse(logratio_additive(p));
      Eigen::VectorXd back_m = logratio_multiplicative_inverse(logratio_multiplicative(p));
      for (int i = 0; i < a; ++i) {
        CHECK_THAT(back_a[i], WithinAbs(p[i], 1e-12));
        CHECK_THAT(back_m[i], WithinAbs(p[i], 1e-12));
      }
    }
  }

  SECTION("forward of inverse returns the coordinates") {
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int rep = 0; rep < 10; ++rep) {
      Eigen::VectorXd v(3);
      for (int i = 0; i < 3; ++i) v[i] = u(rng);
      CHECK(logratio_additive(logratio_additive_inverse(v)).isApprox(v, 1e-10));
      CHECK(logratio_multiplicative(logratio_multiplicative_inverse(v)).isApprox(v, 1e-10));
    }
  }

  SECTION("huge logits do not overflow the additive inverse") {
    Eigen::VectorXd p = logratio_additive_inverse(evec({800.0, 799.0}));
    CHECK(std::isfinite(p[0]));
    CHECK_THAT(p.sum(), WithinAbs(1.0, 1e-12));
    CHECK(p[0] > p[1]);
    CHECK(p[2] < 1e-300);
  }

  SECTION("boundary points are rejected") {
    CHECK_THROWS_AS(logratio_additive(evec({0.0, 1.0})), std::domain_error);
    CHECK_THROWS_AS(logratio_multiplicative(evec({0.5, -0.5, 1.0})), std::domain_error);
    CHECK_THROWS_AS(logratio_additive(evec({0.3, 0.3})), std::domain_error);
  }
}

TEST_CASE("compositional density pinned values") {
  SECTION("Dirichlet with unit concentrations is uniform on the simplex") {
    Eigen::VectorXd pi = evec({0.5, 0.5});
    for (double x : {0.1, 0.4, 0.9})
      CHECK_THAT(logpdf_composition(Family::M10, evec({x, 1 - x}), pi, 2.0), WithinAbs(0.0, 1e-13));
  }

  SECTION("logistic normals at the predicted point") {
    Eigen::VectorXd p = evec({0.2, 0.3, 0.5});
    double expected = -std::log(2.0 * M_PI) - std::log(p[0] * p[1] * p[2]);
    Eigen::MatrixXd id = Eigen::MatrixXd::Identity(2, 2);
    CHECK_THAT(logpdf_composition(Family::M8, p, p, id), WithinAbs(expected, 1e-12));
    CHECK_THAT(logpdf_composition(Family::M9, p, p, id), WithinAbs(expected, 1e-12));
  }

  SECTION("one age group carries no information") {
    Eigen::VectorXd one = evec({1.0});
    CHECK_THAT(logpdf_composition(Family::M8, one, one, Eigen::MatrixXd(0, 0)),
               WithinAbs(0.0, 1e-15));
    CHECK_THAT(logpdf_composition_ar1(Family::M9, {1.0}, std::vector<double>{2.0}, {}, 0.0),
               WithinAbs(0.0, 1e-15));
  }

  SECTION("parameter kinds must match the family") {
    Eigen::VectorXd p = evec({0.4, 0.6});
    Eigen::MatrixXd id = Eigen::MatrixXd::Identity(1, 1);
    CHECK_THROWS_AS(logpdf_composition(Family::M10, p, p, id), std::invalid_argument);
    CHECK_THROWS_AS(logpdf_composition(Family::M8, p, p, 2.0), std::invalid_argument);
    CHECK_THROWS_AS(logpdf_composition(Family::M1, p, p, id), std::invalid_argument);
    CHECK_THROWS_AS(logpdf_composition(Family::M10, p, p, -1.0), std::domain_error);
  }

  SECTION("weight-based families share the number-based cores") {
    Eigen::VectorXd p = evec({0.3, 0.2, 0.5});
    Eigen::VectorXd pi = evec({0.4, 0.35, 0.25});
    Eigen::MatrixXd sigma = ar1_covariance({evec({0.5, 0.7}), 0.2});
    CHECK(logpdf_composition(Family::M11, p, pi, sigma) ==
          logpdf_composition(Family::M8, p, pi, sigma));
    CHECK(logpdf_composition(Family::M12, p, pi, sigma) ==
          logpdf_composition(Family::M9, p, pi, sigma));
    CHECK(logpdf_composition(Family::M13, p, pi, 3.0) ==
          logpdf_composition(Family::M10, p, pi, 3.0));
  }
}

TEST_CASE("compositional densities integrate to one", "[slow]") {
  SECTION("logistic normals over the three-part simplex") {
    Eigen::VectorXd pi = evec({0.5, 0.3, 0.2});
    Eigen::MatrixXd sigma = ar1_covariance({evec({0.6, 0.8}), 0.4});
    for (Family f : {Family::M8, Family::M9}) {
      auto density = [&](double p1, double p2) {
        double p3 = 1.0 - p1 - p2;
        if (!(p3 > 0) || !(p1 > 0) || !(p2 > 0)) return 0.0;
        return std::exp(logpdf_composition(f, evec({p1, p2, p3}), pi, sigma));
      };
      double mass = testsupport::integrate_finite(
          [&](double p1) {
            return testsupport::integrate_finite(
                [&](double p2) { return density(p1, p2); }, 0.0, 1.0 - p1, 1e-9);
          },
          0.0, 1.0, 1e-9);
      CAPTURE(family_code(f));
      CHECK_THAT(mass, WithinAbs(1.0, 1e-6));
    }
  }

  SECTION("Dirichlet on two parts, including concentrations below one") {
    Eigen::VectorXd pi = evec({0.3, 0.7});
    for (double conc : {0.5, 2.0, 10.0}) {
      double mass = testsupport::integrate_finite_singular(
          [&](double x) {
            return std::exp(logpdf_composition(Family::M10, evec({x, 1 - x}), pi, conc));
          },
          0.0, 1.0);
      CAPTURE(conc);
      CHECK_THAT(mass, WithinAbs(1.0, 1e-6));
    }
  }
}

TEST_CASE("Dirichlet simulation matches its moment formulas", "[slow][mc]") {
  const Eigen::VectorXd pi = evec({0.5, 0.3, 0.2});
  const double conc = 7.0;
  const std::size_t n = 1000000;
  std::mt19937_64 rng(20240818);
  std::vector<double> draws0, draws1;
  draws0.reserve(n);
  draws1.reserve(n);
  double cross = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::VectorXd p = sample_mv(Family::M10, pi, conc, rng);
    draws0.push_back(p[0]);
    draws1.push_back(p[1]);
    cross += p[0] * p[1];
  }
  auto m0 = testsupport::mc_moments(draws0);
  auto m1 = testsupport::mc_moments(draws1);
  CHECK_THAT(m0.mean, WithinAbs(pi[0], 4 * m0.se_mean));
  CHECK_THAT(m1.mean, WithinAbs(pi[1], 4 * m1.se_mean));
  CHECK_THAT(m0.var, WithinAbs((pi[0] - pi[0] * pi[0]) / (conc + 1), 4 * m0.se_var));
  CHECK_THAT(m1.var, WithinAbs((pi[1] - pi[1] * pi[1]) / (conc + 1), 4 * m1.se_var));

  // Covariance of the first two parts; its standard error comes from the
  // spread of the centered products.
  double cov = cross / static_cast<double>(n) - m0.mean * m1.mean;
  double prod_var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = (draws0[i] - m0.mean) * (draws1[i] - m1.mean) - cov;
    prod_var += d * d;
  }
  double se_cov = std::sqrt(prod_var / static_cast<double>(n) / static_cast<double>(n));
  CHECK_THAT(cov, WithinAbs(-pi[0] * pi[1] / (conc + 1), 4 * se_cov));
}

TEST_CASE("normalized log-normal vectors are additive logistic normal", "[slow][mc]") {
  // Closing a correlated log-normal vector to proportions must reproduce
  // the logratio covariance L Sigma L^T with L = [I | -1].
  const Eigen::VectorXd mu = evec({4.0, 2.0, 1.0});
  const Ar1Scale scale{evec({0.5, 0.6, 0.4}), 0.3};
  const Eigen::MatrixXd sigma_y = ar1_covariance(scale);
  const int a = 3;
  Eigen::MatrixXd l(a - 1, a);
  l << 1, 0, -1, 0, 1, -1;
  const Eigen::MatrixXd expected = l * sigma_y * l.transpose();

  const std::size_t n = 200000;
  std::mt19937_64 rng(20240819);
  Eigen::MatrixXd alr(static_cast<int>(n), a - 1);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::VectorXd y = sample_mv(Family::M7, mu, sigma_y, rng);
    Eigen::VectorXd p = y / y.sum();
    alr.row(static_cast<int>(i)) = logratio_additive(p).transpose();
  }
  Eigen::RowVectorXd mean = alr.colwise().mean();
  Eigen::MatrixXd centered = alr.rowwise() - mean;
  Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);

  for (int k = 0; k < a - 1; ++k)
    CHECK_THAT(mean[k], WithinAbs(std::log(mu[k] / mu[a - 1]),
                                  4 * std::sqrt(expected(k, k) / static_cast<double>(n))));
  for (int j = 0; j < a - 1; ++j)
    for (int k = 0; k < a - 1; ++k) {
      // Gaussian standard error of a sample covariance entry.
      double se = std::sqrt((expected(j, j) * expected(k, k) + expected(j, k) * expected(j, k)) /
                            static_cast<double>(n));
      CHECK_THAT(cov(j, k), WithinAbs(expected(j, k), 4 * se));
    }
}

TEST_CASE("logistic-normal samplers hit their logratio laws", "[slow][mc]") {
  const Eigen::VectorXd pi = evec({0.5, 0.3, 0.2});
  const Eigen::MatrixXd sigma = ar1_covariance({evec({0.4, 0.7}), -0.3});
  const std::size_t n = 100000;
  for (Family f : {Family::M8, Family::M9}) {
    std::mt19937_64 rng(20240820);
    Eigen::MatrixXd coords(static_cast<int>(n), 2);
    for (std::size_t i = 0; i < n; ++i) {
      Eigen::VectorXd p = sample_mv(f, pi, sigma, rng);
      Eigen::VectorXd t = (f == Family::M8) ? logratio_additive(p) : logratio_multiplicative(p);
      coords.row(static_cast<int>(i)) = t.transpose();
    }
    Eigen::RowVectorXd mean = coords.colwise().mean();
    Eigen::MatrixXd centered = coords.rowwise() - mean;
    Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
    Eigen::VectorXd loc = (f == Family::M8) ? logratio_additive(pi) : logratio_multiplicative(pi);
    CAPTURE(family_code(f));
    for (int k = 0; k < 2; ++k)
      CHECK_THAT(mean[k], WithinAbs(loc[k], 4 * std::sqrt(sigma(k, k) / static_cast<double>(n))));
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k) {
        double se = std::sqrt((sigma(j, j) * sigma(k, k) + sigma(j, k) * sigma(j, k)) /
                              static_cast<double>(n));
        CHECK_THAT(cov(j, k), WithinAbs(sigma(j, k), 4 * se));
      }
  }
}

TEST_CASE("diagonal scale gives independent log-normal components", "[slow][mc]") {
  const Eigen::VectorXd mu = evec({2.0, 5.0});
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(2, 2);
  sigma(0, 0) = 0.09;
  sigma(1, 1) = 0.25;
  const std::size_t n = 100000;
  std::mt19937_64 rng(20240821);
  double s0 = 0, s1 = 0, s00 = 0, s11 = 0, s01 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::VectorXd y = sample_mv(Family::M7, mu, sigma, rng);
    double a = std::log(y[0]), b = std::log(y[1]);
    s0 += a;
    s1 += b;
    s00 += a * a;
    s11 += b * b;
    s01 += a * b;
  }
  double nn = static_cast<double>(n);
  double r = (s01 / nn - (s0 / nn) * (s1 / nn)) /
             std::sqrt((s00 / nn - (s0 / nn) * (s0 / nn)) * (s11 / nn - (s1 / nn) * (s1 / nn)));
  CHECK(std::abs(r) < 0.01);
  CHECK_THAT(s0 / nn, WithinAbs(std::log(mu[0]), 4 * std::sqrt(sigma(0, 0) / nn)));
}

TEST_CASE("multivariate samplers are deterministic given the seed") {
  const Eigen::VectorXd pi = evec({0.5, 0.3, 0.2});
  const Eigen::MatrixXd sigma = ar1_covariance({evec({0.4, 0.7}), 0.5});
  for (Family f : {Family::M7, Family::M8, Family::M9}) {
    std::mt19937_64 r1(7), r2(7);
    Eigen::VectorXd mu_or_pi = (f == Family::M7) ? evec({2.0, 1.0}) : pi;
    Eigen::MatrixXd s = (f == Family::M7) ? ar1_covariance({evec({0.4, 0.7}), 0.5}) : sigma;
    CHECK(sample_mv(f, mu_or_pi, s, r1) == sample_mv(f, mu_or_pi, s, r2));
  }
  std::mt19937_64 r1(7), r2(7);
  CHECK(sample_mv(Family::M10, pi, 4.0, r1) == sample_mv(Family::M10, pi, 4.0, r2));
}

TEST_CASE("densities are invariant under consistent age permutation") {
  std::mt19937_64 rng(5);

  SECTION("multivariate log-normal, any scale, ages relabeled everywhere") {
    const int n = 4;
    Eigen::VectorXd x = random_positive(n, rng);
    Eigen::VectorXd mu = random_positive(n, rng);
    Eigen::MatrixXd sigma = random_spd(n, rng);
    double base = logpdf_mvlognormal(x, mu, sigma);
    std::vector<int> perm = {2, 0, 3, 1};
    Eigen::VectorXd px(n), pmu(n);
    Eigen::MatrixXd psigma(n, n);
    for (int i = 0; i < n; ++i) {
      px[i] = x[perm[i]];
      pmu[i] = mu[perm[i]];
      for (int j = 0; j < n; ++j) psigma(i, j) = sigma(perm[i], perm[j]);
    }
    CHECK_THAT(logpdf_mvlognormal(px, pmu, psigma), WithinAbs(base, 1e-10));
  }

  SECTION("additive logistic normal, permutations fixing the reference age") {
    const int a = 4;
    Eigen::VectorXd p = random_simplex(a, rng);
    Eigen::VectorXd pi = random_simplex(a, rng);
    Eigen::MatrixXd sigma = random_spd(a - 1, rng);
    double base = logpdf_composition(Family::M8, p, pi, sigma);
    std::vector<int> perm = {1, 2, 0, 3};
    Eigen::VectorXd pp(a), ppi(a);
    Eigen::MatrixXd psigma(a - 1, a - 1);
    for (int i = 0; i < a; ++i) {
      pp[i] = p[perm[i]];
      ppi[i] = pi[perm[i]];
    }
    for (int i = 0; i < a - 1; ++i)
      for (int j = 0; j < a - 1; ++j) psigma(i, j) = sigma(perm[i], perm[j]);
    CHECK_THAT(logpdf_composition(Family::M8, pp, ppi, psigma), WithinAbs(base, 1e-10));
  }

  SECTION("Dirichlet, any permutation") {
    const int a = 5;
    Eigen::VectorXd p = random_simplex(a, rng);
    Eigen::VectorXd pi = random_simplex(a, rng);
    double base = logpdf_composition(Family::M10, p, pi, 3.7);
    Eigen::VectorXd pp(a), ppi(a);
    for (int i = 0; i < a; ++i) {
      pp[i] = p[a - 1 - i];
      ppi[i] = pi[a - 1 - i];
    }
    CHECK_THAT(logpdf_composition(Family::M10, pp, ppi, 3.7), WithinAbs(base, 1e-12));
  }
}

TEST_CASE("multivariate derivatives agree with finite differences") {
  using stocklik::ad::D2;

  SECTION("AR(1) Gaussian core") {
    // Variables: z (3), sds (3), rho. Data-free, so every argument moves.
    const std::vector<double> z0 = {0.4, -0.2, 0.7};
    const std::vector<double> s0 = {0.5, 0.8, 0.6};
    const double rho0 = 0.35;
    auto fd = [&](const std::vector<double>& dz, const std::vector<double>& ds, double dr) {
      std::vector<double> z(3), s(3);
      for (int i = 0; i < 3; ++i) {
        z[i] = z0[i] + dz[i];
        s[i] = s0[i] + ds[i];
      }
      return logpdf_gauss_ar1(z, s, rho0 + dr);
    };
    std::vector<D2> z, s;
    for (int i = 0; i < 3; ++i) z.push_back(D2::variable(z0[i], i));
    for (int i = 0; i < 3; ++i) s.push_back(D2::variable(s0[i], 3 + i));
    D2 rho = D2::variable(rho0, 6);
    D2 y = logpdf_gauss_ar1(z, s, rho);
    CHECK_THAT(y.value(), WithinAbs(fd({0, 0, 0}, {0, 0, 0}, 0.0), 1e-14));

    const double h = 1e-5;
    for (int k = 0; k < 7; ++k) {
      std::vector<double> dz(3, 0.0), ds(3, 0.0);
      double dr = 0.0;
      auto bump = [&](double step) {
        if (k < 3)
          dz[k] = step;
        else if (k < 6)
          ds[k - 3] = step;
        else
          dr = step;
      };
      bump(h);
      double up = fd(dz, ds, dr);
      bump(-h);
      double down = fd(dz, ds, dr);
      bump(0.0);
      CAPTURE(k);
      CHECK_THAT(y.grad(k), WithinAbs((up - down) / (2 * h), 1e-6));
      double mid = fd(dz, ds, dr);
      CHECK_THAT(y.hess(k, k), WithinAbs((up - 2 * mid + down) / (h * h), 2e-4));
    }
    // One mixed second derivative: d2/dz1 drho.
    auto fd2 = [&](double dz1, double dr) {
      return fd({0, dz1, 0}, {0, 0, 0}, dr);
    };
    double mixed =
        (fd2(h, h) - fd2(h, -h) - fd2(-h, h) + fd2(-h, -h)) / (4 * h * h);
    CHECK_THAT(y.hess(6, 1), WithinAbs(mixed, 2e-4));
  }

  SECTION("logistic normals in predictions and scale parameters") {
    const std::vector<double> p = {0.25, 0.35, 0.4};
    const std::vector<double> pred0 = {2.0, 2.5, 3.5};
    const std::vector<double> s0 = {0.5, 0.8};
    const double rho0 = -0.25;
    for (Family f : {Family::M8, Family::M9}) {
      CAPTURE(family_code(f));
      auto fd = [&](int k, double step) {
        std::vector<double> pred(pred0), s(s0);
        double rho = rho0;
        if (k < 3)
          pred[static_cast<std::size_t>(k)] += step;
        else if (k < 5)
          s[static_cast<std::size_t>(k - 3)] += step;
        else
          rho += step;
        return logpdf_composition_ar1(f, p, pred, s, rho);
      };
      std::vector<D2> pred, s;
      for (int i = 0; i < 3; ++i) pred.push_back(D2::variable(pred0[i], i));
      for (int i = 0; i < 2; ++i) s.push_back(D2::variable(s0[i], 3 + i));
      D2 rho = D2::variable(rho0, 5);
      D2 y = logpdf_composition_ar1(f, p, pred, s, rho);
      CHECK_THAT(y.value(), WithinAbs(fd(0, 0.0), 1e-14));
      const double h = 1e-5;
      for (int k = 0; k < 6; ++k) {
        CAPTURE(k);
        CHECK_THAT(y.grad(k), WithinAbs((fd(k, h) - fd(k, -h)) / (2 * h), 1e-6));
        CHECK_THAT(y.hess(k, k),
                   WithinAbs((fd(k, h) - 2 * fd(k, 0.0) + fd(k, -h)) / (h * h), 2e-4));
      }
    }
  }

  SECTION("Dirichlet in predictions and concentration") {
    const std::vector<double> p = {0.25, 0.35, 0.4};
    const std::vector<double> pred0 = {2.0, 2.5, 3.5};
    const double conc0 = 6.0;
    auto fd = [&](int k, double step) {
      std::vector<double> pred(pred0);
      double conc = conc0;
      if (k < 3)
        pred[static_cast<std::size_t>(k)] += step;
      else
        conc += step;
      return logpdf_dirichlet(p, pred, conc);
    };
    std::vector<D2> pred;
    for (int i = 0; i < 3; ++i) pred.push_back(D2::variable(pred0[i], i));
    D2 conc = D2::variable(conc0, 3);
    D2 y = logpdf_dirichlet(p, pred, conc);
    const double h = 1e-5;
    for (int k = 0; k < 4; ++k) {
      CAPTURE(k);
      CHECK_THAT(y.grad(k), WithinAbs((fd(k, h) - fd(k, -h)) / (2 * h), 1e-6));
      CHECK_THAT(y.hess(k, k),
                 WithinAbs((fd(k, h) - 2 * fd(k, 0.0) + fd(k, -h)) / (h * h), 2e-4));
    }
  }
}

TEST_CASE("AR(1) density trace propagation matches contracted Hessians") {
  using stocklik::ad::D2;
  using stocklik::ad::D2T;
  using stocklik::ad::TraceWeights;

  // Treat the residuals as inner variables (the weighted prefix) and the
  // scale parameters as outer ones, as the marginal likelihood does.
  const std::vector<double> z0 = {0.4, -0.2, 0.7};
  const std::vector<double> s0 = {0.5, 0.8, 0.6};
  const double rho0 = 0.35;
  const double w[9] = {1.1, 0.2, -0.3, 0.2, 0.9, 0.4, -0.3, 0.4, 1.4};
  TraceWeights tw{3, w};

  auto eval_plain = [&](const std::vector<double>& z, const std::vector<double>& s, double r) {
    std::vector<D2> zd, sd;
    for (int i = 0; i < 3; ++i) zd.push_back(D2::variable(z[i], i));
    for (int i = 0; i < 3; ++i) sd.push_back(D2::variable(s[i], 3 + i));
    return logpdf_gauss_ar1(zd, sd, D2::variable(r, 6));
  };
  auto contracted = [&](const std::vector<double>& z, const std::vector<double>& s, double r) {
    D2 y = eval_plain(z, s, r);
    double t = 0.0;
    for (int p = 0; p < 3; ++p)
      for (int q = 0; q < 3; ++q) t += tw.at(p, q) * y.hess(p, q);
    return t;
  };

  std::vector<D2T> z, s;
  for (int i = 0; i < 3; ++i) z.push_back(D2T::variable(z0[i], i, &tw));
  for (int i = 0; i < 3; ++i) s.push_back(D2T::variable(s0[i], 3 + i, &tw));
  D2T y = logpdf_gauss_ar1(z, s, D2T::variable(rho0, 6, &tw));

  D2 plain = eval_plain(z0, s0, rho0);
  CHECK_THAT(y.value(), WithinAbs(plain.value(), 1e-13));
  for (int k = 0; k < 7; ++k) CHECK_THAT(y.grad(k), WithinAbs(plain.grad(k), 1e-13));
  CHECK_THAT(y.trace(), WithinAbs(contracted(z0, s0, rho0), 1e-11));

  const double h = 1e-5;
  for (int k = 0; k < 7; ++k) {
    std::vector<double> zu(z0), zd(z0), su(s0), sd(s0);
    double ru = rho0, rd = rho0;
    if (k < 3) {
      zu[k] += h;
      zd[k] -= h;
    } else if (k < 6) {
      su[k - 3] += h;
      sd[k - 3] -= h;
    } else {
      ru += h;
      rd -= h;
    }
    double fd = (contracted(zu, su, ru) - contracted(zd, sd, rd)) / (2 * h);
    CAPTURE(k);
    CHECK_THAT(y.trace_grad(k), WithinAbs(fd, 1e-4));
  }
}
