#include <doctest.h>

#include <cmath>
#include <Eigen/Dense>
#include <numbers>

#include "ivs/core_surface.hpp"

using namespace ivs;

namespace {

// Independent CDF oracle: Simpson integration of the density from 0.
double cdf_by_quadrature(double x) {
  const int n = 20000;
  const double h = x / n;
  double s = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double t = i * h;
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    s += w * std::exp(-0.5 * t * t);
  }
  return 0.5 + s * h / 3.0 / std::sqrt(2.0 * std::numbers::pi);
}

}  // namespace

TEST_CASE("normal cdf and quantile") {
  for (double x : {-3.0, -1.0, -0.25, 0.0, 0.7, 2.0, 4.0}) {
    CHECK(norm_cdf(x) == doctest::Approx(cdf_by_quadrature(x)).epsilon(1e-13));
  }
  for (double p : {1e-12, 1e-6, 0.01, 0.2, 0.5, 0.77, 0.975, 1 - 1e-9}) {
    const double x = norm_quantile(p);
    CHECK(std::abs(norm_cdf(x) - p) <= 1e-15 + 1e-13 * p);
  }
  CHECK(norm_quantile(0.5) == 0.0);
  CHECK_THROWS_AS(norm_quantile(0.0), DomainError);
  CHECK_THROWS_AS(norm_quantile(1.0), DomainError);
}

TEST_CASE("bs_call_price limits and formula") {
  CHECK(bs_call_price({100, 100, 1, 0, 0}, 0.0) == 0.0);
  CHECK(bs_call_price({100, 1e-12, 1, 0, 0}, 0.2) == doctest::Approx(100.0).epsilon(1e-12));
  // ATM forward: C = F (2 N(sd/2) - 1)
  const double oracle = 100.0 * (2.0 * cdf_by_quadrature(0.1) - 1.0);
  CHECK(bs_call_price({100, 100, 1, 0, 0}, 0.2) == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(bs_call_price({100, 120, 1, 0.05, 0}, 0.0) == 0.0);
  CHECK(bs_call_price({100, 80, 2, 0.05, 0}, 0.0) == doctest::Approx(20.0 * std::exp(-0.1)));
  CHECK_THROWS_AS(bs_call_price({100, 100, 1, 0, 0}, NAN), DomainError);
  CHECK_THROWS_AS(bs_call_price({-1, 100, 1, 0, 0}, 0.2), DomainError);
}

TEST_CASE("bs_call_price is increasing in vol") {
  for (double k : {60.0, 100.0, 150.0}) {
    double prev = -1.0;
    for (int i = 1; i <= 60; ++i) {
      const double c = bs_call_price({100, k, 0.5, 0.01, 0}, 0.05 * i);
      CHECK(c > prev);
      prev = c;
    }
  }
}

TEST_CASE("implied_vol round trip and bounds") {
  const MarketPoint p{100, 100, 1, 0, 0};
  CHECK(implied_vol(p, bs_call_price(p, 0.2)) == doctest::Approx(0.2).epsilon(1e-8));
  CHECK_THROWS_AS(implied_vol(p, 100.0 + 1e-6), BoundsError);
  CHECK_THROWS_AS(implied_vol(p, 0.0), BoundsError);

  for (double vol : {0.05, 0.3, 1.0, 2.5}) {
    for (double m : {-0.3, 0.0, 0.2, 0.5}) {
      for (double tau : {0.25, 1.0, 2.0}) {
        const MarketPoint q{100, 100 * std::exp(m), tau, 0.02, 0};
        const double price = bs_call_price(q, vol);
        const double lower = std::exp(-0.02 * tau) * std::max(100 - q.strike, 0.0);
        // Only points where the price carries the vol information.
        if (bs_vega(q, vol) * 1e-8 < 1e-12 * std::max(price, 1.0) || price - lower < 1e-9) continue;
        CHECK(implied_vol(q, price) == doctest::Approx(vol).epsilon(1e-8));
      }
    }
  }
}

TEST_CASE("delta_to_moneyness") {
  CHECK(delta_to_moneyness(0.5, 0.2, 1.0, 0.0) == doctest::Approx(0.02).epsilon(1e-15));
  CHECK(delta_to_moneyness(0.5, 0.3, 0.25, 0.0) == doctest::Approx(0.01125).epsilon(1e-15));
  CHECK_THROWS_AS(delta_to_moneyness(1.2, 0.2, 1.0, 0.0), DomainError);
  CHECK_THROWS_AS(delta_to_moneyness(0.99, 0.2, 1.0, 0.05), DomainError);
  for (double m : {-0.4, -0.1, 0.0, 0.15, 0.5}) {
    for (double q : {0.0, 0.02}) {
      const double d = moneyness_to_delta(m, 0.25, 0.7, q);
      CHECK(std::abs(delta_to_moneyness(d, 0.25, 0.7, q) - m) < 1e-10);
    }
  }
}

TEST_CASE("no-arbitrage evaluators") {
  const LocalDerivs<double> flat{0.2, 0.0, 0.0, 0.0};
  CHECK(ell_cal(flat, 1.3) == 0.2);
  CHECK(ell_but(flat, 0.4, 1.3) == 1.0);
  CHECK(large_m_term(flat) == 0.0);

  // sigma = c tau^{-1/2}: constant total variance
  const double c = 0.3;
  for (double tau : {0.1, 1.0, 3.0}) {
    const LocalDerivs<double> d{c / std::sqrt(tau), -0.5 * c * std::pow(tau, -1.5), 0.0, 0.0};
    CHECK(std::abs(ell_cal(d, tau)) < 1e-12);
  }
  CHECK(ell_cal(LocalDerivs<double>{0.2 - 0.3, -0.3, 0, 0}, 1.0) == doctest::Approx(-0.7));
  CHECK(ell_but(LocalDerivs<double>{0.2, 0, 0.1, 0}, 0.0, 1.0) == doctest::Approx(0.9999).epsilon(1e-14));
  CHECK(ell_but(LocalDerivs<double>{0.2, 0, 0, -30}, 0.0, 1.0) == doctest::Approx(-5.0));
  CHECK(large_m_term(LocalDerivs<double>{0.2, 0, 0.1, 0.5}) == doctest::Approx(0.11));
  CHECK_THROWS_AS(ell_but(LocalDerivs<double>{0.0, 0, 0, 0}, 0.0, 1.0), DomainError);

  // sigma^2 = a + b m: sigma sigma_mm + sigma_m^2 = 0
  const double a = 0.04, b = 0.01, m = 0.3;
  const double s = std::sqrt(a + b * m);
  const LocalDerivs<double> lin{s, 0.0, b / (2 * s), -b * b / (4 * s * s * s)};
  CHECK(large_m_term(lin) < 1e-15);

  // Array form agrees with the scalar form.
  Eigen::ArrayXd vol(2), dt(2), dm(2), dmm(2), mm(2), tt(2);
  vol << 0.2, 0.3;
  dt << -0.1, 0.05;
  dm << 0.1, -0.2;
  dmm << 0.5, 1.0;
  mm << 0.1, -0.2;
  tt << 0.5, 1.5;
  const LocalDerivs<Eigen::ArrayXd> arr{vol, dt, dm, dmm};
  const Eigen::ArrayXd but = ell_but(arr, mm, tt);
  const Eigen::ArrayXd cal = ell_cal(arr, tt);
  for (int i = 0; i < 2; ++i) {
    const LocalDerivs<double> one{vol[i], dt[i], dm[i], dmm[i]};
    CHECK(but[i] == ell_but(one, mm[i], tt[i]));
    CHECK(cal[i] == ell_cal(one, tt[i]));
  }
}
