#pragma once

// Black-Scholes pricing, implied-volatility inversion, quoting-coordinate
// conversion and the pointwise static-arbitrage evaluators.
//
// The evaluators are templates on the scalar type so the same expression
// serves single points (double) and whole grids (Eigen::ArrayXd).

#include <cmath>

#include "ivs/errors.hpp"

namespace ivs {

struct MarketPoint {
  double forward = 1.0;
  double strike = 1.0;
  double tau = 1.0;
  double rate = 0.0;
  double div_yield = 0.0;
};

struct SurfacePoint {
  double m = 0.0;
  double tau = 1.0;
  double vol = 0.2;
};

/// Implied vol and its (m, tau) derivatives at one point.
template <typename Scalar>
struct LocalDerivs {
  Scalar vol;
  Scalar d_tau;
  Scalar d_m;
  Scalar d_mm;
};

double norm_pdf(double x);
double norm_cdf(double x);
/// Inverse of norm_cdf on (0, 1), accurate to ~1e-15.
double norm_quantile(double p);

/// Log-forward moneyness ln(K/F).
inline double log_moneyness(const MarketPoint& p) { return std::log(p.strike / p.forward); }

double bs_call_price(const MarketPoint& p, double vol);
double bs_vega(const MarketPoint& p, double vol);

struct ImpliedVolOptions {
  double vol_lo = 1e-4;
  double vol_hi = 5.0;
  double price_tol = 1e-10;
  int max_iterations = 100;
};

/// Safeguarded Newton inside a bisection bracket.
double implied_vol(const MarketPoint& p, double price, const ImpliedVolOptions& opts = {});

/// Converts a Black-Scholes call delta e^{-q tau} N(d1) to log-forward moneyness.
double delta_to_moneyness(double delta, double vol, double tau, double div_yield);
/// Call delta of a point given in log-forward moneyness.
double moneyness_to_delta(double m, double vol, double tau, double div_yield);

namespace detail {
template <typename T>
inline auto sq(const T& x) {
  return x * x;
}
}  // namespace detail

/// Calendar-spread condition sigma + 2 tau d_tau sigma; negative values signal arbitrage.
template <typename Scalar>
inline Scalar ell_cal(const LocalDerivs<Scalar>& d, const Scalar& tau) {
  return d.vol + 2.0 * tau * d.d_tau;
}

/// Durrleman's butterfly condition written in implied-vol coordinates.
template <typename Scalar>
inline Scalar ell_but(const LocalDerivs<Scalar>& d, const Scalar& m, const Scalar& tau) {
  using detail::sq;
  return sq(1.0 - m * d.d_m / d.vol) - sq(d.vol * tau * d.d_m) / 4.0 + tau * d.vol * d.d_mm;
}

inline double ell_but(const LocalDerivs<double>& d, double m, double tau) {
  if (!(d.vol > 0.0)) throw DomainError("ell_but: vol must be positive");
  return ell_but<double>(d, m, tau);
}

/// |d_mm (sigma^2) / 2| = |sigma sigma_mm + sigma_m^2|, which must vanish for large |m|.
template <typename Scalar>
inline Scalar large_m_term(const LocalDerivs<Scalar>& d) {
  using std::abs;
  return abs(d.vol * d.d_mm + d.d_m * d.d_m);
}

}  // namespace ivs
