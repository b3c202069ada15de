#include "ivs/core_surface.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>

namespace ivs {

namespace {

void check_point(const MarketPoint& p) {
  if (!std::isfinite(p.forward) || !std::isfinite(p.strike) || !std::isfinite(p.tau) ||
      !std::isfinite(p.rate) || !std::isfinite(p.div_yield)) {
    throw DomainError("market point has non-finite fields");
  }
  if (!(p.forward > 0.0) || !(p.strike > 0.0) || !(p.tau > 0.0)) {
    throw DomainError("market point requires F > 0, K > 0, tau > 0");
  }
}

}  // namespace

double norm_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double norm_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("norm_quantile: p must lie in (0, 1)");

  // Acklam's rational approximation (relative error ~1.2e-9) ...
  static constexpr std::array<double, 6> a = {-3.969683028665376e+01, 2.209460984245205e+02,
                                              -2.759285104469687e+02, 1.383577518672690e+02,
                                              -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr std::array<double, 5> b = {-5.447609879822406e+01, 1.615858368580409e+02,
                                              -1.556989798598866e+02, 6.680131188771972e+01,
                                              -1.328068155288572e+01};
  static constexpr std::array<double, 6> c = {-7.784894002430293e-03, -3.223964580411365e-01,
                                              -2.400758277161838e+00, -2.549732539343734e+00,
                                              4.374664141464968e+00, 2.938163982698783e+00};
  static constexpr std::array<double, 4> d = {7.784695709041462e-03, 3.224671290700398e-01,
                                              2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  // ... then Halley refinement against the erfc-based CDF. The residual is
  // formed on the smaller tail so it keeps full relative precision.
  for (int it = 0; it < 2; ++it) {
    double e;
    if (x < 0.0) {
      e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
    } else {
      e = (1.0 - p) - 0.5 * std::erfc(x / std::numbers::sqrt2);
    }
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
    x = x - u / (1.0 + 0.5 * x * u);
  }
  return x;
}

double bs_call_price(const MarketPoint& p, double vol) {
  check_point(p);
  if (!std::isfinite(vol)) throw DomainError("bs_call_price: non-finite vol");
  if (vol < 0.0) throw DomainError("bs_call_price: negative vol");
  const double disc = std::exp(-p.rate * p.tau);
  if (vol == 0.0) return disc * std::max(p.forward - p.strike, 0.0);

  const double sd = vol * std::sqrt(p.tau);
  const double m = log_moneyness(p);
  const double d1 = (-m + 0.5 * sd * sd) / sd;
  const double d2 = d1 - sd;
  return disc * (p.forward * norm_cdf(d1) - p.strike * norm_cdf(d2));
}

double bs_vega(const MarketPoint& p, double vol) {
  check_point(p);
  if (!(vol > 0.0)) return 0.0;
  const double sqrt_tau = std::sqrt(p.tau);
  const double sd = vol * sqrt_tau;
  const double d1 = (-log_moneyness(p) + 0.5 * sd * sd) / sd;
  return std::exp(-p.rate * p.tau) * p.forward * norm_pdf(d1) * sqrt_tau;
}

double implied_vol(const MarketPoint& p, double price, const ImpliedVolOptions& opts) {
  check_point(p);
  if (!std::isfinite(price)) throw DomainError("implied_vol: non-finite price");
  const double disc = std::exp(-p.rate * p.tau);
  const double lower = disc * std::max(p.forward - p.strike, 0.0);
  const double upper = disc * p.forward;
  if (!(price > lower && price < upper)) {
    throw BoundsError("implied_vol: price outside the no-arbitrage bounds (" +
                      std::to_string(lower) + ", " + std::to_string(upper) + ")");
  }

  double lo = opts.vol_lo;
  double hi = opts.vol_hi;
  const double f_lo = bs_call_price(p, lo) - price;
  const double f_hi = bs_call_price(p, hi) - price;
  if (f_lo > 0.0 || f_hi < 0.0) {
    if (std::abs(f_lo) <= opts.price_tol) return lo;
    if (std::abs(f_hi) <= opts.price_tol) return hi;
    throw SolverError("implied_vol: root not bracketed by [" + std::to_string(lo) + ", " +
                          std::to_string(hi) + "]",
                      0);
  }

  // Start at the inflection point of the price in vol, from which plain
  // Newton converges monotonically.
  const double m = log_moneyness(p);
  double vol = std::sqrt(2.0 * std::abs(m) / p.tau);
  if (!(vol > lo && vol < hi)) vol = std::clamp(0.2, lo, hi);

  for (int it = 1; it <= opts.max_iterations; ++it) {
    const double f = bs_call_price(p, vol) - price;
    if (f == 0.0) return vol;
    if (f > 0.0) {
      hi = vol;
    } else {
      lo = vol;
    }
    const double vega = bs_vega(p, vol);
    double next = vega > 0.0 ? vol - f / vega : std::numeric_limits<double>::quiet_NaN();
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);

    const double step = std::abs(next - vol);
    if (std::abs(f) <= opts.price_tol &&
        (step <= 1e-13 * std::max(vol, 1.0) || hi - lo <= 1e-15 * hi)) {
      return next;
    }
    if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * hi) return 0.5 * (lo + hi);
    vol = next;
  }
  throw SolverError("implied_vol: no convergence", opts.max_iterations);
}

double delta_to_moneyness(double delta, double vol, double tau, double div_yield) {
  if (!std::isfinite(delta) || !std::isfinite(vol) || !std::isfinite(tau) ||
      !std::isfinite(div_yield)) {
    throw DomainError("delta_to_moneyness: non-finite input");
  }
  const double x = std::exp(div_yield * tau) * delta;
  if (!(x > 0.0 && x < 1.0)) throw DomainError("delta_to_moneyness: e^{q tau} delta outside (0, 1)");
  const double sd = vol * std::sqrt(tau);
  return 0.5 * sd * sd - sd * norm_quantile(x);
}

double moneyness_to_delta(double m, double vol, double tau, double div_yield) {
  const double sd = vol * std::sqrt(tau);
  const double d1 = (-m + 0.5 * sd * sd) / sd;
  return std::exp(-div_yield * tau) * norm_cdf(d1);
}

}  // namespace ivs
