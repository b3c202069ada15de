#include "ivs/interpolation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "ivs/errors.hpp"

namespace ivs {

DfwCoeffs fit_dfw(std::span<const SurfacePoint> points) {
  const auto n = static_cast<Eigen::Index>(points.size());
  if (n < 6) throw FitError("fit_dfw: need at least 6 points, got " + std::to_string(n));

  std::vector<SurfacePoint> sorted(points.begin(), points.end());
  std::sort(sorted.begin(), sorted.end(), [](const SurfacePoint& x, const SurfacePoint& y) {
    if (x.m != y.m) return x.m < y.m;
    if (x.tau != y.tau) return x.tau < y.tau;
    return x.vol < y.vol;
  });

  Eigen::MatrixXd design(n, 6);
  Eigen::VectorXd vols(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = sorted[static_cast<std::size_t>(i)];
    design.row(i) << 1.0, p.m, p.tau, p.m * p.m, p.tau * p.tau, p.m * p.tau;
    vols(i) = p.vol;
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-12);
  if (qr.rank() < 6) throw FitError("fit_dfw: rank-deficient design");
  const Eigen::VectorXd sol = qr.solve(vols);

  DfwCoeffs c;
  for (int k = 0; k < 6; ++k) c.a[static_cast<std::size_t>(k)] = sol(k);
  c.n_points = static_cast<int>(n);
  double sse = 0.0;
  for (const auto& p : sorted) {
    const double e = eval_dfw(c, p.m, p.tau) - p.vol;
    sse += e * e;
  }
  c.rmse = std::sqrt(sse / static_cast<double>(n));
  return c;
}

double dfw_polynomial(const DfwCoeffs& c, double m, double tau) {
  const auto& a = c.a;
  return a[0] + a[1] * m + a[2] * tau + a[3] * m * m + a[4] * tau * tau + a[5] * m * tau;
}

double eval_dfw(const DfwCoeffs& c, double m, double tau) {
  return std::max(kDfwFloor, dfw_polynomial(c, m, tau));
}

LocalDerivs<double> dfw_derivs(const DfwCoeffs& c, double m, double tau) {
  const double poly = dfw_polynomial(c, m, tau);
  if (poly < kDfwFloor) return {kDfwFloor, 0.0, 0.0, 0.0};
  const auto& a = c.a;
  return {poly, a[2] + 2.0 * a[4] * tau + a[5] * m, a[1] + 2.0 * a[3] * m + a[5] * tau,
          2.0 * a[3]};
}

NwEstimate nw_estimate(std::span<const SurfacePoint> points, double m, double tau,
                       const Bandwidths& bw) {
  if (points.empty()) throw DataError("nw_estimate: empty snapshot");
  if (!(bw.h_m > 0.0) || !(bw.h_tau > 0.0)) throw ConfigError("nw_estimate: bandwidths must be > 0");

  // The kernel's 1/(2 pi) factor cancels in the ratio.
  double num = 0.0;
  double den = 0.0;
  for (const auto& p : points) {
    const double dx = m - p.m;
    const double dy = tau - p.tau;
    const double w = std::exp(-dx * dx / (2.0 * bw.h_m)) * std::exp(-dy * dy / (2.0 * bw.h_tau));
    num += w * p.vol;
    den += w;
  }
  if (den > 0.0) return {num / den, false};

  // Every weight underflowed: fall back to the nearest point in the kernel metric.
  double best = std::numeric_limits<double>::infinity();
  double vol = points.front().vol;
  for (const auto& p : points) {
    const double dx = m - p.m;
    const double dy = tau - p.tau;
    const double dist = dx * dx / bw.h_m + dy * dy / bw.h_tau;
    if (dist < best) {
      best = dist;
      vol = p.vol;
    }
  }
  return {vol, true};
}

std::vector<Bandwidths> default_bandwidth_grid() {
  static constexpr std::array<double, 6> levels = {1e-4, 5e-4, 1e-3, 5e-3, 1e-2, 5e-2};
  std::vector<Bandwidths> grid;
  for (double h1 : levels) {
    for (double h2 : levels) grid.push_back({h1, h2});
  }
  return grid;
}

std::vector<int> assign_folds(std::size_t n, int n_folds, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> fold(n);
  for (std::size_t i = 0; i < n; ++i) fold[order[i]] = static_cast<int>(i % static_cast<std::size_t>(n_folds));
  return fold;
}

double nw_cv_error(std::span<const SurfacePoint> points, std::span<const int> fold, int n_folds,
                   const Bandwidths& bw) {
  double total = 0.0;
  for (int k = 0; k < n_folds; ++k) {
    std::vector<SurfacePoint> train;
    std::vector<SurfacePoint> held;
    for (std::size_t i = 0; i < points.size(); ++i) {
      (fold[i] == k ? held : train).push_back(points[i]);
    }
    double sse = 0.0;
    for (const auto& p : held) {
      const double e = nw_estimate(train, p.m, p.tau, bw).vol - p.vol;
      sse += e * e;
    }
    total += held.empty() ? 0.0 : sse / static_cast<double>(held.size());
  }
  return total / n_folds;
}

Bandwidths nw_select_bandwidths(std::span<const SurfacePoint> points,
                                std::span<const Bandwidths> candidates, std::uint64_t seed) {
  if (candidates.empty()) throw ConfigError("nw_select_bandwidths: empty candidate grid");
  if (points.size() < 10) throw DataError("nw_select_bandwidths: need at least 10 points");
  constexpr int n_folds = 5;
  const auto fold = assign_folds(points.size(), n_folds, seed);

  Bandwidths best = candidates.front();
  double best_err = std::numeric_limits<double>::infinity();
  for (const auto& bw : candidates) {
    const double err = nw_cv_error(points, fold, n_folds, bw);
    const bool better = err < best_err ||
                        (err == best_err && bw.h_m + bw.h_tau < best.h_m + best.h_tau);
    if (better) {
      best = bw;
      best_err = err;
    }
  }
  return best;
}

}  // namespace ivs
