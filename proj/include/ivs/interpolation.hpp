#pragma once

// Single-day surface interpolation: the quadratic DFW model with its 0.01
// floor, and a Nadaraya-Watson smoother with cross-validated bandwidths.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "ivs/core_surface.hpp"

namespace ivs {

inline constexpr double kDfwFloor = 0.01;

struct DfwCoeffs {
  std::array<double, 6> a{};  // 1, m, tau, m^2, tau^2, m tau
  double rmse = 0.0;          // in-sample, floor applied
  int n_points = 0;
};

/// OLS fit of vol on {1, m, tau, m^2, tau^2, m tau}. Points are put in a
/// canonical order first, so the result does not depend on input order.
DfwCoeffs fit_dfw(std::span<const SurfacePoint> points);

double dfw_polynomial(const DfwCoeffs& c, double m, double tau);
double eval_dfw(const DfwCoeffs& c, double m, double tau);
/// Analytic derivatives; zero wherever the floor is active.
LocalDerivs<double> dfw_derivs(const DfwCoeffs& c, double m, double tau);

struct Bandwidths {
  double h_m = 1e-2;    // moneyness^2 units
  double h_tau = 1e-2;  // years^2 units
};

struct NwEstimate {
  double vol = 0.0;
  bool nearest_fallback = false;
};

NwEstimate nw_estimate(std::span<const SurfacePoint> points, double m, double tau,
                       const Bandwidths& bw);

std::vector<Bandwidths> default_bandwidth_grid();

/// Mean over folds of the held-out MSE; fold[i] in [0, n_folds) labels point i.
double nw_cv_error(std::span<const SurfacePoint> points, std::span<const int> fold, int n_folds,
                   const Bandwidths& bw);

/// Seeded shuffle into n_folds near-equal folds.
std::vector<int> assign_folds(std::size_t n, int n_folds, std::uint64_t seed);

/// Picks the candidate minimizing 5-fold CV error; ties go to the smaller h_m + h_tau.
Bandwidths nw_select_bandwidths(std::span<const SurfacePoint> points,
                                std::span<const Bandwidths> candidates, std::uint64_t seed = 0);

}  // namespace ivs
