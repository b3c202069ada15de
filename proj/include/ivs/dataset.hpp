#pragma once

// Quote ingestion, resampling onto the fixed (m, tau) grid, chronological
// splitting, and the synthetic SSVI panel generator.

#include <Eigen/Dense>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "ivs/snapshot.hpp"

namespace ivs {

struct FixedGrid {
  std::vector<double> m;    // strictly increasing
  std::vector<double> tau;  // strictly increasing, years

  std::size_t size() const { return m.size() * tau.size(); }
  /// Flat index of node (i, j); moneyness-major.
  std::size_t index(std::size_t i, std::size_t j) const { return i * tau.size() + j; }
  SurfacePoint node(std::size_t k, double vol = 0.0) const {
    return {m[k / tau.size()], tau[k % tau.size()], vol};
  }
  void validate() const;

  friend bool operator==(const FixedGrid&, const FixedGrid&) = default;
};

/// The 14 x 11 grid: m = log{0.6, ..., 2}, tau = {10, ..., 730} / 365.
FixedGrid default_grid();

struct GriddedSurface {
  std::string date;
  Eigen::VectorXd vols;  // FixedGrid::index order

  double at(const FixedGrid& g, std::size_t i, std::size_t j) const {
    return vols(static_cast<Eigen::Index>(g.index(i, j)));
  }
};

/// DFW fit of the snapshot evaluated on every grid node.
GriddedSurface resample_to_grid(const SurfaceSnapshot& snapshot, const FixedGrid& grid);

// Quote CSV: date,coord_kind,coord1,tau_days,iv,rate,div_yield
std::vector<SurfaceSnapshot> load_quotes(std::istream& in);
std::vector<SurfaceSnapshot> load_quotes(const std::filesystem::path& path);
void write_quotes(std::ostream& out, const std::vector<SurfaceSnapshot>& snapshots);
void write_quotes(const std::filesystem::path& path, const std::vector<SurfaceSnapshot>& snapshots);

/// Moneyness of one quote row; put deltas are negative and are mapped to
/// the call delta with the same strike.
double quote_moneyness(const QuoteSource& q, double vol);

/// Snapshots with their resampled grids, in date order.
struct Panel {
  FixedGrid grid;
  std::vector<SurfaceSnapshot> snapshots;
  std::vector<GriddedSurface> surfaces;

  std::size_t days() const { return snapshots.size(); }
  /// Days [begin, end) as a new panel.
  Panel slice(std::size_t begin, std::size_t end) const;
};

Panel build_panel(std::vector<SurfaceSnapshot> snapshots, const FixedGrid& grid);

struct PanelSplit {
  Panel train;
  Panel test;
};

inline constexpr double kDefaultSplitRatio = 0.79;

/// Training days are those dated on or before split_date.
PanelSplit split_panel(const Panel& panel, const std::string& split_date);
/// Training gets the first floor(ratio * days) days.
PanelSplit split_panel_ratio(const Panel& panel, double ratio = kDefaultSplitRatio);

/// Gridded values with their grid levels and dates, in the model container format.
void save_panel_cache(const std::filesystem::path& path, const FixedGrid& grid,
                      const std::vector<GriddedSurface>& surfaces);
std::vector<GriddedSurface> load_panel_cache(const std::filesystem::path& path, const FixedGrid& expected);

// Synthetic data ---------------------------------------------------------

/// Power-law SSVI: w(k, tau) = theta/2 (1 + rho phi k + sqrt((phi k + rho)^2 + 1 - rho^2)),
/// phi = eta theta^-gamma (1 + theta)^(gamma - 1), and an ATM variance curve
/// theta(tau) = s_inf^2 tau + (s0^2 - s_inf^2)(1 - exp(-kappa tau)) / kappa.
struct SsviParams {
  double sigma0 = 0.2;     // short-end ATM vol
  double sigma_inf = 0.2;  // long-end ATM vol
  double rho = -0.5;
  double eta = 0.6;
  double gamma = 0.4;
  double kappa = 2.0;

  double theta(double tau) const;
  double theta_tau(double tau) const;
  double phi(double theta) const;
  double total_variance(double m, double tau) const;
  double vol(double m, double tau) const;
  LocalDerivs<double> derivs(double m, double tau) const;
};

struct Bounds {
  double lo;
  double hi;
};

struct SynthConfig {
  int days = 500;
  std::string start_date = "2009-01-02";
  double ar_coef = 0.8;       // persistence of the latent AR(1) per parameter
  double noise_scale = 1.0;   // stationary sd of the latent state; 0 freezes the surface
  Bounds sigma0{0.08, 0.6};
  Bounds sigma_inf{0.12, 0.35};
  Bounds rho{-0.9, -0.1};
  Bounds eta{0.3, 1.0};
  double gamma = 0.4;
  double kappa = 2.0;
  std::vector<double> call_deltas;  // empty = 0.10, 0.15, ..., 0.90
  std::vector<double> put_deltas;   // empty = -0.90, ..., -0.10
  std::vector<double> tau_days;     // empty = 10, 30, ..., 730
  double rate = 0.02;
  double div_yield = 0.018;
  double iv_noise = 0.0;  // sd of additive quote noise
  int max_redraws = 1000;

  void validate() const;
  std::vector<double> calls() const;
  std::vector<double> puts() const;
  std::vector<double> maturities_days() const;
};

struct SynthPanel {
  std::vector<SurfaceSnapshot> snapshots;
  std::vector<SsviParams> truth;
  int redraws = 0;  // days re-drawn after failing the arbitrage scan
};

SynthPanel synth_generate(const SynthConfig& config, std::uint64_t seed);

/// Minimum of ell_cal and ell_but over the verification grid.
double ssvi_arbitrage_margin(const SsviParams& p);

/// Business-day labels (Mon-Fri) starting at `start` (ISO-8601).
std::vector<std::string> business_days(const std::string& start, int count);

}  // namespace ivs
