#pragma once

// Scenario generation: residual models around the one-step predictor and
// multi-step simulated surface paths.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "ivs/constructor.hpp"
#include "ivs/dataset.hpp"
#include "ivs/features.hpp"
#include "ivs/predictor.hpp"

namespace ivs {

enum class ErrorMode { additive, multiplicative };
enum class ErrorDistribution { gaussian, bootstrap };

std::string to_string(ErrorMode m);
std::string to_string(ErrorDistribution d);
ErrorMode error_mode_from_string(const std::string& s);
ErrorDistribution error_distribution_from_string(const std::string& s);

/// Multiplicative for SAM (positive features), additive otherwise.
ErrorMode default_error_mode(FeatureMethod method);

struct ErrorModel {
  ErrorMode mode = ErrorMode::additive;
  ErrorDistribution distribution = ErrorDistribution::gaussian;
  Eigen::MatrixXd residuals;   // dim x n, one residual per column
  Eigen::MatrixXd covariance;  // dim x dim
  Eigen::MatrixXd factor;      // factor * factor^T = covariance with negative eigenvalues clamped

  Eigen::Index dim() const { return covariance.rows(); }
  Eigen::VectorXd draw(std::mt19937_64& rng) const;
  /// Z from the prediction and one draw.
  Eigen::VectorXd apply(const Eigen::VectorXd& prediction, const Eigen::VectorXd& eps) const;
};

/// Gaussian model with the given covariance; the factor comes from its eigendecomposition.
ErrorModel gaussian_error_model(const Eigen::MatrixXd& covariance, ErrorMode mode);
/// Bootstrap over the columns of `residuals`.
ErrorModel bootstrap_error_model(const Eigen::MatrixXd& residuals, ErrorMode mode);

inline constexpr int kMinResiduals = 30;

/// One-step residuals of `p` on every day with a full window: Z - p(.) or log(Z / p(.)).
Eigen::MatrixXd one_step_residuals(const Predictor& p, const Eigen::MatrixXd& values, ErrorMode mode);
ErrorModel fit_error_model(const FeatureSeries& features, const Predictor& p, ErrorMode mode,
                           ErrorDistribution distribution = ErrorDistribution::gaussian);

struct SimulationModels {
  const Predictor* predictor = nullptr;
  const FeatureModel* features = nullptr;
  const SurfaceNet* net = nullptr;
  const ErrorModel* errors = nullptr;
};

struct SimulatedPath {
  Eigen::MatrixXd features;             // dim x horizon, Z_{T+1}, ...
  std::vector<Eigen::VectorXd> decoded;  // F = h(Z) per step
  Eigen::MatrixXd vols;                 // grid size x horizon
};

struct Ensemble {
  FixedGrid grid;
  int horizon = 0;
  std::vector<SimulatedPath> paths;
  double min_cal = 0.0;  // over every path and step, on the I_C34 grid
  double min_but = 0.0;
  bool scanned = false;
};

struct SimulationConfig {
  int horizon = 5;
  int n_paths = 100;
  std::uint64_t seed = 1;
  bool scan = true;  // arbitrage scan of every simulated surface
  PenaltyGridConfig scan_grid;

  void validate() const;
};

/// Paths rolled forward from the columns of `history` (the last column is day T).
Ensemble simulate_paths(const SimulationModels& models, const Eigen::MatrixXd& history, const FixedGrid& grid,
                        const SimulationConfig& cfg);

/// The noise-free multi-step forecast, rolled the same way as a path.
SimulatedPath deterministic_path(const SimulationModels& models, const Eigen::MatrixXd& history,
                                 const FixedGrid& grid, int horizon);

// CSV: path,step,m,tau,vol
void write_ensemble_csv(std::ostream& out, const Ensemble& e);
void write_ensemble_csv(const std::filesystem::path& path, const Ensemble& e);

}  // namespace ivs
