#include "ivs/simulate.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>

#include "ivs/errors.hpp"
#include "ivs/nn/serialize.hpp"

namespace ivs {

std::string to_string(ErrorMode m) { return m == ErrorMode::additive ? "additive" : "multiplicative"; }

std::string to_string(ErrorDistribution d) { return d == ErrorDistribution::gaussian ? "gaussian" : "bootstrap"; }

ErrorMode error_mode_from_string(const std::string& s) {
  if (s == "additive") return ErrorMode::additive;
  if (s == "multiplicative") return ErrorMode::multiplicative;
  throw ConfigError("unknown error mode '" + s + "' (expected additive or multiplicative)");
}

ErrorDistribution error_distribution_from_string(const std::string& s) {
  if (s == "gaussian") return ErrorDistribution::gaussian;
  if (s == "bootstrap") return ErrorDistribution::bootstrap;
  throw ConfigError("unknown error distribution '" + s + "' (expected gaussian or bootstrap)");
}

ErrorMode default_error_mode(FeatureMethod method) {
  return method == FeatureMethod::sam ? ErrorMode::multiplicative : ErrorMode::additive;
}

Eigen::VectorXd ErrorModel::draw(std::mt19937_64& rng) const {
  if (distribution == ErrorDistribution::bootstrap) {
    if (residuals.cols() == 0) throw StateError("bootstrap error model has no residuals");
    std::uniform_int_distribution<Eigen::Index> pick(0, residuals.cols() - 1);
    return residuals.col(pick(rng));
  }
  std::normal_distribution<double> normal;
  Eigen::VectorXd z(factor.cols());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
  return factor * z;
}

Eigen::VectorXd ErrorModel::apply(const Eigen::VectorXd& prediction, const Eigen::VectorXd& eps) const {
  if (prediction.size() != eps.size()) throw ShapeError("error model: draw and prediction differ in size");
  if (mode == ErrorMode::additive) return prediction + eps;
  return (prediction.array() * eps.array().exp()).matrix();
}

ErrorModel gaussian_error_model(const Eigen::MatrixXd& covariance, ErrorMode mode) {
  if (covariance.rows() != covariance.cols() || covariance.rows() == 0) {
    throw ShapeError("error covariance must be square and non-empty");
  }
  if (!covariance.allFinite()) throw DataError("error covariance is not finite");
  ErrorModel e;
  e.mode = mode;
  e.distribution = ErrorDistribution::gaussian;
  e.covariance = 0.5 * (covariance + covariance.transpose());
  // Residual covariances are often rank-deficient. Eigenvalues at roundoff level, of
  // either sign, are set to zero so draws stay in the numerical range of the matrix.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(e.covariance);
  Eigen::VectorXd lambda = eig.eigenvalues();
  const double cut = static_cast<double>(lambda.size()) * std::numeric_limits<double>::epsilon() *
                     lambda.cwiseAbs().maxCoeff();
  lambda = (lambda.array() > cut).select(lambda, 0.0);
  e.factor = eig.eigenvectors() * lambda.cwiseSqrt().asDiagonal();
  return e;
}

ErrorModel bootstrap_error_model(const Eigen::MatrixXd& residuals, ErrorMode mode) {
  if (residuals.cols() == 0 || residuals.rows() == 0) throw DataError("bootstrap error model needs residuals");
  ErrorModel e;
  e.mode = mode;
  e.distribution = ErrorDistribution::bootstrap;
  e.residuals = residuals;
  const Eigen::MatrixXd centred = residuals.colwise() - residuals.rowwise().mean();
  const double n = static_cast<double>(residuals.cols());
  e.covariance = n > 1 ? Eigen::MatrixXd(centred * centred.transpose() / (n - 1))
                       : Eigen::MatrixXd::Zero(residuals.rows(), residuals.rows());
  e.factor = Eigen::MatrixXd::Zero(residuals.rows(), residuals.rows());
  return e;
}

Eigen::MatrixXd one_step_residuals(const Predictor& p, const Eigen::MatrixXd& values, ErrorMode mode) {
  if (values.cols() <= kLongWindow) throw DataError("residuals need more than " + std::to_string(kLongWindow) + " days");
  const Eigen::MatrixXd pred = predict_range(p, values, kLongWindow);
  const Eigen::MatrixXd actual = values.rightCols(pred.cols());
  if (mode == ErrorMode::additive) return actual - pred;
  if ((actual.array() <= 0.0).any() || (pred.array() <= 0.0).any()) {
    throw ModeError("multiplicative errors need positive features and predictions");
  }
  return (actual.array() / pred.array()).log().matrix();
}

ErrorModel fit_error_model(const FeatureSeries& features, const Predictor& p, ErrorMode mode,
                           ErrorDistribution distribution) {
  if (mode == ErrorMode::multiplicative && (features.values.array() <= 0.0).any()) {
    throw ModeError("multiplicative errors need positive features; " + to_string(features.method) +
                    " features change sign");
  }
  if (static_cast<Eigen::Index>(features.size()) < kLongWindow + kMinResiduals) {
    throw DataError("error model needs at least " + std::to_string(kMinResiduals) + " residuals");
  }
  const Eigen::MatrixXd eps = one_step_residuals(p, features.values, mode);
  if (distribution == ErrorDistribution::bootstrap) return bootstrap_error_model(eps, mode);
  const Eigen::MatrixXd centred = eps.colwise() - eps.rowwise().mean();
  ErrorModel e = gaussian_error_model(centred * centred.transpose() / static_cast<double>(eps.cols() - 1), mode);
  e.residuals = eps;
  return e;
}

void SimulationConfig::validate() const {
  if (horizon < 1) throw ConfigError("simulation horizon must be at least 1");
  if (n_paths < 1) throw ConfigError("simulation needs at least one path");
  scan_grid.validate();
}

namespace {

void check_models(const SimulationModels& m, const Eigen::MatrixXd& history) {
  if (!m.predictor || !m.features || !m.net) throw StateError("simulation needs a predictor, features and a net");
  if (history.cols() < kLongWindow) {
    throw DataError("simulation history needs " + std::to_string(kLongWindow) + " days");
  }
  if (history.rows() != m.predictor->cell.input_dim) throw ShapeError("history rows differ from the predictor input");
}

Eigen::Matrix2Xd grid_coords(const FixedGrid& grid) {
  Eigen::Matrix2Xd c(2, static_cast<Eigen::Index>(grid.size()));
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const SurfacePoint p = grid.node(k);
    c(0, static_cast<Eigen::Index>(k)) = p.m;
    c(1, static_cast<Eigen::Index>(k)) = p.tau;
  }
  return c;
}

// Rolls the predictor forward; `noise` returns the draw for each step.
template <class Noise>
SimulatedPath roll(const SimulationModels& models, const Eigen::MatrixXd& history, const Eigen::Matrix2Xd& coords,
                   int horizon, Noise&& noise) {
  const Eigen::Index n = history.cols(), dim = history.rows();
  Eigen::MatrixXd values(dim, n + horizon);
  values.leftCols(n) = history;
  SimulatedPath path;
  path.features.resize(dim, horizon);
  path.vols.resize(coords.cols(), horizon);
  for (int s = 0; s < horizon; ++s) {
    const Eigen::VectorXd pred = models.predictor->predict(build_inputs(values, n + s - 1));
    const Eigen::VectorXd z = noise(pred);
    values.col(n + s) = z;
    path.features.col(s) = z;
    path.decoded.push_back(models.features->decode(z));
    path.vols.col(s) = surface_eval(*models.net, coords, path.decoded.back());
  }
  return path;
}

}  // namespace

SimulatedPath deterministic_path(const SimulationModels& models, const Eigen::MatrixXd& history,
                                 const FixedGrid& grid, int horizon) {
  check_models(models, history);
  if (horizon < 1) throw ConfigError("simulation horizon must be at least 1");
  return roll(models, history, grid_coords(grid), horizon, [](const Eigen::VectorXd& p) { return p; });
}

Ensemble simulate_paths(const SimulationModels& models, const Eigen::MatrixXd& history, const FixedGrid& grid,
                        const SimulationConfig& cfg) {
  cfg.validate();
  check_models(models, history);
  if (!models.errors) throw StateError("simulation needs an error model");
  const ErrorModel& err = *models.errors;
  if (err.dim() != history.rows()) throw ShapeError("error model dimension differs from the features");

  const Eigen::Matrix2Xd coords = grid_coords(grid);
  Ensemble e;
  e.grid = grid;
  e.horizon = cfg.horizon;
  e.paths.reserve(static_cast<std::size_t>(cfg.n_paths));
  for (int k = 0; k < cfg.n_paths; ++k) {
    // One stream per path, so a path does not depend on how many came before it.
    std::mt19937_64 rng(nn::derive_seed(cfg.seed, 100 + static_cast<std::uint64_t>(k)));
    e.paths.push_back(roll(models, history, coords, cfg.horizon,
                           [&](const Eigen::VectorXd& p) { return err.apply(p, err.draw(rng)); }));
  }

  if (cfg.scan) {
    const PenaltyGrids grids = build_penalty_grids(cfg.scan_grid);
    e.min_cal = e.min_but = std::numeric_limits<double>::infinity();
    for (const auto& path : e.paths) {
      Eigen::MatrixXd F(path.decoded.front().size(), static_cast<Eigen::Index>(path.decoded.size()));
      for (std::size_t s = 0; s < path.decoded.size(); ++s) F.col(static_cast<Eigen::Index>(s)) = path.decoded[s];
      const PenaltyValues v = penalty_losses(*models.net, F, grids);
      e.min_cal = std::min(e.min_cal, v.min_cal);
      e.min_but = std::min(e.min_but, v.min_but);
    }
    e.scanned = true;
  }
  return e;
}

void write_ensemble_csv(std::ostream& out, const Ensemble& e) {
  out << "path,step,m,tau,vol\n";
  for (std::size_t k = 0; k < e.paths.size(); ++k) {
    const auto& vols = e.paths[k].vols;
    for (Eigen::Index s = 0; s < vols.cols(); ++s) {
      for (std::size_t i = 0; i < e.grid.size(); ++i) {
        const SurfacePoint p = e.grid.node(i);
        out << k << ',' << s + 1 << ',' << nn::format_double(p.m) << ',' << nn::format_double(p.tau) << ','
            << nn::format_double(vols(static_cast<Eigen::Index>(i), s)) << '\n';
      }
    }
  }
}

void write_ensemble_csv(const std::filesystem::path& path, const Ensemble& e) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  write_ensemble_csv(f, e);
}

}  // namespace ivs
