#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <string>

#include "ivs/errors.hpp"
#include "ivs/simulate.hpp"

using namespace ivs;

namespace {

struct Pipeline {
  Panel panel;
  FeatureModel features;
  FeatureSeries series;
  Predictor predictor;
  SurfaceNet net;
};

// Small untrained-quality pipeline; only the plumbing is under test here.
Pipeline make_pipeline(FeatureMethod method, std::uint64_t seed) {
  Pipeline p;
  SynthConfig sc;
  sc.days = 70;
  p.panel = build_panel(synth_generate(sc, seed).snapshots, default_grid());
  p.features.method = method;
  if (method == FeatureMethod::pca) p.features.pca = pca_fit(p.panel.surfaces, 3);
  p.series = p.features.series(p.panel.surfaces);
  PredictorConfig pc;
  pc.train = {3, 16, 0.01, seed};
  pc.hidden = 4;
  pc.validation_fraction = 0.0;
  p.predictor = train_predictor(p.series, pc);
  std::mt19937_64 rng(seed);
  p.net = SurfaceNet(static_cast<int>(p.panel.grid.size()), 8, 2, rng);  // F = h(Z) is a full surface
  return p;
}

SimulationModels models_of(const Pipeline& p, const ErrorModel& e) { return {&p.predictor, &p.features, &p.net, &e}; }

bool identical(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::equal(a.data(), a.data() + a.size(), b.data());
}

}  // namespace

TEST_CASE("gaussian error model") {
  SUBCASE("zero covariance draws zero") {
    const ErrorModel e = gaussian_error_model(Eigen::MatrixXd::Zero(3, 3), ErrorMode::additive);
    std::mt19937_64 rng(1);
    const Eigen::VectorXd p = Eigen::Vector3d(0.1, -0.2, 0.3);
    for (int i = 0; i < 5; ++i) CHECK(identical(e.apply(p, e.draw(rng)), p));
  }
  SUBCASE("multiplicative with zero draw returns the prediction") {
    ErrorModel e = gaussian_error_model(Eigen::MatrixXd::Zero(2, 2), ErrorMode::multiplicative);
    const Eigen::VectorXd p = Eigen::Vector2d(0.17, 0.33);
    CHECK(identical(e.apply(p, Eigen::VectorXd::Zero(2)), p));
  }
  SUBCASE("rank-deficient covariance is factored") {
    const Eigen::Vector3d v(1.0, -2.0, 0.5);
    const Eigen::MatrixXd cov = v * v.transpose();
    const ErrorModel e = gaussian_error_model(cov, ErrorMode::additive);
    CHECK((e.factor * e.factor.transpose() - cov).cwiseAbs().maxCoeff() < 1e-12);
    std::mt19937_64 rng(3);
    for (int i = 0; i < 10; ++i) {
      const Eigen::VectorXd d = e.draw(rng);
      // Every draw lies on the line spanned by v.
      CHECK((d - v * (d.dot(v) / v.squaredNorm())).norm() < 1e-10);
    }
  }
  SUBCASE("sample variances match the generating covariance") {
    const Eigen::Vector3d sd(0.01, 0.02, 0.05);
    const ErrorModel e = gaussian_error_model(Eigen::MatrixXd(sd.cwiseAbs2().asDiagonal()), ErrorMode::additive);
    std::mt19937_64 rng(11);
    const int n = 20000;
    Eigen::MatrixXd x(3, n);
    for (int i = 0; i < n; ++i) x.col(i) = e.draw(rng);
    for (int k = 0; k < 3; ++k) {
      const double var = x.row(k).squaredNorm() / n;
      const double se = sd(k) * sd(k) * std::sqrt(2.0 / n);
      CHECK(std::abs(var - sd(k) * sd(k)) < 4.0 * se);
      CHECK(std::abs(x.row(k).mean()) < 4.0 * sd(k) / std::sqrt(n));
    }
    const double cov01 = x.row(0).dot(x.row(1)) / n;
    CHECK(std::abs(cov01) < 4.0 * sd(0) * sd(1) / std::sqrt(n));
  }
  CHECK_THROWS_AS(gaussian_error_model(Eigen::MatrixXd::Zero(2, 3), ErrorMode::additive), ShapeError);
}

TEST_CASE("bootstrap draws are uniform over residual columns") {
  const int cols = 10;
  Eigen::MatrixXd r(1, cols);
  for (int i = 0; i < cols; ++i) r(0, i) = i;
  const ErrorModel e = bootstrap_error_model(r, ErrorMode::additive);
  std::mt19937_64 rng(5);
  std::vector<int> counts(cols, 0);
  const int n = 10000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(e.draw(rng)(0))];
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - n / double(cols)) * (c - n / double(cols)) / (n / double(cols));
  CHECK(chi2 < 21.666);  // chi-squared(9) upper 1% point
  CHECK_THROWS_AS(bootstrap_error_model(Eigen::MatrixXd(2, 0), ErrorMode::additive), DataError);
}

TEST_CASE("fit_error_model") {
  const Pipeline pca = make_pipeline(FeatureMethod::pca, 2);
  SUBCASE("gaussian covariance is the sample covariance of the residuals") {
    const ErrorModel e = fit_error_model(pca.series, pca.predictor, ErrorMode::additive);
    const Eigen::MatrixXd pred = predict_range(pca.predictor, pca.series.values, kLongWindow);
    const Eigen::MatrixXd res = pca.series.values.rightCols(pred.cols()) - pred;
    CHECK(res.cols() == 70 - kLongWindow);
    const Eigen::Index n = res.cols();
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(3, 3);
    const Eigen::VectorXd mean = res.rowwise().mean();
    for (Eigen::Index t = 0; t < n; ++t) cov += (res.col(t) - mean) * (res.col(t) - mean).transpose();
    cov /= static_cast<double>(n - 1);
    CHECK((e.covariance - cov).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(identical(e.residuals, res));
  }
  SUBCASE("bootstrap keeps the residual columns") {
    const ErrorModel e = fit_error_model(pca.series, pca.predictor, ErrorMode::additive, ErrorDistribution::bootstrap);
    CHECK(e.residuals.cols() == 70 - kLongWindow);
  }
  SUBCASE("multiplicative mode needs positive features") {
    CHECK_THROWS_AS(fit_error_model(pca.series, pca.predictor, ErrorMode::multiplicative), ModeError);
  }
  SUBCASE("too few residuals") {
    FeatureSeries shortened = pca.series;
    shortened.values = pca.series.values.leftCols(kLongWindow + kMinResiduals - 1);
    CHECK_THROWS_AS(fit_error_model(shortened, pca.predictor, ErrorMode::additive), DataError);
  }
  SUBCASE("constant series with persistence gives zero covariance") {
    FeatureSeries flat = pca.series;
    flat.values.setConstant(0.25);
    Predictor p = pca.predictor;
    p.cell.w_out.value.setZero();
    p.cell.b_out.value.setZero();
    REQUIRE(p.residual);
    const ErrorModel e = fit_error_model(flat, p, ErrorMode::additive);
    CHECK(e.covariance.cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(default_error_mode(FeatureMethod::sam) == ErrorMode::multiplicative);
  CHECK(default_error_mode(FeatureMethod::vae) == ErrorMode::additive);
  CHECK(error_mode_from_string(to_string(ErrorMode::multiplicative)) == ErrorMode::multiplicative);
  CHECK_THROWS_AS(error_distribution_from_string("t"), ConfigError);
}

TEST_CASE("simulate_paths") {
  const Pipeline pca = make_pipeline(FeatureMethod::pca, 4);
  const Eigen::MatrixXd& hist = pca.series.values;
  SimulationConfig cfg;
  cfg.horizon = 4;
  cfg.n_paths = 6;
  cfg.seed = 9;
  cfg.scan_grid.m_parts = cfg.scan_grid.tau_parts = 8;

  SUBCASE("zero noise equals the deterministic forecast") {
    const SimulatedPath det = deterministic_path({&pca.predictor, &pca.features, &pca.net, nullptr}, hist,
                                                 pca.panel.grid, cfg.horizon);
    const ErrorModel zero = gaussian_error_model(Eigen::MatrixXd::Zero(3, 3), ErrorMode::additive);
    const Ensemble e = simulate_paths(models_of(pca, zero), hist, pca.panel.grid, cfg);
    REQUIRE(e.paths.size() == 6);
    for (const auto& path : e.paths) {
      CHECK(identical(path.features, det.features));
      CHECK(identical(path.vols, det.vols));
    }
    // The first step is the one-step prediction.
    const Eigen::VectorXd one = pca.predictor.predict(build_inputs(hist, hist.cols() - 1));
    CHECK(identical(det.features.col(0), one));
  }
  SUBCASE("seeded ensembles are reproducible") {
    const ErrorModel e = fit_error_model(pca.series, pca.predictor, ErrorMode::additive);
    const Ensemble a = simulate_paths(models_of(pca, e), hist, pca.panel.grid, cfg);
    const Ensemble b = simulate_paths(models_of(pca, e), hist, pca.panel.grid, cfg);
    for (std::size_t k = 0; k < a.paths.size(); ++k) CHECK(identical(a.paths[k].vols, b.paths[k].vols));
    CHECK(a.scanned);
    CHECK(a.min_cal == b.min_cal);
    CHECK(!identical(a.paths[0].features, a.paths[1].features));
    cfg.seed = 10;
    const Ensemble c = simulate_paths(models_of(pca, e), hist, pca.panel.grid, cfg);
    CHECK(!identical(a.paths[0].features, c.paths[0].features));
  }
  SUBCASE("paths do not depend on the ensemble size") {
    const ErrorModel e = fit_error_model(pca.series, pca.predictor, ErrorMode::additive, ErrorDistribution::bootstrap);
    cfg.scan = false;
    const Ensemble a = simulate_paths(models_of(pca, e), hist, pca.panel.grid, cfg);
    cfg.n_paths = 2;
    const Ensemble b = simulate_paths(models_of(pca, e), hist, pca.panel.grid, cfg);
    CHECK(identical(a.paths[1].features, b.paths[1].features));
  }
  SUBCASE("horizon-1 ensemble mean converges to the prediction") {
    const ErrorModel e = fit_error_model(pca.series, pca.predictor, ErrorMode::additive);
    cfg.horizon = 1;
    cfg.n_paths = 2000;
    cfg.scan = false;
    const Ensemble ens = simulate_paths(models_of(pca, e), hist, pca.panel.grid, cfg);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(3);
    for (const auto& p : ens.paths) mean += p.features.col(0);
    mean /= static_cast<double>(cfg.n_paths);
    const Eigen::VectorXd det = pca.predictor.predict(build_inputs(hist, hist.cols() - 1));
    for (int k = 0; k < 3; ++k) {
      const double se = std::sqrt(e.covariance(k, k) / cfg.n_paths);
      CHECK(std::abs(mean(k) - det(k)) < 4.0 * se);
    }
  }
  SUBCASE("ensemble CSV") {
    const ErrorModel e = fit_error_model(pca.series, pca.predictor, ErrorMode::additive);
    cfg.scan = false;
    const Ensemble ens = simulate_paths(models_of(pca, e), hist, pca.panel.grid, cfg);
    std::ostringstream out;
    write_ensemble_csv(out, ens);
    const std::string s = out.str();
    CHECK(s.rfind("path,step,m,tau,vol\n", 0) == 0);
    CHECK(std::count(s.begin(), s.end(), '\n') == 1 + 6 * 4 * 154);
  }
  SUBCASE("errors") {
    const ErrorModel e = gaussian_error_model(Eigen::MatrixXd::Zero(3, 3), ErrorMode::additive);
    cfg.horizon = 0;
    CHECK_THROWS_AS(simulate_paths(models_of(pca, e), hist, pca.panel.grid, cfg), ConfigError);
    cfg.horizon = 2;
    CHECK_THROWS_AS(simulate_paths(models_of(pca, e), hist.leftCols(10), pca.panel.grid, cfg), DataError);
    const ErrorModel wrong = gaussian_error_model(Eigen::MatrixXd::Zero(4, 4), ErrorMode::additive);
    CHECK_THROWS_AS(simulate_paths(models_of(pca, wrong), hist, pca.panel.grid, cfg), ShapeError);
  }
}

TEST_CASE("multiplicative simulation on SAM features") {
  const Pipeline sam = make_pipeline(FeatureMethod::sam, 6);
  const Eigen::MatrixXd& hist = sam.series.values;
  SimulationConfig cfg;
  cfg.horizon = 3;
  cfg.n_paths = 3;
  cfg.scan = false;
  const ErrorModel zero = gaussian_error_model(Eigen::MatrixXd::Zero(hist.rows(), hist.rows()),
                                               ErrorMode::multiplicative);
  const Ensemble z = simulate_paths(models_of(sam, zero), hist, sam.panel.grid, cfg);
  const SimulatedPath det = deterministic_path(models_of(sam, zero), hist, sam.panel.grid, cfg.horizon);
  for (const auto& p : z.paths) CHECK(identical(p.features, det.features));

  const ErrorModel e = fit_error_model(sam.series, sam.predictor, ErrorMode::multiplicative);
  const Ensemble ens = simulate_paths(models_of(sam, e), hist, sam.panel.grid, cfg);
  for (const auto& p : ens.paths) CHECK((p.features.array() > 0.0).all());
}
