#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "ivs/errors.hpp"
#include "ivs/evaluation.hpp"
#include "ivs/pipeline.hpp"

using namespace ivs;

namespace {

PredictionRun make_run(std::string name, const std::vector<std::vector<double>>& truth,
                       const std::vector<std::vector<double>>& pred) {
  PredictionRun r;
  r.model = std::move(name);
  for (std::size_t t = 0; t < truth.size(); ++t) {
    const auto n = static_cast<Eigen::Index>(truth[t].size());
    r.dates.push_back("d" + std::to_string(t));
    r.truth.push_back(Eigen::Map<const Eigen::VectorXd>(truth[t].data(), n));
    r.predicted.push_back(Eigen::Map<const Eigen::VectorXd>(pred[t].data(), n));
    r.m.push_back(Eigen::VectorXd::LinSpaced(n, -0.1, 0.1));
    r.tau.push_back(Eigen::VectorXd::Constant(n, 0.5));
    r.cal.push_back(Eigen::VectorXd::Ones(n));
    r.but.push_back(Eigen::VectorXd::Ones(n));
  }
  return r;
}

// Errors of run 1 are `factor` times those of run 2 on every point.
std::pair<PredictionRun, PredictionRun> scaled_runs(int days, double factor, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  std::vector<std::vector<double>> truth(days), p1(days), p2(days);
  for (int t = 0; t < days; ++t) {
    for (int k = 0; k < 4; ++k) {
      const double v = 0.2 + 0.01 * k, e = 0.01 * n01(rng);
      truth[t].push_back(v);
      p2[t].push_back(v + e);
      p1[t].push_back(v + factor * e);
    }
  }
  return {make_run("a", truth, p1), make_run("b", truth, p2)};
}

Eigen::VectorXd differential(const PredictionRun& a, const PredictionRun& b) {
  Eigen::VectorXd d(static_cast<Eigen::Index>(a.days()));
  for (std::size_t t = 0; t < a.days(); ++t) {
    const double n = static_cast<double>(a.truth[t].size());
    d(static_cast<Eigen::Index>(t)) =
        (a.predicted[t] - a.truth[t]).squaredNorm() / n - (b.predicted[t] - b.truth[t]).squaredNorm() / n;
  }
  return d;
}

// Sign-flip randomization test: share of flips whose mean is at most the observed mean.
double sign_flip_p(const Eigen::VectorXd& d, int draws, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin;
  const double obs = d.mean();
  int hits = 1;
  for (int i = 0; i < draws; ++i) {
    double s = 0.0;
    for (Eigen::Index t = 0; t < d.size(); ++t) s += coin(rng) ? d(t) : -d(t);
    if (s / static_cast<double>(d.size()) <= obs) ++hits;
  }
  return hits / (draws + 1.0);
}

bool identical(const PredictionRun& a, const PredictionRun& b) {
  if (a.days() != b.days()) return false;
  for (std::size_t t = 0; t < a.days(); ++t) {
    if (a.predicted[t] != b.predicted[t] || a.cal[t] != b.cal[t] || a.but[t] != b.but[t]) return false;
  }
  return true;
}

Panel small_panel(int days, double noise_scale, std::uint64_t seed) {
  SynthConfig sc;
  sc.days = days;
  sc.noise_scale = noise_scale;
  return build_panel(synth_generate(sc, seed).snapshots, default_grid());
}

FitConfig tiny_fit(std::uint64_t seed) {
  FitConfig f;
  f.seed = seed;
  f.vae.hidden = 16;
  f.vae.depth = 1;
  f.vae.latent_dim = 3;
  f.vae.train = {2, 16, 1e-3, 0};
  f.predictor.train = {2, 16, 0.01, 0};
  f.predictor.hidden = 4;
  f.constructor.train = {1, 1024, 1e-3, 0};
  f.constructor.hidden = 8;
  f.constructor.depth = 2;
  f.constructor.grids.m_parts = f.constructor.grids.tau_parts = 6;
  return f;
}

}  // namespace

TEST_CASE("rmse and mape") {
  SUBCASE("perfect prediction") {
    const PredictionRun r = make_run("x", {{0.2, 0.3}, {0.25}}, {{0.2, 0.3}, {0.25}});
    CHECK(rmse(r) == 0.0);
    CHECK(mape(r) == 0.0);
  }
  SUBCASE("hand arithmetic") {
    const PredictionRun r = make_run("x", {{0.2, 0.1}}, {{0.21, 0.09}});
    CHECK(rmse(r) == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(mape(r) == doctest::Approx(0.075).epsilon(1e-12));
  }
  SUBCASE("pooled over points, not averaged over days") {
    const PredictionRun r = make_run("x", {{0.2, 0.2, 0.2}, {0.2}}, {{0.2, 0.2, 0.2}, {0.24}});
    CHECK(rmse(r) == doctest::Approx(std::sqrt(0.04 * 0.04 / 4)).epsilon(1e-12));
    CHECK(mape(r) == doctest::Approx(0.2 / 4).epsilon(1e-12));
  }
  SUBCASE("permutation invariant") {
    const PredictionRun a = make_run("x", {{0.2, 0.1}, {0.3}}, {{0.25, 0.11}, {0.28}});
    const PredictionRun b = make_run("x", {{0.3}, {0.1, 0.2}}, {{0.28}, {0.11, 0.25}});
    CHECK(rmse(a) == doctest::Approx(rmse(b)).epsilon(1e-15));
    CHECK(mape(a) == doctest::Approx(mape(b)).epsilon(1e-15));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(mape(make_run("x", {{0.0}}, {{0.1}})), DataError);
    CHECK_THROWS_AS(rmse(PredictionRun{}), DataError);
    PredictionRun bad = make_run("x", {{0.2, 0.1}}, {{0.21, 0.09}});
    bad.predicted[0].resize(1);
    CHECK_THROWS_AS(rmse(bad), ShapeError);
  }
  const auto daily = daily_errors(make_run("x", {{0.2, 0.1}, {0.5}}, {{0.21, 0.09}, {0.5}}));
  REQUIRE(daily.size() == 2);
  CHECK(daily[0].rmse == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(daily[1].mape == 0.0);
}

TEST_CASE("dm_test") {
  SUBCASE("hand-computed Bartlett HAC statistic") {
    Eigen::VectorXd d(10);
    d << 0.3, -0.1, 0.4, 0.2, -0.5, 0.1, 0.0, 0.6, -0.2, 0.3;
    const DmResult r = dm_test(d);
    CHECK(r.lag == 2);
    CHECK(r.n == 10);
    CHECK(r.statistic == doctest::Approx(1.6494640112803525).epsilon(1e-12));
    CHECK(r.p_value == doctest::Approx(0.9504736948781192).epsilon(1e-12));
    CHECK(!r.degenerate);
  }
  SUBCASE("smaller errors every day reject at 1%") {
    const auto [a, b] = scaled_runs(500, 0.5, 3);
    const DmResult r = dm_test(a, b);
    CHECK(r.lag == 7);
    CHECK(r.p_value < 0.01);
    CHECK(sign_flip_p(differential(a, b), 2000, 5) < 0.01);
  }
  SUBCASE("no difference in expectation does not reject") {
    const auto [a, b] = scaled_runs(400, 1.0, 4);
    auto [c, _] = scaled_runs(400, 1.0, 9);
    c.truth = a.truth;
    c.m = a.m;
    c.tau = a.tau;
    const DmResult r = dm_test(b, c);
    CHECK(r.p_value > 0.01);
    CHECK(r.p_value < 0.99);
  }
  SUBCASE("antisymmetric under swap") {
    const auto [a, b] = scaled_runs(60, 0.9, 7);
    const DmResult ab = dm_test(a, b), ba = dm_test(b, a);
    CHECK(ab.statistic == doctest::Approx(-ba.statistic).epsilon(1e-12));
    CHECK(ab.p_value + ba.p_value == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("identical runs are degenerate") {
    const auto [a, b] = scaled_runs(30, 0.5, 1);
    const DmResult r = dm_test(a, a);
    CHECK(r.degenerate);
    CHECK(r.p_value == 0.5);
  }
  SUBCASE("mismatched runs") {
    const auto [a, b] = scaled_runs(30, 0.5, 1);
    const auto [c, e] = scaled_runs(31, 0.5, 1);
    CHECK_THROWS_AS(dm_test(a, c), ShapeError);
    CHECK_THROWS_AS(dm_test(Eigen::VectorXd::Zero(1)), DataError);
  }
}

TEST_CASE("arb_violation") {
  std::vector<SurfaceSnapshot> snaps(3);
  for (int t = 0; t < 3; ++t) {
    snaps[t].date = "d" + std::to_string(t);
    for (double m : {-0.3, 0.0, 0.2}) {
      for (double tau : {0.1, 0.5, 1.0, 2.0}) snaps[t].points.push_back({m, tau, 0.2});
    }
  }
  SUBCASE("constant surface") {
    const PredictionRun r = evaluate_surfaces("flat", snaps, [](std::size_t, const Eigen::Matrix2Xd& c) {
      const Eigen::Index n = c.cols();
      return LocalDerivs<Eigen::ArrayXd>{Eigen::ArrayXd::Constant(n, 0.2), Eigen::ArrayXd::Zero(n),
                                         Eigen::ArrayXd::Zero(n), Eigen::ArrayXd::Zero(n)};
    });
    const ArbViolation v = arb_violation(r);
    CHECK(v.cal == 0.0);
    CHECK(v.but == 0.0);
  }
  SUBCASE("decaying term structure matches a direct loop") {
    // vol = 0.5 - (0.1 + 0.02 t) tau on day t: total variance falls at long maturities.
    auto f = [](std::size_t t, double tau) {
      const double b = 0.1 + 0.02 * static_cast<double>(t);
      return LocalDerivs<double>{0.5 - b * tau, -b, 0.0, 0.0};
    };
    const PredictionRun r = evaluate_surfaces("decay", snaps, [&](std::size_t t, const Eigen::Matrix2Xd& c) {
      LocalDerivs<Eigen::ArrayXd> d{Eigen::ArrayXd(c.cols()), Eigen::ArrayXd(c.cols()), Eigen::ArrayXd::Zero(c.cols()),
                                    Eigen::ArrayXd::Zero(c.cols())};
      for (Eigen::Index k = 0; k < c.cols(); ++k) {
        const auto p = f(t, c(1, k));
        d.vol(k) = p.vol;
        d.d_tau(k) = p.d_tau;
      }
      return d;
    });
    double cal = 0.0, but = 0.0;
    int n = 0;
    for (std::size_t t = 0; t < snaps.size(); ++t) {
      for (const auto& p : snaps[t].points) {
        const auto d = f(t, p.tau);
        cal += std::min(0.0, ell_cal(d, p.tau));
        but += std::min(0.0, ell_but(d, p.m, p.tau));
        ++n;
      }
    }
    const ArbViolation v = arb_violation(r);
    CHECK(v.cal < 0.0);
    CHECK(v.cal == doctest::Approx(cal / n).epsilon(1e-13));
    CHECK(v.but == doctest::Approx(but / n).epsilon(1e-13));
  }
}

TEST_CASE("model tags") {
  for (const auto& s : all_model_tags()) CHECK(parse_model_tag(s).name == s);
  CHECK(all_model_tags().size() == 7);
  CHECK(parse_model_tag("dfw").benchmark);
  const ModelTag t = parse_model_tag("vae-dfw");
  CHECK(t.features == FeatureMethod::vae);
  CHECK(t.step2 == Step2::dfw);
  CHECK_THROWS_AS(parse_model_tag("sam"), ConfigError);
  CHECK_THROWS_AS(parse_model_tag("sam-svi"), ConfigError);
  CHECK_THROWS_AS(parse_model_tag("heston-dnn"), ConfigError);
}

TEST_CASE("run_backtest") {
  SUBCASE("DFW benchmark on a frozen panel has only the DFW fit error") {
    const Panel p = small_panel(30, 0.0, 2);
    const PredictionRun r = run_backtest(p, 1, 30, parse_model_tag("dfw"));
    CHECK(r.days() == 29);
    const DfwCoeffs c = fit_dfw(p.snapshots[0].points);
    CHECK(rmse(r) == doctest::Approx(c.rmse).epsilon(1e-10));
    CHECK_THROWS_AS(run_backtest(p, 0, 30, parse_model_tag("dfw")), BoundsError);
  }
  SUBCASE("persistence oracle reduces to the step-2 interpolation") {
    const Panel p = small_panel(40, 0.0, 3);
    FitConfig cfg = tiny_fit(3);
    FittedPipeline fit = fit_pipeline(p, 30, FeatureMethod::sam, cfg);
    // Zero head: the forecast is exactly Z_{t-1}, which equals Z_t on a frozen panel.
    fit.predictor.cell.w_out.value.setZero();
    fit.predictor.cell.b_out.value.setZero();
    const PipelineModels m{&fit.features, &fit.predictor, &*fit.net};
    const PredictionRun dnn = run_backtest(p, 30, 40, parse_model_tag("sam-dnn"), m);
    const PredictionRun dfw = run_backtest(p, 30, 40, parse_model_tag("sam-dfw"), m);
    for (std::size_t i = 0; i < dnn.days(); ++i) {
      const auto& F = p.surfaces[30 + i].vols;
      const DfwCoeffs c = dfw_on_grid(p.grid, F);
      for (Eigen::Index k = 0; k < dnn.truth[i].size(); ++k) {
        CHECK(dnn.predicted[i](k) == doctest::Approx(surface_eval(*fit.net, dnn.m[i](k), dnn.tau[i](k), F)).epsilon(1e-12));
        CHECK(dfw.predicted[i](k) == doctest::Approx(eval_dfw(c, dfw.m[i](k), dfw.tau[i](k))).epsilon(1e-12));
      }
    }
    CHECK(identical(dnn, run_backtest(p, 30, 40, parse_model_tag("sam-dnn"), m)));
    CHECK_THROWS_AS(run_backtest(p, 30, 40, parse_model_tag("sam-dnn"), {&fit.features, &fit.predictor, nullptr}),
                    StateError);
    CHECK_THROWS_AS(run_backtest(p, 10, 40, parse_model_tag("sam-dnn"), m), BoundsError);
    CHECK_THROWS_AS(run_backtest(p, 30, 40, parse_model_tag("pca-dnn"), m), StateError);
  }
}

TEST_CASE("all seven models run end to end") {
  const Panel p = small_panel(45, 1.0, 5);
  const std::size_t n_train = 35;
  std::vector<PredictionRun> runs;
  std::vector<SummaryRow> summary;
  for (FeatureMethod fm : {FeatureMethod::sam, FeatureMethod::pca, FeatureMethod::vae}) {
    const FittedPipeline fit = fit_pipeline(p, n_train, fm, tiny_fit(1));
    CHECK(fit.penalties.rows.size() == 2);  // one train and one test row for the single epoch
    const PipelineModels m{&fit.features, &fit.predictor, &*fit.net};
    for (const char* step2 : {"dnn", "dfw"}) {
      runs.push_back(run_backtest(p, n_train, p.days(), parse_model_tag(to_string(fm) + "-" + step2), m));
    }
  }
  runs.push_back(run_backtest(p, n_train, p.days(), parse_model_tag("dfw")));
  REQUIRE(runs.size() == 7);
  for (const auto& r : runs) {
    CHECK(r.days() == 10);
    CHECK(std::isfinite(rmse(r)));
    summary.push_back({r.model, "test", rmse(r), mape(r)});
  }

  std::ostringstream s, d, dm, v;
  write_summary_csv(s, summary);
  write_daily_csv(d, runs);
  write_dm_csv(dm, runs);
  write_violation_csv(v, runs);
  auto lines = [](const std::string& x) { return std::count(x.begin(), x.end(), '\n'); };
  CHECK(s.str().rfind("model,split,RMSE,MAPE\n", 0) == 0);
  CHECK(lines(s.str()) == 8);
  CHECK(lines(d.str()) == 1 + 70);
  CHECK(lines(dm.str()) == 1 + 42);
  CHECK(v.str().rfind("model,L_cal,L_but\n", 0) == 0);
  CHECK(lines(v.str()) == 8);
}
