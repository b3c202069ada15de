#include "ivs/evaluation.hpp"

#include <cmath>
#include <ostream>

#include "ivs/errors.hpp"
#include "ivs/nn/serialize.hpp"

namespace ivs {

using Eigen::ArrayXd;

std::size_t PredictionRun::points() const {
  std::size_t n = 0;
  for (const auto& t : truth) n += static_cast<std::size_t>(t.size());
  return n;
}

void PredictionRun::validate() const {
  const std::size_t d = dates.size();
  if (m.size() != d || tau.size() != d || truth.size() != d || predicted.size() != d || cal.size() != d ||
      but.size() != d) {
    throw ShapeError("prediction run '" + model + "': per-day vectors differ in length");
  }
  for (std::size_t t = 0; t < d; ++t) {
    const Eigen::Index n = truth[t].size();
    if (m[t].size() != n || tau[t].size() != n || predicted[t].size() != n || cal[t].size() != n ||
        but[t].size() != n) {
      throw ShapeError("prediction run '" + model + "': day " + dates[t] + " is misaligned");
    }
  }
}

PredictionRun evaluate_surfaces(std::string model, std::span<const SurfaceSnapshot> truth, const SurfaceEvaluator& f) {
  PredictionRun run;
  run.model = std::move(model);
  for (std::size_t t = 0; t < truth.size(); ++t) {
    const auto& pts = truth[t].points;
    Eigen::Matrix2Xd c(2, static_cast<Eigen::Index>(pts.size()));
    Eigen::VectorXd v(c.cols());
    for (std::size_t k = 0; k < pts.size(); ++k) {
      c.col(static_cast<Eigen::Index>(k)) << pts[k].m, pts[k].tau;
      v(static_cast<Eigen::Index>(k)) = pts[k].vol;
    }
    const LocalDerivs<ArrayXd> d = f(t, c);
    if (d.vol.size() != c.cols()) throw ShapeError("surface evaluator returned the wrong number of points");
    const ArrayXd m = c.row(0).transpose(), tau = c.row(1).transpose();
    run.dates.push_back(truth[t].date);
    run.m.push_back(m.matrix());
    run.tau.push_back(tau.matrix());
    run.truth.push_back(v);
    run.predicted.push_back(d.vol.matrix());
    run.cal.push_back(ell_cal(d, tau).matrix());
    run.but.push_back(ell_but(d, m, tau).matrix());
  }
  return run;
}

namespace {

void require_points(const PredictionRun& run, const char* what) {
  run.validate();
  if (run.points() == 0) throw DataError(std::string(what) + ": empty prediction run");
}

double day_mse(const PredictionRun& run, std::size_t t) {
  return (run.predicted[t] - run.truth[t]).squaredNorm() / static_cast<double>(run.truth[t].size());
}

double day_ape_sum(const PredictionRun& run, std::size_t t) {
  if ((run.truth[t].array() == 0.0).any()) throw DataError("MAPE: zero true vol on " + run.dates[t]);
  return ((run.predicted[t] - run.truth[t]).array() / run.truth[t].array()).abs().sum();
}

}  // namespace

double rmse(const PredictionRun& run) {
  require_points(run, "rmse");
  double s = 0.0;
  for (std::size_t t = 0; t < run.days(); ++t) s += (run.predicted[t] - run.truth[t]).squaredNorm();
  return std::sqrt(s / static_cast<double>(run.points()));
}

double mape(const PredictionRun& run) {
  require_points(run, "mape");
  double s = 0.0;
  for (std::size_t t = 0; t < run.days(); ++t) s += day_ape_sum(run, t);
  return s / static_cast<double>(run.points());
}

std::vector<DailyError> daily_errors(const PredictionRun& run) {
  run.validate();
  std::vector<DailyError> out;
  for (std::size_t t = 0; t < run.days(); ++t) {
    if (run.truth[t].size() == 0) continue;
    const double n = static_cast<double>(run.truth[t].size());
    out.push_back({run.dates[t], std::sqrt(day_mse(run, t)), day_ape_sum(run, t) / n});
  }
  return out;
}

DmResult dm_test(const Eigen::VectorXd& d) {
  const Eigen::Index T = d.size();
  if (T < 2) throw DataError("dm_test: need at least two days");
  DmResult r;
  r.n = static_cast<std::size_t>(T);
  r.lag = static_cast<int>(std::floor(std::cbrt(static_cast<double>(T))));
  const double mean = d.mean();
  const Eigen::ArrayXd e = d.array() - mean;
  const double n = static_cast<double>(T);
  // Bartlett-weighted autocovariances; the weights keep the estimate non-negative.
  double v = e.square().sum() / n;
  for (int k = 1; k <= r.lag && k < T; ++k) {
    const double gamma = (e.tail(T - k) * e.head(T - k)).sum() / n;
    v += 2.0 * (1.0 - k / (r.lag + 1.0)) * gamma;
  }
  // A constant differential has no sampling variance; report no evidence either way.
  const double tiny = 1e-14 * d.cwiseAbs().maxCoeff();
  if (!(v > tiny * tiny)) {
    r.degenerate = true;
    return r;
  }
  r.statistic = mean / std::sqrt(v / n);
  r.p_value = norm_cdf(r.statistic);
  return r;
}

DmResult dm_test(const PredictionRun& run1, const PredictionRun& run2) {
  run1.validate();
  run2.validate();
  if (run1.dates != run2.dates) throw ShapeError("dm_test: runs cover different days");
  Eigen::VectorXd d(static_cast<Eigen::Index>(run1.days()));
  for (std::size_t t = 0; t < run1.days(); ++t) {
    if (run1.truth[t] != run2.truth[t] || run1.m[t] != run2.m[t] || run1.tau[t] != run2.tau[t]) {
      throw ShapeError("dm_test: runs differ in observed points on " + run1.dates[t]);
    }
    d(static_cast<Eigen::Index>(t)) = day_mse(run1, t) - day_mse(run2, t);
  }
  return dm_test(d);
}

ArbViolation arb_violation(const PredictionRun& run) {
  require_points(run, "arb_violation");
  ArbViolation a;
  for (std::size_t t = 0; t < run.days(); ++t) {
    a.cal += run.cal[t].array().min(0.0).sum();
    a.but += run.but[t].array().min(0.0).sum();
  }
  const double n = static_cast<double>(run.points());
  a.cal /= n;
  a.but /= n;
  return a;
}

// Backtest ---------------------------------------------------------------

ModelTag parse_model_tag(const std::string& s) {
  if (s == "dfw") return {s, true, FeatureMethod::sam, Step2::dfw};
  const auto dash = s.find('-');
  if (dash == std::string::npos) throw ConfigError("unknown model '" + s + "'");
  const std::string step2 = s.substr(dash + 1);
  if (step2 != "dnn" && step2 != "dfw") throw ConfigError("unknown model '" + s + "' (step 2 must be dnn or dfw)");
  return {s, false, feature_method_from_string(s.substr(0, dash)), step2 == "dnn" ? Step2::dnn : Step2::dfw};
}

std::vector<std::string> all_model_tags() {
  return {"sam-dnn", "sam-dfw", "pca-dnn", "pca-dfw", "vae-dnn", "vae-dfw", "dfw"};
}

DfwCoeffs dfw_on_grid(const FixedGrid& grid, const Eigen::VectorXd& F) {
  if (F.size() != static_cast<Eigen::Index>(grid.size())) throw ShapeError("decoded surface does not match the grid");
  std::vector<SurfacePoint> pts;
  pts.reserve(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) pts.push_back(grid.node(k, F(static_cast<Eigen::Index>(k))));
  return fit_dfw(pts);
}

namespace {

LocalDerivs<ArrayXd> dfw_block(const DfwCoeffs& c, const Eigen::Matrix2Xd& coords) {
  const Eigen::Index n = coords.cols();
  LocalDerivs<ArrayXd> d{ArrayXd(n), ArrayXd(n), ArrayXd(n), ArrayXd(n)};
  for (Eigen::Index k = 0; k < n; ++k) {
    const LocalDerivs<double> p = dfw_derivs(c, coords(0, k), coords(1, k));
    d.vol(k) = p.vol;
    d.d_tau(k) = p.d_tau;
    d.d_m(k) = p.d_m;
    d.d_mm(k) = p.d_mm;
  }
  return d;
}

}  // namespace

PredictionRun run_backtest(const Panel& panel, std::size_t begin, std::size_t end, const ModelTag& tag,
                           const PipelineModels& models) {
  if (end > panel.days() || begin >= end) throw BoundsError("backtest: empty or out-of-range day range");
  const std::span<const SurfaceSnapshot> days(panel.snapshots.data() + begin, end - begin);

  if (tag.benchmark) {
    if (begin < 1) throw BoundsError("backtest: the DFW benchmark needs a previous day");
    std::vector<DfwCoeffs> coeffs;
    for (std::size_t t = begin; t < end; ++t) coeffs.push_back(fit_dfw(panel.snapshots[t - 1].points));
    return evaluate_surfaces(tag.name, days, [&](std::size_t i, const Eigen::Matrix2Xd& c) {
      return dfw_block(coeffs[i], c);
    });
  }

  if (!models.features || !models.predictor) throw StateError("backtest '" + tag.name + "': missing feature model or predictor");
  if (tag.step2 == Step2::dnn && !models.net) throw StateError("backtest '" + tag.name + "': missing surface net");
  if (models.features->method != tag.features) throw StateError("backtest '" + tag.name + "': feature model mismatch");
  if (begin < static_cast<std::size_t>(kLongWindow)) {
    throw BoundsError("backtest: the first predicted day needs " + std::to_string(kLongWindow) + " days of history");
  }
  const FeatureSeries z = models.features->series(std::span(panel.surfaces.data(), end));
  const Eigen::MatrixXd zhat = predict_range(*models.predictor, z.values, static_cast<Eigen::Index>(begin));
  std::vector<Eigen::VectorXd> F;
  for (Eigen::Index j = 0; j < zhat.cols(); ++j) F.push_back(models.features->decode(zhat.col(j)));

  if (tag.step2 == Step2::dnn) {
    return evaluate_surfaces(tag.name, days, [&](std::size_t i, const Eigen::Matrix2Xd& c) {
      return surface_derivs(*models.net, c, F[i]);
    });
  }
  std::vector<DfwCoeffs> coeffs;
  for (const auto& f : F) coeffs.push_back(dfw_on_grid(panel.grid, f));
  return evaluate_surfaces(tag.name, days, [&](std::size_t i, const Eigen::Matrix2Xd& c) {
    return dfw_block(coeffs[i], c);
  });
}

// Reports ----------------------------------------------------------------

namespace {
std::string num(double v) { return nn::format_double(v); }
}  // namespace

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << "model,split,RMSE,MAPE\n";
  for (const auto& r : rows) out << r.model << ',' << r.split << ',' << num(r.rmse) << ',' << num(r.mape) << '\n';
}

void write_daily_csv(std::ostream& out, const std::vector<PredictionRun>& runs) {
  out << "date,model,RMSE,MAPE\n";
  for (const auto& run : runs) {
    for (const auto& d : daily_errors(run)) out << d.date << ',' << run.model << ',' << num(d.rmse) << ',' << num(d.mape) << '\n';
  }
}

void write_dm_csv(std::ostream& out, const std::vector<PredictionRun>& runs) {
  out << "model1,model2,statistic,p\n";
  for (const auto& a : runs) {
    for (const auto& b : runs) {
      if (&a == &b) continue;
      const DmResult r = dm_test(a, b);
      out << a.model << ',' << b.model << ',' << num(r.statistic) << ',' << num(r.p_value) << '\n';
    }
  }
}

void write_violation_csv(std::ostream& out, const std::vector<PredictionRun>& runs) {
  out << "model,L_cal,L_but\n";
  for (const auto& run : runs) {
    const ArbViolation v = arb_violation(run);
    out << run.model << ',' << num(v.cal) << ',' << num(v.but) << '\n';
  }
}

}  // namespace ivs
