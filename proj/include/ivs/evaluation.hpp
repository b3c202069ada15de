#pragma once

// Out-of-sample evaluation: the rolling backtest over test days, pooled
// RMSE/MAPE, the Diebold-Mariano comparison and arbitrage-violation means.

#include <Eigen/Dense>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ivs/constructor.hpp"
#include "ivs/dataset.hpp"
#include "ivs/features.hpp"
#include "ivs/interpolation.hpp"
#include "ivs/predictor.hpp"

namespace ivs {

/// Predicted and true vols at each day's observed points, with ell_cal and
/// ell_but of the predicted surface at the same points.
struct PredictionRun {
  std::string model;
  std::vector<std::string> dates;
  std::vector<Eigen::VectorXd> m, tau;
  std::vector<Eigen::VectorXd> truth, predicted;
  std::vector<Eigen::VectorXd> cal, but;

  std::size_t days() const { return dates.size(); }
  std::size_t points() const;
  /// Throws ShapeError unless every per-day vector lines up.
  void validate() const;
};

/// Value and derivatives of a predicted surface on day `day` at the columns of `coords`.
using SurfaceEvaluator = std::function<LocalDerivs<Eigen::ArrayXd>(std::size_t day, const Eigen::Matrix2Xd& coords)>;

/// Evaluates `f` at every observed point of `truth`.
PredictionRun evaluate_surfaces(std::string model, std::span<const SurfaceSnapshot> truth, const SurfaceEvaluator& f);

double rmse(const PredictionRun& run);
/// Mean absolute percentage error as a fraction (0.075 is 7.5%).
double mape(const PredictionRun& run);

struct DailyError {
  std::string date;
  double rmse = 0.0;
  double mape = 0.0;
};
std::vector<DailyError> daily_errors(const PredictionRun& run);

struct DmResult {
  double statistic = 0.0;
  double p_value = 0.5;  // lower tail: small when model 1 has the smaller loss
  std::size_t n = 0;
  int lag = 0;
  std::string variance = "bartlett_hac";
  bool degenerate = false;
};

/// DM test on a loss-differential series d_t.
DmResult dm_test(const Eigen::VectorXd& d);
/// d_t = (day-t MSE of run1) - (day-t MSE of run2).
DmResult dm_test(const PredictionRun& run1, const PredictionRun& run2);

struct ArbViolation {
  double cal = 0.0;  // mean of min(ell_cal, 0)
  double but = 0.0;  // mean of min(ell_but, 0)
};
ArbViolation arb_violation(const PredictionRun& run);

// Backtest ---------------------------------------------------------------

enum class Step2 { dnn, dfw };

/// One of sam-dnn, sam-dfw, pca-dnn, pca-dfw, vae-dnn, vae-dfw, or the dfw benchmark.
struct ModelTag {
  std::string name;
  bool benchmark = false;
  FeatureMethod features = FeatureMethod::sam;
  Step2 step2 = Step2::dnn;
};

ModelTag parse_model_tag(const std::string& s);
std::vector<std::string> all_model_tags();

struct PipelineModels {
  const FeatureModel* features = nullptr;
  const Predictor* predictor = nullptr;
  const SurfaceNet* net = nullptr;  // DNN step 2 only
};

/// Predicts days [begin, end) of `panel`, each from the days before it. The
/// benchmark uses the previous day's DFW fit; the others forecast Z_t, decode
/// it to F_t and evaluate the step-2 surface at the day's observed points.
PredictionRun run_backtest(const Panel& panel, std::size_t begin, std::size_t end, const ModelTag& tag,
                           const PipelineModels& models = {});

/// DFW fit to the decoded surface F on the nodes of `grid`.
DfwCoeffs dfw_on_grid(const FixedGrid& grid, const Eigen::VectorXd& F);

// Reports ----------------------------------------------------------------

struct SummaryRow {
  std::string model;
  std::string split;
  double rmse = 0.0;
  double mape = 0.0;
};

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows);
void write_daily_csv(std::ostream& out, const std::vector<PredictionRun>& runs);
/// Every ordered pair of distinct runs.
void write_dm_csv(std::ostream& out, const std::vector<PredictionRun>& runs);
void write_violation_csv(std::ostream& out, const std::vector<PredictionRun>& runs);

}  // namespace ivs
