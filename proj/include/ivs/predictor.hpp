#pragma once

// One-step feature forecaster: an LSTM run for three steps over the 22-day
// mean, the 5-day mean and the current feature vector.

#include <Eigen/Dense>
#include <random>
#include <vector>

#include "ivs/features.hpp"
#include "ivs/nn/layers.hpp"
#include "ivs/nn/serialize.hpp"

namespace ivs {

inline constexpr int kLongWindow = 22;
inline constexpr int kMediumWindow = 5;

struct HorizonInputs {
  Eigen::VectorXd z1;  // 22-day mean
  Eigen::VectorXd z2;  // 5-day mean
  Eigen::VectorXd z3;  // current value
};

/// Inputs at day index t (0-based); columns 0..t of `values` are the history.
HorizonInputs build_inputs(const Eigen::MatrixXd& values, Eigen::Index t);
HorizonInputs build_inputs(const FeatureSeries& history, std::size_t t);

struct LstmParams {
  int input_dim = 0;
  int hidden = 0;
  nn::Parameter w_r, w_i, w_o, w_g;  // hidden x input
  nn::Parameter u_r, u_i, u_o, u_g;  // hidden x hidden
  nn::Parameter b_r, b_i, b_o, b_g;  // hidden x 1
  nn::Parameter w_y, b_y;            // readout y = tanh(W_y h + b_y)
  nn::Parameter w_out, b_out;        // head, input_dim x hidden
  nn::Activation output = nn::Activation::identity;  // relu or identity

  LstmParams() = default;
  LstmParams(int input_dim, int hidden, nn::Activation output, std::mt19937_64& rng);

  std::vector<nn::Parameter*> parameters();
};

/// The plain gate recurrence with h0 = c0 = 0 and Z = act(W_out y3 + b_out).
Eigen::VectorXd lstm_forward(const HorizonInputs& in, const LstmParams& p);

/// Taped recurrence for a batch; each input is input_dim x batch. Returns W_out y3 + b_out.
nn::Var lstm_head(nn::Graph& g, LstmParams& p, nn::Var x1, nn::Var x2, nn::Var x3);

struct PredictorConfig {
  nn::TrainConfig train{200, 128, 0.01, 0};
  int hidden = 12;
  double floor = 0.01;  // positive-feature floor (SAM only)
  // Predict Z_T plus a scaled correction instead of the level itself.
  bool residual = true;
  // Share of the latest training pairs held out to pick the best epoch; 0 trains all epochs on everything.
  double validation_fraction = 0.2;

  void validate() const;
};

/// LSTM plus the input normalization and output scaling around it.
struct Predictor {
  FeatureMethod method = FeatureMethod::sam;
  LstmParams cell;
  // SAM inputs pass through batch-norm; PCA/VAE through fixed standardization.
  bool batch_norm = true;
  nn::BatchNorm norm;
  Eigen::VectorXd in_mean, in_scale;
  Eigen::VectorXd out_mean, out_scale;
  bool residual = false;  // out_mean is replaced by the current value Z_T
  double floor = 0.0;

  Eigen::VectorXd predict(const HorizonInputs& in) const;
  /// Taped batch prediction in feature units; inputs are input_dim x batch.
  nn::Var forward(nn::Graph& g, const Eigen::MatrixXd& z1, const Eigen::MatrixXd& z2, const Eigen::MatrixXd& z3,
                  nn::Mode mode);
  /// Mean over columns of ||target - prediction||^2.
  nn::Var loss(nn::Graph& g, const Eigen::MatrixXd& z1, const Eigen::MatrixXd& z2, const Eigen::MatrixXd& z3,
               const Eigen::MatrixXd& target, nn::Mode mode);

  nn::NetworkParams to_params() const;
  static Predictor from_params(const nn::NetworkParams& p);
};

struct PredictorHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;   // empty when validation_fraction is 0
  std::vector<double> test_loss;  // empty unless a test range is supplied
};

/// Training pairs are (inputs at t, Z_{t+1}) for every t with a full 22-day window.
Predictor train_predictor(const FeatureSeries& features, const PredictorConfig& cfg,
                          PredictorHistory* history = nullptr, const FeatureSeries* test = nullptr);

/// One-step predictions of columns first..end-1 of `values`, each from the columns before it.
Eigen::MatrixXd predict_range(const Predictor& p, const Eigen::MatrixXd& values, Eigen::Index first);

/// Mean squared one-step error of `p` and of persistence Z_{t+1} = Z_t over columns first..end-1.
struct OneStepErrors {
  double model = 0.0;
  double persistence = 0.0;
};
OneStepErrors one_step_errors(const Predictor& p, const Eigen::MatrixXd& values, Eigen::Index first);

}  // namespace ivs
