#pragma once

// Surface construction network f(m, tau, F) trained on observed quotes with
// static-arbitrage penalties evaluated on synthetic grids.

#include <Eigen/Dense>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "ivs/core_surface.hpp"
#include "ivs/nn/layers.hpp"
#include "ivs/nn/serialize.hpp"

namespace ivs {

struct PenaltyGridConfig {
  double m_min = -0.5108256237659907;  // log 0.6
  double m_max = 0.6931471805599453;   // log 2
  double tau_max = 730.0 / 365.0;
  int m_parts = 40;                    // 41 nodes
  int tau_parts = 40;

  void validate() const;
};

struct PenaltyGrids {
  Eigen::VectorXd m34, tau34;  // I_C34 is their product
  Eigen::VectorXd m5, tau5;    // I_C5 is their product

  Eigen::Index size34() const { return m34.size() * tau34.size(); }
  Eigen::Index size5() const { return m5.size() * tau5.size(); }
};

PenaltyGrids build_penalty_grids(const PenaltyGridConfig& cfg = {});

/// One training or test day: decoded features F_t and its observed quotes.
struct ConstructorDay {
  std::string date;
  Eigen::VectorXd features;
  Eigen::VectorXd m, tau, vol;
};

/// Feed-forward net on (F, m, tau); inputs pass through batch-norm, hidden
/// layers are tanh, the output is Softplus.
struct SurfaceNet {
  nn::Mlp mlp;
  int feature_dim = 0;
  double fd_step = 1e-4;

  SurfaceNet() = default;
  SurfaceNet(int feature_dim, int hidden, int depth, std::mt19937_64& rng);

  std::vector<nn::Parameter*> parameters() { return mlp.parameters(); }

  nn::NetworkParams to_params() const;
  static SurfaceNet from_params(const nn::NetworkParams& p);
};

double surface_eval(const SurfaceNet& net, double m, double tau, const Eigen::VectorXd& F);
/// Vols at the columns of `coords` (rows m, tau) for one feature vector.
Eigen::VectorXd surface_eval(const SurfaceNet& net, const Eigen::Matrix2Xd& coords, const Eigen::VectorXd& F);
/// Central differences with step net.fd_step in both m and tau.
LocalDerivs<double> surface_derivs(const SurfaceNet& net, double m, double tau, const Eigen::VectorXd& F);
LocalDerivs<Eigen::ArrayXd> surface_derivs(const SurfaceNet& net, const Eigen::Matrix2Xd& coords,
                                           const Eigen::VectorXd& F);

struct PenaltyValues {
  double c3 = 0.0;  // mean of max(0, -ell_cal) over days x I_C34
  double c4 = 0.0;  // mean of max(0, -ell_but) over days x I_C34
  double c5 = 0.0;  // mean of large_m_term over days x I_C5
  double min_cal = 0.0;
  double min_but = 0.0;
  double max_large_m = 0.0;
};

/// Penalties for the feature vectors in the columns of F (eval mode).
PenaltyValues penalty_losses(const SurfaceNet& net, const Eigen::MatrixXd& F, const PenaltyGrids& grids);

struct ConstructorConfig {
  nn::TrainConfig train{20, 1024, 1e-3, 0};
  int hidden = 50;
  int depth = 3;
  double lambda = 1.0;
  // Days of each minibatch on which the penalties are evaluated.
  int penalty_days = 2;
  double fd_step = 1e-4;
  PenaltyGridConfig grids;

  void validate() const;
};

struct PenaltyRow {
  int epoch = 0;
  std::string split;  // train or test
  double ls = 0.0;
  double c3 = 0.0, c4 = 0.0, c5 = 0.0;
};

struct PenaltyReport {
  std::vector<PenaltyRow> rows;

  void write_csv(std::ostream& out) const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Taped L_S + lambda (L_C3 + L_C4 + L_C5). `rows` are (day, quote) pairs;
/// the penalties cover the listed days only, with I_C34 nodes taped where violated.
struct BatchLoss {
  nn::Var total;
  double ls = 0.0;
  PenaltyValues penalties;
};
BatchLoss constructor_loss(nn::Graph& g, SurfaceNet& net, const std::vector<ConstructorDay>& days,
                           const std::vector<std::pair<int, int>>& rows, const std::vector<int>& penalty_days,
                           const PenaltyGrids& grids, double lambda, nn::Mode mode);

/// Mean squared error of the net on every quote of `days`.
double quote_mse(const SurfaceNet& net, const std::vector<ConstructorDay>& days);

SurfaceNet train_constructor(const std::vector<ConstructorDay>& train, const ConstructorConfig& cfg,
                             PenaltyReport* report = nullptr, const std::vector<ConstructorDay>* test = nullptr);

}  // namespace ivs
