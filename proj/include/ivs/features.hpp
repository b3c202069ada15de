#pragma once

// Feature extraction Z_t = g(surface) and decoding F = h(Z) for the three
// methods: direct grid sampling (SAM), log-difference principal components
// (PCA) and the latent mean of a variational autoencoder (VAE).

#include <Eigen/Dense>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ivs/dataset.hpp"
#include "ivs/nn/layers.hpp"
#include "ivs/nn/serialize.hpp"

namespace ivs {

enum class FeatureMethod { sam, pca, vae };

std::string to_string(FeatureMethod m);
FeatureMethod feature_method_from_string(const std::string& s);

/// Feature vectors over time; column t is Z_t.
struct FeatureSeries {
  FeatureMethod method = FeatureMethod::sam;
  std::vector<std::string> dates;
  Eigen::MatrixXd values;

  Eigen::Index dim() const { return values.rows(); }
  std::size_t size() const { return static_cast<std::size_t>(values.cols()); }
};

// SAM ---------------------------------------------------------------------

Eigen::VectorXd sam_extract(const GriddedSurface& g);
GriddedSurface sam_decode(const Eigen::VectorXd& z, std::string date = {});

// PCA ---------------------------------------------------------------------

struct PcaBasis {
  Eigen::VectorXd x0;            // log-surface of the first training day
  Eigen::VectorXd eigenvalues;   // descending
  Eigen::MatrixXd eigenvectors;  // column k is f_k
  int k = 3;                     // retained components

  Eigen::VectorXd explained_variance() const;
  nn::NetworkParams to_params() const;
  static PcaBasis from_params(const nn::NetworkParams& p);
};

PcaBasis pca_fit(std::span<const GriddedSurface> train, int k = 3);
Eigen::VectorXd pca_encode(const GriddedSurface& g, const PcaBasis& basis, int k);
GriddedSurface pca_decode(const Eigen::VectorXd& coeffs, const PcaBasis& basis, std::string date = {});

// VAE ---------------------------------------------------------------------

struct VaeConfig {
  int latent_dim = 10;
  double beta = 1e-3;
  int hidden = 128;
  int depth = 3;
  nn::TrainConfig train{300, 32, 1e-3, 0};

  void validate(Eigen::Index input_dim) const;
};

struct VaeModel {
  nn::Mlp encoder;  // input batch-norm, outputs [mu; log sigma]
  nn::Mlp decoder;  // outputs standardized surfaces
  int latent_dim = 0;
  double beta = 0.0;
  Eigen::VectorXd y_mean;  // target standardization from the training set
  Eigen::VectorXd y_scale;
  bool trained = false;

  nn::NetworkParams to_params() const;
  static VaeModel from_params(const nn::NetworkParams& p);
};

struct VaeHistory {
  std::vector<double> loss;
  std::vector<double> re;
  std::vector<double> kl;
};

/// KL divergence of N(mu, diag(exp(log_sigma))^2) from N(0, I), per sample.
double vae_kl(const Eigen::VectorXd& mu, const Eigen::VectorXd& log_sigma);
/// Batch mean of the KL over columns, taped.
nn::Var vae_kl(nn::Var mu, nn::Var log_sigma);

/// RE + beta KL for one batch (columns are surfaces) with the given reparameterization noise.
nn::Var vae_loss(nn::Graph& g, VaeModel& model, const Eigen::MatrixXd& surfaces, const Eigen::MatrixXd& noise,
                 nn::Mode mode, nn::Var* re_out = nullptr, nn::Var* kl_out = nullptr);

VaeModel vae_init(Eigen::Index input_dim, const VaeConfig& cfg);
VaeModel vae_train(std::span<const GriddedSurface> train, const VaeConfig& cfg, VaeHistory* history = nullptr);
/// Mean over surfaces of ||Y - decode(encode(Y))||^2 in vol units.
double vae_reconstruction_error(const VaeModel& model, std::span<const GriddedSurface> surfaces);
Eigen::VectorXd vae_encode(const VaeModel& model, const GriddedSurface& g);
GriddedSurface vae_decode(const VaeModel& model, const Eigen::VectorXd& z, std::string date = {});

// Uniform front end ------------------------------------------------------

/// One fitted feature map with its decoder h.
struct FeatureModel {
  FeatureMethod method = FeatureMethod::sam;
  std::optional<PcaBasis> pca;
  std::optional<VaeModel> vae;

  Eigen::VectorXd encode(const GriddedSurface& g) const;
  Eigen::VectorXd decode(const Eigen::VectorXd& z) const;
  FeatureSeries series(std::span<const GriddedSurface> surfaces) const;
  /// Whether every feature is positive by construction.
  bool positive() const { return method == FeatureMethod::sam; }

  void save(const std::filesystem::path& path) const;
  static FeatureModel load(const std::filesystem::path& path, FeatureMethod expected);
};

}  // namespace ivs
