#include "ivs/features.hpp"

#include <cmath>
#include <random>

#include "ivs/errors.hpp"
#include "ivs/nn/ops.hpp"

namespace ivs {

using nn::Graph;
using nn::Matrix;
using nn::Var;

std::string to_string(FeatureMethod m) {
  switch (m) {
    case FeatureMethod::sam: return "sam";
    case FeatureMethod::pca: return "pca";
    case FeatureMethod::vae: return "vae";
  }
  return "sam";
}

FeatureMethod feature_method_from_string(const std::string& s) {
  if (s == "sam") return FeatureMethod::sam;
  if (s == "pca") return FeatureMethod::pca;
  if (s == "vae") return FeatureMethod::vae;
  throw ConfigError("unknown feature method '" + s + "' (expected sam, pca or vae)");
}

Eigen::VectorXd sam_extract(const GriddedSurface& g) { return g.vols; }

GriddedSurface sam_decode(const Eigen::VectorXd& z, std::string date) { return {std::move(date), z}; }

// PCA ---------------------------------------------------------------------

Eigen::VectorXd PcaBasis::explained_variance() const {
  const Eigen::VectorXd v = eigenvalues.cwiseMax(0.0);
  const double total = v.sum();
  if (!(total > 0.0)) return Eigen::VectorXd::Zero(v.size());
  return v / total;
}

nn::NetworkParams PcaBasis::to_params() const {
  nn::NetworkParams p;
  p.architecture = "pca_basis";
  p.add("x0", x0);
  p.add("eigenvalues", eigenvalues);
  p.add("eigenvectors", eigenvectors);
  p.set_number("k", k);
  return p;
}

PcaBasis PcaBasis::from_params(const nn::NetworkParams& p) {
  p.expect_architecture("pca_basis");
  PcaBasis b;
  b.x0 = p.tensor("x0");
  b.eigenvalues = p.tensor("eigenvalues");
  b.eigenvectors = p.tensor("eigenvectors");
  b.k = static_cast<int>(p.number("k"));
  const auto n = b.x0.size();
  if (b.eigenvalues.size() != n || b.eigenvectors.rows() != n || b.eigenvectors.cols() != n || b.k < 1 || b.k > n) {
    throw FormatError("pca_basis: inconsistent shapes");
  }
  return b;
}

PcaBasis pca_fit(std::span<const GriddedSurface> train, int k) {
  if (train.size() < 3) throw DataError("pca_fit: need at least 3 days (2 differences)");
  const Eigen::Index dim = train.front().vols.size();
  if (k < 1 || k > dim) throw ConfigError("pca_fit: component count must lie in [1, grid size]");
  for (const auto& g : train) {
    if (g.vols.size() != dim) throw ShapeError("pca_fit: surfaces have different sizes");
    if (!(g.vols.array() > 0.0).all()) throw DataError("pca_fit: vols must be positive");
  }

  const auto n = static_cast<Eigen::Index>(train.size()) - 1;
  Matrix u(dim, n);
  for (Eigen::Index t = 0; t < n; ++t) {
    u.col(t) = train[static_cast<std::size_t>(t + 1)].vols.array().log() -
               train[static_cast<std::size_t>(t)].vols.array().log();
  }
  const Eigen::VectorXd mean = u.rowwise().mean();
  u.colwise() -= mean;
  const Matrix cov = u * u.transpose() / static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  if (es.info() != Eigen::Success) throw NumericalError("pca_fit: eigen decomposition failed");

  PcaBasis b;
  b.k = k;
  b.x0 = train.front().vols.array().log();
  b.eigenvalues = es.eigenvalues().reverse();
  b.eigenvectors = es.eigenvectors().rowwise().reverse();
  for (Eigen::Index j = 0; j < dim; ++j) {
    Eigen::Index arg;
    b.eigenvectors.col(j).cwiseAbs().maxCoeff(&arg);
    if (b.eigenvectors(arg, j) < 0.0) b.eigenvectors.col(j) *= -1.0;
  }
  return b;
}

Eigen::VectorXd pca_encode(const GriddedSurface& g, const PcaBasis& basis, int k) {
  if (k < 1 || k > basis.eigenvectors.cols()) {
    throw ConfigError("pca_encode: K=" + std::to_string(k) + " exceeds the basis size " +
                      std::to_string(basis.eigenvectors.cols()));
  }
  if (g.vols.size() != basis.x0.size()) throw ShapeError("pca_encode: surface size does not match the basis");
  const Eigen::VectorXd x = g.vols.array().log().matrix() - basis.x0;
  return basis.eigenvectors.leftCols(k).transpose() * x;
}

GriddedSurface pca_decode(const Eigen::VectorXd& coeffs, const PcaBasis& basis, std::string date) {
  if (coeffs.size() > basis.eigenvectors.cols()) throw ShapeError("pca_decode: more coefficients than basis vectors");
  const Eigen::VectorXd x = basis.x0 + basis.eigenvectors.leftCols(coeffs.size()) * coeffs;
  return {std::move(date), x.array().exp()};
}

// VAE ---------------------------------------------------------------------

void VaeConfig::validate(Eigen::Index input_dim) const {
  if (latent_dim < 1) throw ConfigError("vae: latent dimension must be >= 1");
  if (latent_dim > input_dim) throw ConfigError("vae: latent dimension exceeds the grid size");
  if (!(beta >= 0.0)) throw ConfigError("vae: beta must be >= 0");
  if (hidden < 1 || depth < 1) throw ConfigError("vae: hidden width and depth must be >= 1");
  train.validate();
}

double vae_kl(const Eigen::VectorXd& mu, const Eigen::VectorXd& log_sigma) {
  if (mu.size() != log_sigma.size()) throw ShapeError("vae_kl: mu and sigma sizes differ");
  double s = 0.0;
  for (Eigen::Index k = 0; k < mu.size(); ++k) {
    s += -1.0 - 2.0 * log_sigma(k) + std::exp(2.0 * log_sigma(k)) + mu(k) * mu(k);
  }
  return 0.5 * s;
}

Var vae_kl(Var mu, Var log_sigma) {
  const double batch = static_cast<double>(mu.cols());
  const double d = static_cast<double>(mu.rows());
  Var terms = sum(exp(nn::scale(log_sigma, 2.0))) + sum(nn::square(mu)) - nn::scale(sum(log_sigma), 2.0);
  return nn::scale(add_scalar(terms, -d * batch), 0.5 / batch);
}

namespace {

std::vector<int> widths(int in, int hidden, int depth, int out) {
  std::vector<int> w{in};
  for (int i = 0; i < depth; ++i) w.push_back(hidden);
  w.push_back(out);
  return w;
}

Matrix stack(std::span<const GriddedSurface> surfaces, const std::vector<int>& idx) {
  Matrix y(surfaces.front().vols.size(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) y.col(static_cast<Eigen::Index>(j)) = surfaces[idx[j]].vols;
  return y;
}

}  // namespace

VaeModel vae_init(Eigen::Index input_dim, const VaeConfig& cfg) {
  cfg.validate(input_dim);
  std::mt19937_64 rng(nn::derive_seed(cfg.train.seed, 1));
  const int in = static_cast<int>(input_dim);
  VaeModel m;
  m.latent_dim = cfg.latent_dim;
  m.beta = cfg.beta;
  m.encoder = nn::Mlp("enc", widths(in, cfg.hidden, cfg.depth, 2 * cfg.latent_dim), nn::Activation::tanh,
                      nn::Activation::identity, true, rng);
  m.decoder = nn::Mlp("dec", widths(cfg.latent_dim, cfg.hidden, cfg.depth, in), nn::Activation::tanh,
                      nn::Activation::identity, false, rng);
  m.y_mean = Eigen::VectorXd::Zero(input_dim);
  m.y_scale = Eigen::VectorXd::Ones(input_dim);
  return m;
}

Var vae_loss(Graph& g, VaeModel& model, const Matrix& surfaces, const Matrix& noise, nn::Mode mode, Var* re_out,
             Var* kl_out) {
  const int d = model.latent_dim;
  if (noise.rows() != d || noise.cols() != surfaces.cols()) throw ShapeError("vae_loss: noise shape mismatch");
  Var enc = model.encoder.forward(g, g.constant(surfaces), mode);
  Var mu = nn::slice_rows(enc, 0, d);
  Var log_sigma = nn::slice_rows(enc, d, d);
  Var h = mu + hadamard(nn::exp(log_sigma), g.constant(noise));
  Var out = model.decoder.forward(g, h, mode);

  const Matrix target = model.y_scale.cwiseInverse().asDiagonal() * (surfaces.colwise() - model.y_mean);
  Var re = nn::scale(sum(nn::square(out - g.constant(target))), 1.0 / static_cast<double>(surfaces.cols()));
  Var kl = vae_kl(mu, log_sigma);
  if (re_out) *re_out = re;
  if (kl_out) *kl_out = kl;
  return re + nn::scale(kl, model.beta);
}

VaeModel vae_train(std::span<const GriddedSurface> train, const VaeConfig& cfg, VaeHistory* history) {
  if (train.empty()) throw DataError("vae_train: empty training set");
  const Eigen::Index dim = train.front().vols.size();
  VaeModel model = vae_init(dim, cfg);

  std::vector<int> all(train.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  const Matrix y = stack(train, all);
  model.y_mean = y.rowwise().mean();
  const Eigen::VectorXd sd = ((y.colwise() - model.y_mean).array().square().rowwise().mean()).sqrt();
  model.y_scale = (sd.array() > 1e-12).select(sd, 1.0);

  std::vector<nn::Parameter*> params = model.encoder.parameters();
  for (auto* p : model.decoder.parameters()) params.push_back(p);
  nn::Adam adam(params, cfg.train.adam());
  std::mt19937_64 batch_rng(nn::derive_seed(cfg.train.seed, 2));
  std::mt19937_64 noise_rng(nn::derive_seed(cfg.train.seed, 3));
  std::normal_distribution<double> normal(0.0, 1.0);

  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    double loss_sum = 0.0, re_sum = 0.0, kl_sum = 0.0;
    for (const auto& batch : nn::make_minibatches(train.size(), cfg.train.batch_size, batch_rng)) {
      const Matrix yb = stack(train, batch);
      Matrix eps(cfg.latent_dim, yb.cols());
      for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = normal(noise_rng);

      Graph g;
      Var re, kl;
      Var loss = vae_loss(g, model, yb, eps, nn::Mode::train, &re, &kl);
      const double lv = loss.value()(0, 0);
      if (!std::isfinite(lv)) throw NumericalError("vae_train: non-finite loss at epoch " + std::to_string(epoch));
      adam.zero_grad();
      g.backward(loss, params);
      adam.step();
      const double w = static_cast<double>(batch.size());
      loss_sum += w * lv;
      re_sum += w * re.value()(0, 0);
      kl_sum += w * kl.value()(0, 0);
    }
    if (history) {
      const double n = static_cast<double>(train.size());
      history->loss.push_back(loss_sum / n);
      history->re.push_back(re_sum / n);
      history->kl.push_back(kl_sum / n);
    }
  }
  model.trained = true;
  return model;
}

Eigen::VectorXd vae_encode(const VaeModel& model, const GriddedSurface& g) {
  if (!model.trained) throw StateError("vae_encode: model has not been trained");
  if (g.vols.size() != model.encoder.input_dim()) throw ShapeError("vae_encode: surface size mismatch");
  return model.encoder.eval(g.vols).topRows(model.latent_dim);
}

GriddedSurface vae_decode(const VaeModel& model, const Eigen::VectorXd& z, std::string date) {
  if (!model.trained) throw StateError("vae_decode: model has not been trained");
  if (z.size() != model.latent_dim) {
    throw ShapeError("vae_decode: expected " + std::to_string(model.latent_dim) + " latent values, got " +
                     std::to_string(z.size()));
  }
  const Eigen::VectorXd out = model.decoder.eval(z);
  return {std::move(date), model.y_mean + model.y_scale.cwiseProduct(out)};
}

double vae_reconstruction_error(const VaeModel& model, std::span<const GriddedSurface> surfaces) {
  if (surfaces.empty()) throw DataError("vae_reconstruction_error: no surfaces");
  double total = 0.0;
  for (const auto& g : surfaces) total += (vae_decode(model, vae_encode(model, g)).vols - g.vols).squaredNorm();
  return total / static_cast<double>(surfaces.size());
}

nn::NetworkParams VaeModel::to_params() const {
  if (!trained) throw StateError("vae: cannot save an untrained model");
  nn::NetworkParams p;
  p.architecture = "vae";
  nn::store_mlp(p, "enc", encoder);
  nn::store_mlp(p, "dec", decoder);
  p.add("y_mean", y_mean);
  p.add("y_scale", y_scale);
  p.set_number("latent_dim", latent_dim);
  p.set_number("beta", beta);
  return p;
}

VaeModel VaeModel::from_params(const nn::NetworkParams& p) {
  p.expect_architecture("vae");
  VaeModel m;
  m.encoder = nn::restore_mlp(p, "enc");
  m.decoder = nn::restore_mlp(p, "dec");
  m.latent_dim = static_cast<int>(p.number("latent_dim"));
  m.beta = p.number("beta");
  m.y_mean = p.tensor("y_mean");
  m.y_scale = p.tensor("y_scale");
  if (m.encoder.output_dim() != 2 * m.latent_dim || m.decoder.input_dim() != m.latent_dim ||
      m.decoder.output_dim() != m.encoder.input_dim() || m.y_mean.size() != m.decoder.output_dim() ||
      m.y_scale.size() != m.decoder.output_dim()) {
    throw FormatError("vae: encoder/decoder shapes are inconsistent");
  }
  m.trained = true;
  return m;
}

// Front end ---------------------------------------------------------------

Eigen::VectorXd FeatureModel::encode(const GriddedSurface& g) const {
  switch (method) {
    case FeatureMethod::sam: return sam_extract(g);
    case FeatureMethod::pca:
      if (!pca) throw StateError("pca feature model has no basis");
      return pca_encode(g, *pca, pca->k);
    case FeatureMethod::vae:
      if (!vae) throw StateError("vae feature model is missing");
      return vae_encode(*vae, g);
  }
  throw StateError("unknown feature method");
}

Eigen::VectorXd FeatureModel::decode(const Eigen::VectorXd& z) const {
  switch (method) {
    case FeatureMethod::sam: return z;
    case FeatureMethod::pca:
      if (!pca) throw StateError("pca feature model has no basis");
      return pca_decode(z, *pca).vols;
    case FeatureMethod::vae:
      if (!vae) throw StateError("vae feature model is missing");
      return vae_decode(*vae, z).vols;
  }
  throw StateError("unknown feature method");
}

FeatureSeries FeatureModel::series(std::span<const GriddedSurface> surfaces) const {
  FeatureSeries s;
  s.method = method;
  if (surfaces.empty()) return s;
  const Eigen::VectorXd first = encode(surfaces.front());
  s.values.resize(first.size(), static_cast<Eigen::Index>(surfaces.size()));
  for (std::size_t t = 0; t < surfaces.size(); ++t) {
    s.values.col(static_cast<Eigen::Index>(t)) = t == 0 ? first : encode(surfaces[t]);
    s.dates.push_back(surfaces[t].date);
  }
  return s;
}

void FeatureModel::save(const std::filesystem::path& path) const {
  switch (method) {
    case FeatureMethod::sam: throw StateError("sam features have no model file");
    case FeatureMethod::pca: nn::save_params(pca.value().to_params(), path); return;
    case FeatureMethod::vae: nn::save_params(vae.value().to_params(), path); return;
  }
}

FeatureModel FeatureModel::load(const std::filesystem::path& path, FeatureMethod expected) {
  FeatureModel fm;
  fm.method = expected;
  if (expected == FeatureMethod::sam) return fm;
  const auto p = nn::load_params(path);
  if (expected == FeatureMethod::pca) {
    fm.pca = PcaBasis::from_params(p);
  } else {
    fm.vae = VaeModel::from_params(p);
  }
  return fm;
}

}  // namespace ivs
