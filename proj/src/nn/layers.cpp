#include "ivs/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ivs/errors.hpp"

namespace ivs::nn {

Matrix xavier_init(int fan_in, Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  if (fan_in < 1) throw ConfigError("xavier_init: fan_in must be >= 1");
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix w(rows, cols);
  // Row-major fill so the draw order does not depend on Eigen's storage order.
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) w(i, j) = dist(rng);
  }
  return w;
}

Matrix xavier_init(int fan_in, Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return xavier_init(fan_in, rows, cols, rng);
}

Dense::Dense(const std::string& name, int fan_in, int fan_out, Activation act, std::mt19937_64& rng)
    : weight(name + ".weight", xavier_init(fan_in, fan_out, fan_in, rng)),
      bias(name + ".bias", Matrix::Zero(fan_out, 1)),
      activation(act) {}

Var Dense::forward(Graph& g, Var x) {
  if (x.rows() != fan_in()) {
    throw ShapeError("dense '" + weight.name + "': expected " + std::to_string(fan_in()) +
                     " input rows, got " + std::to_string(x.rows()));
  }
  return activate(activation, add_bias(matmul(g.param(weight), x), g.param(bias)));
}

Matrix Dense::eval(const Matrix& x) const {
  if (x.rows() != fan_in()) throw ShapeError("dense '" + weight.name + "': input shape mismatch");
  Matrix z = weight.value * x;
  z.colwise() += bias.value.col(0);
  return activate(activation, z);
}

BatchNorm::BatchNorm(Eigen::Index dim) : running_mean(Vector::Zero(dim)), running_var(Vector::Ones(dim)) {}

BatchNorm::Stats BatchNorm::batch_stats(const Matrix& x) {
  if (x.cols() < 1) throw ShapeError("batch_norm: empty batch");
  Stats s;
  s.mean = x.rowwise().mean();
  s.var = (x.colwise() - s.mean).array().square().rowwise().mean().matrix();
  return s;
}

void BatchNorm::update_running(const Stats& s) {
  if (s.mean.size() != dim()) throw ShapeError("batch_norm: statistics dimension mismatch");
  if (updates == 0) {
    running_mean = s.mean;
    running_var = s.var;
  } else {
    running_mean = (1.0 - momentum) * running_mean + momentum * s.mean;
    running_var = (1.0 - momentum) * running_var + momentum * s.var;
  }
  ++updates;
}

Matrix BatchNorm::normalize(const Matrix& x, const Stats& s) const {
  if (x.rows() != s.mean.size()) {
    throw ShapeError("batch_norm: expected " + std::to_string(s.mean.size()) + " features, got " +
                     std::to_string(x.rows()));
  }
  const Vector inv_sd = (s.var.array() + eps).rsqrt().matrix();
  return inv_sd.asDiagonal() * (x.colwise() - s.mean);
}

Matrix BatchNorm::eval(const Matrix& x) const { return normalize(x, running()); }

Var BatchNorm::forward(Graph& g, Var x, Mode mode) {
  if (x.rows() != dim()) throw ShapeError("batch_norm: input dimension mismatch");
  if (mode == Mode::eval) {
    const Vector inv_sd = (running_var.array() + eps).rsqrt().matrix();
    Matrix out = normalize(x.value(), running());
    return g.record(std::move(out), {x}, [inv_sd](const Matrix& grad, std::span<Matrix* const> pg) {
      if (pg[0]) *pg[0] += inv_sd.asDiagonal() * grad;
    });
  }

  const Stats s = batch_stats(x.value());
  update_running(s);
  const Vector inv_sd = (s.var.array() + eps).rsqrt().matrix();
  Matrix xhat = normalize(x.value(), s);
  Matrix xhat_copy = xhat;
  return g.record(std::move(xhat), {x},
                  [inv_sd, xhat = std::move(xhat_copy)](const Matrix& grad, std::span<Matrix* const> pg) {
                    if (!pg[0]) return;
                    // dx = (dy - mean(dy) - xhat * mean(dy . xhat)) / sd, row by row.
                    const Vector mean_g = grad.rowwise().mean();
                    const Vector mean_gx = grad.cwiseProduct(xhat).rowwise().mean();
                    Matrix centered = grad.colwise() - mean_g;
                    centered -= mean_gx.asDiagonal() * xhat;
                    *pg[0] += inv_sd.asDiagonal() * centered;
                  });
}

Mlp::Mlp(const std::string& name, const std::vector<int>& sizes, Activation hidden,
         Activation output, bool with_norm, std::mt19937_64& rng)
    : input_norm(with_norm) {
  if (sizes.size() < 2) throw ConfigError("mlp: need at least input and output sizes");
  if (input_norm) norm = BatchNorm(sizes.front());
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const bool last = i + 2 == sizes.size();
    layers.emplace_back(name + ".l" + std::to_string(i), sizes[i], sizes[i + 1], last ? output : hidden, rng);
  }
}

Var Mlp::forward(Graph& g, Var x, Mode mode) {
  Var h = input_norm ? norm.forward(g, x, mode) : x;
  for (auto& layer : layers) h = layer.forward(g, h);
  return h;
}

Matrix Mlp::eval(const Matrix& x) const {
  Matrix h = input_norm ? norm.eval(x) : x;
  for (const auto& layer : layers) h = layer.eval(h);
  return h;
}

std::vector<Parameter*> Mlp::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

void adam_update(Matrix& value, const Matrix& grad, AdamState& state, const AdamConfig& cfg, long step) {
  if (state.m.size() == 0) {
    state.m.setZero(value.rows(), value.cols());
    state.v.setZero(value.rows(), value.cols());
  }
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  value.array() -= cfg.learning_rate * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + cfg.eps);
}

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg)
    : params_(std::move(params)), state_(params_.size()), cfg_(cfg) {}

void Adam::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

void Adam::step() {
  ++step_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    adam_update(params_[i]->value, params_[i]->grad, state_[i], cfg_, step_);
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam moment coefficients must lie in [0, 1)");
  }
}

std::vector<std::vector<int>> make_minibatches(std::size_t n, int batch_size, std::mt19937_64& rng) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> batches;
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
    const auto stop = std::min(n, start + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(stop));
  }
  return batches;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  // splitmix64 finalizer over the combined words
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace ivs::nn
