#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ivs/nn/graph.hpp"
#include "ivs/nn/ops.hpp"

namespace ivs::nn {

enum class Mode { train, eval };

/// Entries i.i.d. uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Matrix xavier_init(int fan_in, Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng);
Matrix xavier_init(int fan_in, Eigen::Index rows, Eigen::Index cols, std::uint64_t seed);

/// Fully connected layer y = act(W x + b).
struct Dense {
  Parameter weight;
  Parameter bias;
  Activation activation = Activation::identity;

  Dense() = default;
  Dense(const std::string& name, int fan_in, int fan_out, Activation act, std::mt19937_64& rng);

  int fan_in() const { return static_cast<int>(weight.value.cols()); }
  int fan_out() const { return static_cast<int>(weight.value.rows()); }

  Var forward(Graph& g, Var x);
  Matrix eval(const Matrix& x) const;
};

/// Per-feature normalization of the network inputs (rows are features,
/// columns are samples). No learnable affine part: the following dense layer
/// absorbs it.
struct BatchNorm {
  struct Stats {
    Vector mean;
    Vector var;
  };

  Vector running_mean;
  Vector running_var;
  double momentum = 0.1;
  double eps = 1e-12;
  long updates = 0;

  BatchNorm() = default;
  explicit BatchNorm(Eigen::Index dim);

  Eigen::Index dim() const { return running_mean.size(); }

  static Stats batch_stats(const Matrix& x);
  /// The first update copies the batch statistics; later ones blend with `momentum`.
  void update_running(const Stats& s);
  Stats running() const { return {running_mean, running_var}; }
  Matrix normalize(const Matrix& x, const Stats& s) const;

  /// Train mode: batch statistics (differentiated through) and a running-stat
  /// update. Eval mode: the frozen running statistics.
  Var forward(Graph& g, Var x, Mode mode);
  Matrix eval(const Matrix& x) const;
};

/// Stack of dense layers, optionally preceded by input batch-norm.
struct Mlp {
  bool input_norm = false;
  BatchNorm norm;
  std::vector<Dense> layers;

  Mlp() = default;
  /// sizes = {in, hidden..., out}; hidden layers use `hidden`, the last `output`.
  Mlp(const std::string& name, const std::vector<int>& sizes, Activation hidden, Activation output,
      bool input_norm, std::mt19937_64& rng);

  int input_dim() const { return layers.front().fan_in(); }
  int output_dim() const { return layers.back().fan_out(); }

  Var forward(Graph& g, Var x, Mode mode);
  Matrix eval(const Matrix& x) const;
  std::vector<Parameter*> parameters();
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Matrix m;
  Matrix v;
};

/// One bias-corrected Adam update of `value`; `step` counts from 1.
void adam_update(Matrix& value, const Matrix& grad, AdamState& state, const AdamConfig& cfg, long step);

class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig cfg);

  void zero_grad();
  void step();
  long steps() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<AdamState> state_;
  AdamConfig cfg_;
  long step_ = 0;
};

struct TrainConfig {
  int epochs = 1;
  int batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
  AdamConfig adam() const { return {learning_rate, beta1, beta2, adam_eps}; }
};

/// Seeded shuffle of [0, n) cut into batches; the final short batch is kept.
std::vector<std::vector<int>> make_minibatches(std::size_t n, int batch_size, std::mt19937_64& rng);

/// Derives an independent stream seed from (base, stream).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace ivs::nn
