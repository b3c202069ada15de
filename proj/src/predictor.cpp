#include "ivs/predictor.hpp"

#include <cmath>

#include "ivs/errors.hpp"

namespace ivs {

using nn::Graph;
using nn::Matrix;
using nn::Var;

HorizonInputs build_inputs(const Eigen::MatrixXd& values, Eigen::Index t) {
  if (t < 0 || t >= values.cols()) throw BoundsError("build_inputs: day index out of range");
  if (t + 1 < kLongWindow) {
    throw DataError("build_inputs: need " + std::to_string(kLongWindow) + " days of history, have " +
                    std::to_string(t + 1));
  }
  HorizonInputs in;
  in.z1 = values.middleCols(t + 1 - kLongWindow, kLongWindow).rowwise().mean();
  in.z2 = values.middleCols(t + 1 - kMediumWindow, kMediumWindow).rowwise().mean();
  in.z3 = values.col(t);
  return in;
}

HorizonInputs build_inputs(const FeatureSeries& history, std::size_t t) {
  return build_inputs(history.values, static_cast<Eigen::Index>(t));
}

LstmParams::LstmParams(int n, int h, nn::Activation out, std::mt19937_64& rng)
    : input_dim(n), hidden(h), output(out) {
  if (n <= 0 || h <= 0) throw ConfigError("lstm: dimensions must be positive");
  if (out != nn::Activation::relu && out != nn::Activation::identity) {
    throw ConfigError("lstm: output activation must be relu or identity");
  }
  auto w = [&](const char* name, int rows, int cols) {
    return nn::Parameter(std::string("lstm.") + name, nn::xavier_init(cols, rows, cols, rng));
  };
  auto zero = [](const char* name, int rows) { return nn::Parameter(std::string("lstm.") + name, Matrix::Zero(rows, 1)); };
  w_r = w("w_r", h, n); w_i = w("w_i", h, n); w_o = w("w_o", h, n); w_g = w("w_g", h, n);
  u_r = w("u_r", h, h); u_i = w("u_i", h, h); u_o = w("u_o", h, h); u_g = w("u_g", h, h);
  // forget-gate bias starts at 1 so the cell keeps state early in training
  b_r = nn::Parameter("lstm.b_r", Matrix::Ones(h, 1));
  b_i = zero("b_i", h); b_o = zero("b_o", h); b_g = zero("b_g", h);
  w_y = w("w_y", h, h); b_y = zero("b_y", h);
  w_out = w("w_out", n, h); b_out = zero("b_out", n);
}

std::vector<nn::Parameter*> LstmParams::parameters() {
  return {&w_r, &w_i, &w_o, &w_g, &u_r, &u_i, &u_o, &u_g, &b_r, &b_i, &b_o, &b_g, &w_y, &b_y, &w_out, &b_out};
}

namespace {

Matrix sigmoid(const Matrix& x) { return nn::activate(nn::Activation::sigmoid, x); }
Matrix tanh_m(const Matrix& x) { return nn::activate(nn::Activation::tanh, x); }

// Untaped recurrence; columns of x are samples. Returns W_out y3 + b_out.
Matrix head_eval(const LstmParams& p, const Matrix& x1, const Matrix& x2, const Matrix& x3) {
  const Eigen::Index b = x1.cols();
  Matrix h = Matrix::Zero(p.hidden, b), c = Matrix::Zero(p.hidden, b), y;
  for (const Matrix* x : {&x1, &x2, &x3}) {
    const Matrix r = sigmoid((p.w_r.value * *x + p.u_r.value * h).colwise() + p.b_r.value.col(0));
    const Matrix i = sigmoid((p.w_i.value * *x + p.u_i.value * h).colwise() + p.b_i.value.col(0));
    const Matrix o = sigmoid((p.w_o.value * *x + p.u_o.value * h).colwise() + p.b_o.value.col(0));
    const Matrix gg = tanh_m((p.w_g.value * *x + p.u_g.value * h).colwise() + p.b_g.value.col(0));
    c = r.cwiseProduct(c) + i.cwiseProduct(gg);
    h = o.cwiseProduct(tanh_m(c));
    y = tanh_m((p.w_y.value * h).colwise() + p.b_y.value.col(0));
  }
  return (p.w_out.value * y).colwise() + p.b_out.value.col(0);
}

void check_inputs(const HorizonInputs& in, Eigen::Index n) {
  if (in.z1.size() != n || in.z2.size() != n || in.z3.size() != n) {
    throw ShapeError("lstm: expected inputs of size " + std::to_string(n));
  }
}

}  // namespace

Eigen::VectorXd lstm_forward(const HorizonInputs& in, const LstmParams& p) {
  check_inputs(in, p.input_dim);
  return nn::activate(p.output, head_eval(p, in.z1, in.z2, in.z3)).col(0);
}

Var lstm_head(Graph& g, LstmParams& p, Var x1, Var x2, Var x3) {
  const Eigen::Index b = x1.cols();
  Var wr = g.param(p.w_r), wi = g.param(p.w_i), wo = g.param(p.w_o), wg = g.param(p.w_g);
  Var ur = g.param(p.u_r), ui = g.param(p.u_i), uo = g.param(p.u_o), ug = g.param(p.u_g);
  Var br = g.param(p.b_r), bi = g.param(p.b_i), bo = g.param(p.b_o), bg = g.param(p.b_g);
  Var wy = g.param(p.w_y), by = g.param(p.b_y);

  using nn::Activation;
  auto gate = [&](Var w, Var u, Var bias, Var x, Var h, Activation a) {
    return nn::activate(a, nn::add_bias(nn::matmul(w, x) + nn::matmul(u, h), bias));
  };
  Var h = g.constant(Matrix::Zero(p.hidden, b));
  Var c = g.constant(Matrix::Zero(p.hidden, b));
  Var y;
  for (Var x : {x1, x2, x3}) {
    Var r = gate(wr, ur, br, x, h, Activation::sigmoid);
    Var i = gate(wi, ui, bi, x, h, Activation::sigmoid);
    Var o = gate(wo, uo, bo, x, h, Activation::sigmoid);
    Var gg = gate(wg, ug, bg, x, h, Activation::tanh);
    c = nn::hadamard(r, c) + nn::hadamard(i, gg);
    h = nn::hadamard(o, nn::activate(Activation::tanh, c));
    y = nn::activate(Activation::tanh, nn::add_bias(nn::matmul(wy, h), by));
  }
  return nn::add_bias(nn::matmul(g.param(p.w_out), y), g.param(p.b_out));
}

void PredictorConfig::validate() const {
  train.validate();
  if (hidden <= 0) throw ConfigError("predictor: hidden size must be positive");
  if (!(floor >= 0.0) || !std::isfinite(floor)) throw ConfigError("predictor: floor must be a finite non-negative number");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("predictor: validation_fraction must lie in [0, 1)");
  }
}

// Predictor ---------------------------------------------------------------

Eigen::VectorXd Predictor::predict(const HorizonInputs& in) const {
  check_inputs(in, cell.input_dim);
  auto prep = [&](const Eigen::VectorXd& z) -> Matrix {
    if (batch_norm) return norm.eval(z);
    return (z - in_mean).cwiseQuotient(in_scale);
  };
  const Eigen::VectorXd raw = head_eval(cell, prep(in.z1), prep(in.z2), prep(in.z3)).col(0);
  Eigen::VectorXd out = (residual ? in.z3 : out_mean) + out_scale.cwiseProduct(raw);
  if (cell.output == nn::Activation::relu) out = (out.array() - floor).max(0.0) + floor;
  return out;
}

Var Predictor::forward(Graph& g, const Matrix& z1, const Matrix& z2, const Matrix& z3, nn::Mode mode) {
  const Eigen::Index n = cell.input_dim, b = z1.cols();
  if (z1.rows() != n || z2.rows() != n || z3.rows() != n || z2.cols() != b || z3.cols() != b) {
    throw ShapeError("predictor: input batch shape mismatch");
  }
  Var x1, x2, x3;
  if (batch_norm) {
    // one set of statistics over all three horizons: they share units
    Matrix all(n, 3 * b);
    all << z1, z2, z3;
    Var xn = norm.forward(g, g.constant(std::move(all)), mode);
    std::vector<int> idx(static_cast<std::size_t>(b));
    for (int k = 0; k < 3; ++k) {
      for (Eigen::Index j = 0; j < b; ++j) idx[static_cast<std::size_t>(j)] = static_cast<int>(k * b + j);
      (k == 0 ? x1 : k == 1 ? x2 : x3) = nn::gather_cols(xn, idx);
    }
  } else {
    auto prep = [&](const Matrix& z) {
      return g.constant((z.colwise() - in_mean).array().colwise() / in_scale.array());
    };
    x1 = prep(z1);
    x2 = prep(z2);
    x3 = prep(z3);
  }
  Var raw = lstm_head(g, cell, x1, x2, x3);
  Var scaled = nn::scale_rows(raw, g.constant(out_scale));
  Var level = residual ? scaled + g.constant(z3) : nn::add_bias(scaled, g.constant(out_mean));
  if (cell.output == nn::Activation::relu) return nn::add_scalar(nn::relu(nn::add_scalar(level, -floor)), floor);
  return level;
}

Var Predictor::loss(Graph& g, const Matrix& z1, const Matrix& z2, const Matrix& z3, const Matrix& target,
                    nn::Mode mode) {
  Var pred = forward(g, z1, z2, z3, mode);
  if (target.rows() != pred.rows() || target.cols() != pred.cols()) throw ShapeError("predictor: target shape mismatch");
  const double cols = static_cast<double>(target.cols());
  return nn::scale(nn::sum(nn::square(g.constant(target) - pred)), 1.0 / cols);
}

nn::NetworkParams Predictor::to_params() const {
  nn::NetworkParams p;
  p.architecture = "lstm_predictor";
  p.layers.push_back({"cell", "lstm_cell", cell.input_dim, cell.hidden, "sigmoid/tanh"});
  p.layers.push_back({"readout", "dense", cell.hidden, cell.hidden, "tanh"});
  p.layers.push_back({"head", "dense", cell.hidden, cell.input_dim, std::string(nn::to_string(cell.output))});
  for (const nn::Parameter* q : const_cast<LstmParams&>(cell).parameters()) p.add(q->name, q->value);
  if (batch_norm) {
    p.add("norm.mean", norm.running_mean);
    p.add("norm.var", norm.running_var);
    p.set_number("norm.eps", norm.eps);
  } else {
    p.add("in_mean", in_mean);
    p.add("in_scale", in_scale);
  }
  p.add("out_mean", out_mean);
  p.add("out_scale", out_scale);
  p.attributes["method"] = to_string(method);
  p.attributes["input_norm"] = batch_norm ? "batch_norm" : "standardize";
  p.attributes["head"] = residual ? "residual" : "level";
  p.set_number("floor", floor);
  return p;
}

Predictor Predictor::from_params(const nn::NetworkParams& p) {
  p.expect_architecture("lstm_predictor");
  if (p.layers.size() != 3 || p.layers[0].kind != "lstm_cell") throw FormatError("lstm_predictor: unexpected layers");
  Predictor pr;
  pr.method = feature_method_from_string(p.attribute("method"));
  const int n = p.layers[0].fan_in, h = p.layers[0].fan_out;
  pr.cell.input_dim = n;
  pr.cell.hidden = h;
  pr.cell.output = nn::activation_from_string(p.layers[2].activation);
  auto load = [&](nn::Parameter& q, const char* name, Eigen::Index rows, Eigen::Index cols) {
    const std::string full = std::string("lstm.") + name;
    const Matrix& v = p.tensor(full);
    if (v.rows() != rows || v.cols() != cols) throw FormatError("lstm_predictor: bad shape for " + full);
    q = nn::Parameter(full, v);
  };
  load(pr.cell.w_r, "w_r", h, n); load(pr.cell.w_i, "w_i", h, n);
  load(pr.cell.w_o, "w_o", h, n); load(pr.cell.w_g, "w_g", h, n);
  load(pr.cell.u_r, "u_r", h, h); load(pr.cell.u_i, "u_i", h, h);
  load(pr.cell.u_o, "u_o", h, h); load(pr.cell.u_g, "u_g", h, h);
  load(pr.cell.b_r, "b_r", h, 1); load(pr.cell.b_i, "b_i", h, 1);
  load(pr.cell.b_o, "b_o", h, 1); load(pr.cell.b_g, "b_g", h, 1);
  load(pr.cell.w_y, "w_y", h, h); load(pr.cell.b_y, "b_y", h, 1);
  load(pr.cell.w_out, "w_out", n, h); load(pr.cell.b_out, "b_out", n, 1);

  auto vec = [&](const char* name) -> Eigen::VectorXd {
    const Matrix& v = p.tensor(name);
    if (v.rows() != n || v.cols() != 1) throw FormatError(std::string("lstm_predictor: bad shape for ") + name);
    return v.col(0);
  };
  pr.batch_norm = p.attribute("input_norm") == "batch_norm";
  if (pr.batch_norm) {
    pr.norm = nn::BatchNorm(n);
    pr.norm.running_mean = vec("norm.mean");
    pr.norm.running_var = vec("norm.var");
    pr.norm.eps = p.number("norm.eps");
    pr.norm.updates = 1;
  } else {
    pr.in_mean = vec("in_mean");
    pr.in_scale = vec("in_scale");
  }
  pr.out_mean = vec("out_mean");
  pr.out_scale = vec("out_scale");
  pr.residual = p.attribute("head") == "residual";
  pr.floor = p.number("floor");
  return pr;
}

// Training ----------------------------------------------------------------

namespace {

struct Pairs {
  Matrix z1, z2, z3, target;
};

// Pairs (inputs at t, Z_{t+1}) for t = first-1 .. cols-2.
Pairs make_pairs(const Matrix& values, Eigen::Index first) {
  const Eigen::Index n = values.rows();
  const Eigen::Index count = values.cols() - first;
  Pairs out{Matrix(n, count), Matrix(n, count), Matrix(n, count), Matrix(n, count)};
  for (Eigen::Index j = 0; j < count; ++j) {
    const HorizonInputs in = build_inputs(values, first + j - 1);
    out.z1.col(j) = in.z1;
    out.z2.col(j) = in.z2;
    out.z3.col(j) = in.z3;
    out.target.col(j) = values.col(first + j);
  }
  return out;
}

Matrix take(const Matrix& m, const std::vector<int>& idx) {
  Matrix out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = m.col(idx[j]);
  return out;
}

Eigen::VectorXd safe_sd(const Matrix& x, const Eigen::VectorXd& mean) {
  const Eigen::VectorXd sd = ((x.colwise() - mean).array().square().rowwise().mean()).sqrt();
  return (sd.array() > 1e-12).select(sd, 1.0);
}

}  // namespace

Predictor train_predictor(const FeatureSeries& features, const PredictorConfig& cfg, PredictorHistory* history,
                          const FeatureSeries* test) {
  cfg.validate();
  const Matrix& values = features.values;
  if (values.cols() < kLongWindow + 1) {
    throw DataError("train_predictor: need at least " + std::to_string(kLongWindow + 1) + " days, have " +
                    std::to_string(values.cols()));
  }
  if (!values.allFinite()) throw DataError("train_predictor: non-finite feature values");
  const int n = static_cast<int>(values.rows());

  Predictor pr;
  pr.method = features.method;
  pr.batch_norm = features.method == FeatureMethod::sam;
  const bool positive = features.method == FeatureMethod::sam;
  pr.floor = positive ? cfg.floor : 0.0;
  std::mt19937_64 init_rng(nn::derive_seed(cfg.train.seed, 1));
  pr.cell = LstmParams(n, cfg.hidden, positive ? nn::Activation::relu : nn::Activation::identity, init_rng);
  pr.in_mean = values.rowwise().mean();
  pr.in_scale = safe_sd(values, pr.in_mean);
  pr.residual = cfg.residual;
  pr.out_mean = pr.in_mean;
  pr.out_scale = pr.in_scale;
  if (pr.residual) {
    const Matrix diff = values.rightCols(values.cols() - 1) - values.leftCols(values.cols() - 1);
    pr.out_scale = safe_sd(diff, diff.rowwise().mean());
    // start from persistence exactly
    pr.cell.w_out.value.setZero();
  }
  if (pr.batch_norm) pr.norm = nn::BatchNorm(n);

  const Pairs all = make_pairs(values, kLongWindow);
  // the most recent pairs form the validation tail
  const Eigen::Index total = all.target.cols();
  const Eigen::Index n_val = static_cast<Eigen::Index>(std::floor(cfg.validation_fraction * static_cast<double>(total)));
  const Eigen::Index n_fit = total - n_val;
  if (n_fit < 1) throw DataError("train_predictor: no training pairs left after the validation split");
  const Pairs train{all.z1.leftCols(n_fit), all.z2.leftCols(n_fit), all.z3.leftCols(n_fit), all.target.leftCols(n_fit)};
  const Pairs val{all.z1.rightCols(n_val), all.z2.rightCols(n_val), all.z3.rightCols(n_val), all.target.rightCols(n_val)};
  Pairs held;
  if (test) {
    if (test->dim() != values.rows()) throw ShapeError("train_predictor: test features have a different dimension");
    Matrix joined(values.rows(), values.cols() + test->values.cols());
    joined << values, test->values;
    held = make_pairs(joined, values.cols());
  }

  std::vector<nn::Parameter*> params = pr.cell.parameters();
  nn::Adam adam(params, cfg.train.adam());
  std::mt19937_64 batch_rng(nn::derive_seed(cfg.train.seed, 2));
  const std::size_t count = static_cast<std::size_t>(n_fit);
  auto eval_loss = [&](const Pairs& p) {
    Graph g;
    return pr.loss(g, p.z1, p.z2, p.z3, p.target, nn::Mode::eval).value()(0, 0);
  };

  Predictor best = pr;
  double best_val = n_val > 0 ? eval_loss(val) : 0.0;
  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (const auto& batch : nn::make_minibatches(count, cfg.train.batch_size, batch_rng)) {
      // batch-norm needs two samples for a variance
      if (pr.batch_norm && batch.size() < 2) continue;
      Graph g;
      Var loss = pr.loss(g, take(train.z1, batch), take(train.z2, batch), take(train.z3, batch),
                         take(train.target, batch), nn::Mode::train);
      const double lv = loss.value()(0, 0);
      if (!std::isfinite(lv)) throw NumericalError("train_predictor: non-finite loss at epoch " + std::to_string(epoch));
      adam.zero_grad();
      g.backward(loss, params);
      adam.step();
      loss_sum += lv * static_cast<double>(batch.size());
    }
    const double v = n_val > 0 ? eval_loss(val) : 0.0;
    if (n_val > 0) {
      if (v < best_val) {
        best_val = v;
        best = pr;
      }
    }
    if (history) {
      history->train_loss.push_back(loss_sum / static_cast<double>(count));
      if (n_val > 0) history->val_loss.push_back(v);
      if (test && held.target.cols() > 0) history->test_loss.push_back(eval_loss(held));
    }
  }
  if (n_val > 0) pr = std::move(best);
  return pr;
}

Eigen::MatrixXd predict_range(const Predictor& p, const Eigen::MatrixXd& values, Eigen::Index first) {
  if (first < kLongWindow || first > values.cols()) {
    throw BoundsError("predict_range: first target needs " + std::to_string(kLongWindow) + " days of history");
  }
  Eigen::MatrixXd out(values.rows(), values.cols() - first);
  for (Eigen::Index t = first; t < values.cols(); ++t) out.col(t - first) = p.predict(build_inputs(values, t - 1));
  return out;
}

OneStepErrors one_step_errors(const Predictor& p, const Eigen::MatrixXd& values, Eigen::Index first) {
  const Eigen::MatrixXd pred = predict_range(p, values, first);
  const Eigen::Index count = pred.cols();
  if (count == 0) throw DataError("one_step_errors: empty range");
  const Eigen::MatrixXd actual = values.rightCols(count);
  const Eigen::MatrixXd previous = values.middleCols(first - 1, count);
  const double denom = static_cast<double>(count);
  return {(actual - pred).squaredNorm() / denom, (actual - previous).squaredNorm() / denom};
}

}  // namespace ivs
