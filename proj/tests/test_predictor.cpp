#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "ivs/nn/gradcheck.hpp"
#include "ivs/predictor.hpp"

using namespace ivs;

namespace {

FeatureSeries ar1_series(FeatureMethod method, int days, Eigen::Index dim, double phi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  FeatureSeries s;
  s.method = method;
  s.values.resize(dim, days);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(dim);
  for (int t = 0; t < days; ++t) {
    for (Eigen::Index i = 0; i < dim; ++i) x(i) = phi * x(i) + 0.05 * n01(rng);
    s.values.col(t) = (0.3 + 0.05 * static_cast<double>(dim == 1 ? 0 : 1)) + x.array();
    s.dates.push_back("d" + std::to_string(t));
  }
  return s;
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Step-by-step scalar loops over the gate equations.
Eigen::VectorXd hand_rolled(const HorizonInputs& in, const LstmParams& p) {
  const int n = p.input_dim, h = p.hidden;
  std::vector<double> hs(h, 0.0), cs(h, 0.0), ys(h, 0.0);
  for (const Eigen::VectorXd* x : {&in.z1, &in.z2, &in.z3}) {
    std::vector<double> hn(h), cn(h);
    for (int k = 0; k < h; ++k) {
      double ar = p.b_r.value(k, 0), ai = p.b_i.value(k, 0), ao = p.b_o.value(k, 0), ag = p.b_g.value(k, 0);
      for (int j = 0; j < n; ++j) {
        ar += p.w_r.value(k, j) * (*x)(j);
        ai += p.w_i.value(k, j) * (*x)(j);
        ao += p.w_o.value(k, j) * (*x)(j);
        ag += p.w_g.value(k, j) * (*x)(j);
      }
      for (int j = 0; j < h; ++j) {
        ar += p.u_r.value(k, j) * hs[j];
        ai += p.u_i.value(k, j) * hs[j];
        ao += p.u_o.value(k, j) * hs[j];
        ag += p.u_g.value(k, j) * hs[j];
      }
      cn[k] = sig(ar) * cs[k] + sig(ai) * std::tanh(ag);
      hn[k] = sig(ao) * std::tanh(cn[k]);
    }
    hs = hn;
    cs = cn;
    for (int k = 0; k < h; ++k) {
      double a = p.b_y.value(k, 0);
      for (int j = 0; j < h; ++j) a += p.w_y.value(k, j) * hs[j];
      ys[k] = std::tanh(a);
    }
  }
  Eigen::VectorXd out(n);
  for (int i = 0; i < n; ++i) {
    double a = p.b_out.value(i, 0);
    for (int k = 0; k < h; ++k) a += p.w_out.value(i, k) * ys[k];
    out(i) = p.output == nn::Activation::relu ? std::max(a, 0.0) : a;
  }
  return out;
}

void zero_all(LstmParams& p) {
  for (auto* q : p.parameters()) q->value.setZero();
}

}  // namespace

TEST_CASE("build_inputs windows") {
  Eigen::MatrixXd c = Eigen::MatrixXd::Constant(2, 30, 0.7);
  const auto in = build_inputs(c, 29);
  CHECK((in.z1.array() - 0.7).abs().maxCoeff() < 1e-15);
  CHECK((in.z2.array() - 0.7).abs().maxCoeff() < 1e-15);
  CHECK(in.z3 == Eigen::VectorXd::Constant(2, 0.7));

  Eigen::MatrixXd t(1, 22);
  for (int i = 0; i < 22; ++i) t(0, i) = i + 1;
  const auto lin = build_inputs(t, 21);
  CHECK(lin.z1(0) == 11.5);
  CHECK(lin.z2(0) == 20.0);
  CHECK(lin.z3(0) == 22.0);

  CHECK_THROWS_AS(build_inputs(t.leftCols(21), 20), DataError);
}

TEST_CASE("lstm_forward") {
  std::mt19937_64 rng(3);
  HorizonInputs in{Eigen::VectorXd::Random(4), Eigen::VectorXd::Random(4), Eigen::VectorXd::Random(4)};

  LstmParams zero(4, 3, nn::Activation::identity, rng);
  zero_all(zero);
  CHECK(lstm_forward(in, zero) == Eigen::VectorXd::Zero(4));

  LstmParams clamp(4, 3, nn::Activation::relu, rng);
  zero_all(clamp);
  clamp.b_out.value.setConstant(-1.0);
  CHECK(lstm_forward(in, clamp) == Eigen::VectorXd::Zero(4));

  for (auto act : {nn::Activation::identity, nn::Activation::relu}) {
    LstmParams p(4, 5, act, rng);
    for (auto* q : p.parameters()) q->value += 0.5 * Eigen::MatrixXd::Random(q->value.rows(), q->value.cols());
    const Eigen::VectorXd a = lstm_forward(in, p);
    CHECK((a - hand_rolled(in, p)).cwiseAbs().maxCoeff() < 1e-12);
    if (act == nn::Activation::relu) CHECK(a.minCoeff() >= 0.0);
  }

  HorizonInputs bad{Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(4), Eigen::VectorXd::Zero(4)};
  CHECK_THROWS_AS(lstm_forward(bad, zero), ShapeError);
}

TEST_CASE("predictor loss gradient") {
  for (int trial = 0; trial < 4; ++trial) {
    const FeatureMethod method = trial % 2 ? FeatureMethod::pca : FeatureMethod::sam;
    const auto s = ar1_series(method, 40, 3, 0.8, 10 + trial);
    PredictorConfig cfg;
    cfg.hidden = 4;
    cfg.train.epochs = 1;
    cfg.train.seed = trial;
    Predictor p = train_predictor(s, cfg);
    for (auto* q : p.cell.parameters()) q->value += 0.3 * Eigen::MatrixXd::Random(q->value.rows(), q->value.cols());
    Eigen::MatrixXd z1(3, 6), z2(3, 6), z3(3, 6), y(3, 6);
    for (int j = 0; j < 6; ++j) {
      const auto in = build_inputs(s.values, 25 + j);
      z1.col(j) = in.z1;
      z2.col(j) = in.z2;
      z3.col(j) = in.z3;
      y.col(j) = s.values.col(26 + j);
    }
    // keep the relu head away from its kink
    p.floor = 0.0;
    const auto params = p.cell.parameters();
    const auto r = nn::gradient_check(
        [&](nn::Graph& g) { return p.loss(g, z1, z2, z3, y, nn::Mode::train); }, params);
    CHECK(r.relative_error < 1e-4);
  }
}

TEST_CASE("train_predictor") {
  SUBCASE("too short") {
    const auto s = ar1_series(FeatureMethod::pca, 22, 2, 0.5, 1);
    CHECK_THROWS_AS(train_predictor(s, PredictorConfig{}), DataError);
  }
  SUBCASE("defaults") {
    PredictorConfig cfg;
    CHECK(cfg.train.epochs == 200);
    CHECK(cfg.train.batch_size == 128);
    CHECK(cfg.hidden == 12);
    CHECK(cfg.train.learning_rate == 0.01);
  }
  SUBCASE("constant series") {
    for (auto method : {FeatureMethod::sam, FeatureMethod::pca}) {
      FeatureSeries s;
      s.method = method;
      s.values = Eigen::MatrixXd::Constant(3, 60, 0.25);
      PredictorHistory hist;
      const Predictor p = train_predictor(s, PredictorConfig{}, &hist);
      CHECK(hist.train_loss.back() < 1e-8);
      const Eigen::VectorXd z = p.predict(build_inputs(s.values, 59));
      CHECK((z.array() - 0.25).abs().maxCoeff() < 1e-4);
    }
  }
  SUBCASE("determinism and persistence") {
    const auto s = ar1_series(FeatureMethod::sam, 80, 3, 0.8, 2);
    PredictorConfig cfg;
    cfg.train.epochs = 5;
    cfg.train.batch_size = 16;
    const Predictor a = train_predictor(s, cfg);
    const Predictor b = train_predictor(s, cfg);
    CHECK(a.to_params() == b.to_params());

    std::stringstream buf;
    nn::save_params(a.to_params(), buf);
    const Predictor c = Predictor::from_params(nn::load_params(buf));
    const auto in = build_inputs(s.values, 79);
    CHECK(c.predict(in) == a.predict(in));
    CHECK(c.cell.output == nn::Activation::relu);
    CHECK(a.predict(in).minCoeff() >= cfg.floor);

    nn::NetworkParams wrong = a.to_params();
    wrong.architecture = "surface_net";
    CHECK_THROWS_AS(Predictor::from_params(wrong), FormatError);
  }
}

TEST_CASE("predictor beats persistence on AR(1) features") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto s = ar1_series(FeatureMethod::pca, 600, 3, 0.5, 100 + seed);
    FeatureSeries train = s;
    train.values = s.values.leftCols(500);
    PredictorConfig cfg;
    cfg.train.seed = seed;
    const Predictor p = train_predictor(train, cfg);
    const auto e = one_step_errors(p, s.values, 500);
    CHECK(e.model < e.persistence);
  }
}

TEST_CASE("validation tail keeps the best epoch") {
  const auto s = ar1_series(FeatureMethod::pca, 200, 2, 0.5, 7);
  PredictorConfig cfg;
  cfg.train.epochs = 30;
  PredictorHistory hist;
  const Predictor p = train_predictor(s, cfg, &hist);
  REQUIRE(hist.val_loss.size() == 30);
  // recompute the validation loss of the returned model
  const Eigen::Index total = 200 - kLongWindow, n_val = static_cast<Eigen::Index>(0.2 * static_cast<double>(total));
  double sse = 0.0;
  for (Eigen::Index t = 200 - n_val; t < 200; ++t) sse += (p.predict(build_inputs(s.values, t - 1)) - s.values.col(t)).squaredNorm();
  const double best = *std::min_element(hist.val_loss.begin(), hist.val_loss.end());
  CHECK(sse / static_cast<double>(n_val) <= best + 1e-12);

  cfg.validation_fraction = 1.0;
  CHECK_THROWS_AS(train_predictor(s, cfg), ConfigError);
}
