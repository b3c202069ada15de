#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "ivs/constructor.hpp"
#include "ivs/nn/gradcheck.hpp"
#include "ivs/predictor.hpp"

using namespace ivs;

namespace {

SurfaceNet small_net(int nf, std::uint64_t seed, int hidden = 6) {
  std::mt19937_64 rng(seed);
  SurfaceNet net(nf, hidden, 3, rng);
  net.mlp.norm.running_mean = Eigen::VectorXd::Zero(nf + 2);
  net.mlp.norm.running_var = Eigen::VectorXd::Ones(nf + 2);
  return net;
}

// vol = softplus(b) everywhere
SurfaceNet constant_net(int nf, double c) {
  SurfaceNet net = small_net(nf, 1);
  for (auto* p : net.parameters()) p->value.setZero();
  net.mlp.layers.back().bias.value(0, 0) = std::log(std::expm1(c));
  return net;
}

std::vector<ConstructorDay> decaying_days(int n, int quotes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> um(-0.3, 0.3), ut(0.05, 2.0), uf(-1.0, 1.0);
  std::vector<ConstructorDay> out;
  for (int d = 0; d < n; ++d) {
    ConstructorDay day;
    day.date = "d" + std::to_string(d);
    day.features = Eigen::VectorXd::Constant(2, 0.1 * uf(rng));
    day.m.resize(quotes);
    day.tau.resize(quotes);
    day.vol.resize(quotes);
    for (int q = 0; q < quotes; ++q) {
      day.m(q) = um(rng);
      day.tau(q) = ut(rng);
      // sigma^2 tau falls with tau: calendar arbitrage everywhere
      day.vol(q) = 0.15 * std::pow(day.tau(q), -0.75) + 0.2 * day.m(q) * day.m(q);
    }
    out.push_back(std::move(day));
  }
  return out;
}

}  // namespace

TEST_CASE("penalty grids") {
  const PenaltyGrids g = build_penalty_grids();
  CHECK(g.m34.size() == 41);
  CHECK(g.tau34.size() == 41);
  CHECK(g.size34() == 1681);
  CHECK(g.m34(40) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-15));
  CHECK(g.m34(0) == doctest::Approx(2.0 * std::log(0.6)).epsilon(1e-15));
  // cube roots are equally spaced
  const Eigen::ArrayXd x = g.m34.array().unaryExpr([](double v) { return std::cbrt(v); });
  const Eigen::ArrayXd dx = x.tail(40) - x.head(40);
  CHECK((dx - dx(0)).abs().maxCoeff() < 1e-12);
  CHECK(std::cbrt(0.0) * std::cbrt(0.0) * std::cbrt(0.0) == 0.0);
  CHECK(g.tau34(0) == doctest::Approx(1.0 / 365.0).epsilon(1e-14));
  CHECK(g.tau34(40) == doctest::Approx(730.0 / 365.0 + 1.0).epsilon(1e-14));
  const Eigen::ArrayXd lt = g.tau34.array().log();
  CHECK(((lt.tail(40) - lt.head(40)) - (lt(1) - lt(0))).abs().maxCoeff() < 1e-12);
  REQUIRE(g.m5.size() == 4);
  CHECK(g.m5(0) == 6.0 * std::log(0.6));
  CHECK(g.m5(1) == 4.0 * std::log(0.6));
  CHECK(g.m5(2) == 4.0 * std::log(2.0));
  CHECK(g.m5(3) == 6.0 * std::log(2.0));

  PenaltyGridConfig bad;
  bad.m_min = 0.1;
  CHECK_THROWS_AS(build_penalty_grids(bad), ConfigError);
}

TEST_CASE("surface_eval") {
  std::mt19937_64 rng(4);
  SurfaceNet fresh(154, 50, 3, rng);
  const Eigen::VectorXd F = Eigen::VectorXd::Constant(154, 0.2);
  const PenaltyGrids g = build_penalty_grids();
  for (Eigen::Index i = 0; i < g.m34.size(); ++i) {
    for (Eigen::Index j = 0; j < g.tau34.size(); ++j) {
      const double v = surface_eval(fresh, g.m34(i), g.tau34(j), F);
      CHECK((std::isfinite(v) && v > 0.0));
    }
  }
  CHECK_THROWS_AS(surface_eval(fresh, 0.0, 1.0, Eigen::VectorXd::Zero(3)), ShapeError);

  // tanh and softplus are 1-Lipschitz, so the weight-norm product bounds the slope in m
  SurfaceNet net = small_net(3, 5);
  double bound = net.mlp.layers[0].weight.value.col(3).norm();
  for (std::size_t i = 1; i < net.mlp.layers.size(); ++i) bound *= net.mlp.layers[i].weight.value.norm();
  const Eigen::VectorXd f3 = Eigen::VectorXd::Random(3);
  for (double m : {-0.5, 0.0, 0.4}) {
    CHECK(std::abs(surface_eval(net, m + 1e-6, 0.5, f3) - surface_eval(net, m, 0.5, f3)) <= bound * 1e-6 * (1 + 1e-9));
  }
}

TEST_CASE("surface_derivs") {
  SurfaceNet net = small_net(3, 6);
  const Eigen::VectorXd F = Eigen::VectorXd::Random(3);

  SurfaceNet no_m = net;
  no_m.mlp.layers[0].weight.value.col(3).setZero();
  const auto dm = surface_derivs(no_m, 0.1, 0.5, F);
  // zero up to rounding amplified by 1/h and 1/h^2
  CHECK(std::abs(dm.d_m) < 1e-10);
  CHECK(std::abs(dm.d_mm) < 1e-6);

  SurfaceNet no_tau = net;
  no_tau.mlp.layers[0].weight.value.col(4).setZero();
  CHECK(std::abs(surface_derivs(no_tau, 0.1, 0.5, F).d_tau) < 1e-10);

  // observed order of the stencil against a much finer one
  auto at = [&](double h) {
    SurfaceNet n = net;
    n.fd_step = h;
    return surface_derivs(n, 0.2, 0.7, F);
  };
  const auto ref = at(0.1 / 16);
  const auto a = at(0.1), b = at(0.05);
  CHECK(std::log2(std::abs(a.d_m - ref.d_m) / std::abs(b.d_m - ref.d_m)) >= 1.8);
  CHECK(std::log2(std::abs(a.d_mm - ref.d_mm) / std::abs(b.d_mm - ref.d_mm)) >= 1.8);
  CHECK(std::log2(std::abs(a.d_tau - ref.d_tau) / std::abs(b.d_tau - ref.d_tau)) >= 1.8);
}

TEST_CASE("penalty_losses") {
  const PenaltyGrids g = build_penalty_grids();
  const Eigen::MatrixXd F = Eigen::MatrixXd::Random(3, 2);

  const SurfaceNet flat = constant_net(3, 0.25);
  CHECK(surface_eval(flat, 0.3, 0.2, F.col(0)) == doctest::Approx(0.25).epsilon(1e-14));
  const PenaltyValues z = penalty_losses(flat, F, g);
  CHECK(z.c3 == 0.0);
  CHECK(z.c4 == 0.0);
  CHECK(z.c5 == 0.0);

  // vol falls steeply in tau
  SurfaceNet dec = constant_net(3, 0.25);
  dec.mlp.layers[0].weight.value(0, 4) = -3.0;
  dec.mlp.layers[1].weight.value(0, 0) = 1.0;
  dec.mlp.layers[2].weight.value(0, 0) = 1.0;
  dec.mlp.layers[3].weight.value(0, 0) = 2.0;
  dec.mlp.layers[0].weight.value(0, 3) = 0.5;
  const PenaltyValues p = penalty_losses(dec, F, g);
  CHECK(p.c3 > 0.0);

  double c3 = 0.0, c4 = 0.0, c5 = 0.0;
  for (Eigen::Index t = 0; t < F.cols(); ++t) {
    for (Eigen::Index i = 0; i < g.m34.size(); ++i) {
      for (Eigen::Index j = 0; j < g.tau34.size(); ++j) {
        const auto d = surface_derivs(dec, g.m34(i), g.tau34(j), F.col(t));
        c3 += std::max(0.0, -ell_cal(d, g.tau34(j)));
        c4 += std::max(0.0, -ell_but(d, g.m34(i), g.tau34(j)));
      }
    }
    for (Eigen::Index i = 0; i < g.m5.size(); ++i) {
      for (Eigen::Index j = 0; j < g.tau5.size(); ++j) c5 += large_m_term(surface_derivs(dec, g.m5(i), g.tau5(j), F.col(t)));
    }
  }
  CHECK(std::abs(p.c3 - c3 / (2.0 * 1681.0)) < 1e-10);
  CHECK(std::abs(p.c4 - c4 / (2.0 * 1681.0)) < 1e-10);
  CHECK(std::abs(p.c5 - c5 / (2.0 * 164.0)) < 1e-10);
  CHECK(p.c3 >= 0.0);
  CHECK(p.c4 >= 0.0);
  CHECK(p.c5 >= 0.0);
}

TEST_CASE("constructor loss gradient") {
  PenaltyGridConfig gc;
  gc.m_parts = 2;
  gc.tau_parts = 2;
  const PenaltyGrids grids = build_penalty_grids(gc);
  const auto days = decaying_days(2, 5, 3);
  const std::vector<std::pair<int, int>> rows{{0, 0}, {0, 1}, {0, 2}, {1, 3}, {1, 4}};
  int with_penalty = 0;
  for (int trial = 0; trial < 4; ++trial) {
    SurfaceNet net = small_net(2, 20 + trial, 5);
    net.fd_step = 1e-3;
    for (auto* p : net.parameters()) p->value += 0.5 * Eigen::MatrixXd::Random(p->value.rows(), p->value.cols());
    // steep dependence on tau so some grid nodes violate the calendar condition
    net.mlp.layers[0].weight.value.col(3) *= 6.0;
    const auto params = net.parameters();
    {
      nn::Graph g;
      const auto bl = constructor_loss(g, net, days, rows, {0, 1}, grids, 1.0, nn::Mode::train);
      if (bl.penalties.c3 + bl.penalties.c4 > 0.0) ++with_penalty;
    }
    const auto r = nn::gradient_check(
        [&](nn::Graph& g) { return constructor_loss(g, net, days, rows, {0, 1}, grids, 1.0, nn::Mode::train).total; },
        params);
    CHECK(r.relative_error < 1e-4);
  }
  CHECK(with_penalty > 0);
}

TEST_CASE("train_constructor") {
  SUBCASE("defaults and config errors") {
    ConstructorConfig cfg;
    CHECK(cfg.train.epochs == 20);
    CHECK(cfg.train.batch_size == 1024);
    CHECK(cfg.hidden == 50);
    CHECK(cfg.train.learning_rate == 1e-3);
    CHECK(cfg.lambda == 1.0);
    cfg.lambda = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("penalties remove calendar arbitrage from the fit") {
    const auto days = decaying_days(12, 60, 9);
    const PenaltyGrids grids = build_penalty_grids();
    Eigen::MatrixXd F(2, 12);
    for (int d = 0; d < 12; ++d) F.col(d) = days[static_cast<std::size_t>(d)].features;
    ConstructorConfig cfg;
    cfg.hidden = 20;
    cfg.train = {150, 128, 3e-3, 1};
    cfg.lambda = 0.0;
    const SurfaceNet free = train_constructor(days, cfg);
    cfg.lambda = 1.0;
    PenaltyReport report;
    const SurfaceNet pen = train_constructor(days, cfg, &report, &days);
    const PenaltyValues a = penalty_losses(free, F, grids), b = penalty_losses(pen, F, grids);
    MESSAGE("lambda=0 L_C3 " << a.c3 << ", lambda=1 L_C3 " << b.c3 << " L_C4 " << b.c4 << " L_C5 " << b.c5);
    CHECK(a.c3 > 0.0);
    CHECK(b.c3 < 0.01 * a.c3);
    CHECK(report.rows.size() == 300);
    CHECK(report.rows.back().split == "test");

    std::ostringstream csv;
    report.write_csv(csv);
    CHECK(csv.str().rfind("epoch,split,L_S,L_C3,L_C4,L_C5\n", 0) == 0);
  }
  SUBCASE("persistence") {
    const auto days = decaying_days(3, 10, 2);
    ConstructorConfig cfg;
    cfg.hidden = 4;
    cfg.train = {2, 8, 1e-3, 3};
    const SurfaceNet a = train_constructor(days, cfg);
    const SurfaceNet b = train_constructor(days, cfg);
    CHECK(a.to_params() == b.to_params());
    std::stringstream buf;
    nn::save_params(a.to_params(), buf);
    const SurfaceNet c = SurfaceNet::from_params(nn::load_params(buf));
    CHECK(surface_eval(c, 0.1, 0.4, days[0].features) == surface_eval(a, 0.1, 0.4, days[0].features));

    FeatureSeries s;
    s.method = FeatureMethod::pca;
    s.values = Eigen::MatrixXd::Random(2, 30);
    PredictorConfig pc;
    pc.train.epochs = 1;
    CHECK_THROWS_AS(SurfaceNet::from_params(train_predictor(s, pc).to_params()), FormatError);
  }
}
