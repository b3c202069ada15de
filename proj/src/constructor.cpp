#include "ivs/constructor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>

#include "ivs/errors.hpp"

namespace ivs {

using nn::Graph;
using nn::Matrix;
using nn::Var;
using Eigen::ArrayXd;

void PenaltyGridConfig::validate() const {
  if (!(m_min < 0.0) || !(m_max > 0.0)) throw ConfigError("penalty grid: need m_min < 0 < m_max");
  if (!(tau_max > 0.0)) throw ConfigError("penalty grid: tau_max must be positive");
  if (m_parts < 1 || tau_parts < 1) throw ConfigError("penalty grid: need at least one interval per axis");
}

PenaltyGrids build_penalty_grids(const PenaltyGridConfig& cfg) {
  cfg.validate();
  PenaltyGrids g;
  const double lo = -std::cbrt(-2.0 * cfg.m_min), hi = std::cbrt(2.0 * cfg.m_max);
  g.m34 = Eigen::VectorXd::LinSpaced(cfg.m_parts + 1, lo, hi).array().cube();
  g.m34(0) = 2.0 * cfg.m_min;
  g.m34(cfg.m_parts) = 2.0 * cfg.m_max;
  g.tau34 = Eigen::VectorXd::LinSpaced(cfg.tau_parts + 1, std::log(1.0 / 365.0), std::log(cfg.tau_max + 1.0))
                .array()
                .exp();
  g.m5.resize(4);
  g.m5 << 6.0 * cfg.m_min, 4.0 * cfg.m_min, 4.0 * cfg.m_max, 6.0 * cfg.m_max;
  g.tau5 = g.tau34;
  return g;
}

SurfaceNet::SurfaceNet(int nf, int hidden, int depth, std::mt19937_64& rng) : feature_dim(nf) {
  if (nf <= 0 || hidden <= 0 || depth <= 0) throw ConfigError("surface net: dimensions must be positive");
  std::vector<int> sizes{nf + 2};
  for (int i = 0; i < depth; ++i) sizes.push_back(hidden);
  sizes.push_back(1);
  mlp = nn::Mlp("surface", sizes, nn::Activation::tanh, nn::Activation::softplus, true, rng);
  // (m, tau) columns get Xavier scale for their own fan-in of 2
  mlp.layers.front().weight.value.rightCols(2) = nn::xavier_init(2, hidden, 2, rng);
}

nn::NetworkParams SurfaceNet::to_params() const {
  nn::NetworkParams p;
  p.architecture = "surface_net";
  nn::store_mlp(p, "net", mlp);
  p.set_number("feature_dim", feature_dim);
  p.set_number("fd_step", fd_step);
  return p;
}

SurfaceNet SurfaceNet::from_params(const nn::NetworkParams& p) {
  p.expect_architecture("surface_net");
  SurfaceNet net;
  net.mlp = nn::restore_mlp(p, "net");
  net.feature_dim = static_cast<int>(p.number("feature_dim"));
  net.fd_step = p.number("fd_step");
  if (!net.mlp.input_norm || net.mlp.input_dim() != net.feature_dim + 2 || net.mlp.output_dim() != 1) {
    throw FormatError("surface_net: stored network does not take (F, m, tau) to one vol");
  }
  return net;
}

namespace {

using Stats = nn::BatchNorm::Stats;

Matrix norm_rows(const Stats& s, Eigen::Index first, const Matrix& x, double eps) {
  const Eigen::VectorXd mean = s.mean.segment(first, x.rows());
  const Eigen::VectorXd inv_sd = (s.var.segment(first, x.rows()).array() + eps).rsqrt().matrix();
  return inv_sd.asDiagonal() * (x.colwise() - mean);
}

// Columns of `coords` belong to day[j]; features are already normalized.
Eigen::RowVectorXd eval_pass(const SurfaceNet& net, const Matrix& fn, const std::vector<int>& day, const Matrix& cn) {
  const auto& l0 = net.mlp.layers.front();
  Matrix p = l0.weight.value.leftCols(net.feature_dim) * fn;
  p.colwise() += l0.bias.value.col(0);
  Matrix a = l0.weight.value.rightCols(2) * cn;
  for (Eigen::Index j = 0; j < a.cols(); ++j) a.col(j) += p.col(day[static_cast<std::size_t>(j)]);
  Matrix h = nn::activate(l0.activation, a);
  for (std::size_t i = 1; i < net.mlp.layers.size(); ++i) h = net.mlp.layers[i].eval(h);
  return h.row(0);
}

// Taped W_F fn[:, day] + W_c cn + b without materializing the repeated features.
Var first_layer(Graph& g, nn::Dense& l0, int nf, Matrix fn, std::vector<int> day, Matrix cn) {
  Var w = g.param(l0.weight), b = g.param(l0.bias);
  Matrix p = l0.weight.value.leftCols(nf) * fn;
  p.colwise() += l0.bias.value.col(0);
  Matrix a = l0.weight.value.rightCols(2) * cn;
  for (Eigen::Index j = 0; j < a.cols(); ++j) a.col(j) += p.col(day[static_cast<std::size_t>(j)]);
  Var pre = g.record(std::move(a), {w, b},
                     [nf, fn = std::move(fn), day = std::move(day), cn = std::move(cn)](
                         const Matrix& grad, std::span<Matrix* const> pg) {
                       if (pg[0]) {
                         Matrix per_day = Matrix::Zero(grad.rows(), fn.cols());
                         for (Eigen::Index j = 0; j < grad.cols(); ++j) {
                           per_day.col(day[static_cast<std::size_t>(j)]) += grad.col(j);
                         }
                         pg[0]->leftCols(nf).noalias() += per_day * fn.transpose();
                         pg[0]->rightCols(2).noalias() += grad * cn.transpose();
                       }
                       if (pg[1]) *pg[1] += grad.rowwise().sum();
                     });
  return nn::activate(l0.activation, pre);
}

Var taped_pass(Graph& g, SurfaceNet& net, Matrix fn, std::vector<int> day, Matrix cn) {
  Var h = first_layer(g, net.mlp.layers.front(), net.feature_dim, std::move(fn), std::move(day), std::move(cn));
  for (std::size_t i = 1; i < net.mlp.layers.size(); ++i) h = net.mlp.layers[i].forward(g, h);
  return h;
}

// Five points per node: centre, m + h, m - h, tau + h, tau - h.
Matrix stencil_coords(const ArrayXd& m, const ArrayXd& tau, double h) {
  Matrix c(2, 5 * m.size());
  for (Eigen::Index k = 0; k < m.size(); ++k) {
    c.col(5 * k) << m(k), tau(k);
    c.col(5 * k + 1) << m(k) + h, tau(k);
    c.col(5 * k + 2) << m(k) - h, tau(k);
    c.col(5 * k + 3) << m(k), tau(k) + h;
    c.col(5 * k + 4) << m(k), tau(k) - h;
  }
  return c;
}

LocalDerivs<ArrayXd> stencil_derivs(const Eigen::RowVectorXd& s, double h) {
  const Eigen::Index k = s.size() / 5;
  Eigen::Map<const Matrix, 0, Eigen::OuterStride<>> v(s.data(), 5, k, Eigen::OuterStride<>(5));
  const ArrayXd c = v.row(0).transpose(), mp = v.row(1).transpose(), mm = v.row(2).transpose();
  const ArrayXd tp = v.row(3).transpose(), tm = v.row(4).transpose();
  return {c, (tp - tm) / (2.0 * h), (mp - mm) / (2.0 * h), (mp - 2.0 * c + mm) / (h * h)};
}

struct NodeSet {
  ArrayXd m, tau;
};

NodeSet product_nodes(const Eigen::VectorXd& m, const Eigen::VectorXd& tau) {
  NodeSet n{ArrayXd(m.size() * tau.size()), ArrayXd(m.size() * tau.size())};
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    for (Eigen::Index j = 0; j < tau.size(); ++j) {
      n.m(i * tau.size() + j) = m(i);
      n.tau(i * tau.size() + j) = tau(j);
    }
  }
  return n;
}

// Weighted sums [sum w3 max(0,-cal), sum w4 max(0,-but), sum w5 |large_m|] of
// the stencil values in s, with analytic gradients back to every stencil point.
Var penalty_op(Graph& g, Var s, ArrayXd m, ArrayXd tau, ArrayXd w3, ArrayXd w4, ArrayXd w5, double h) {
  const LocalDerivs<ArrayXd> d = stencil_derivs(s.value().row(0), h);
  const ArrayXd cal = ell_cal(d, tau);
  const ArrayXd but = ell_but(d, m, tau);
  const ArrayXd large = d.vol * d.d_mm + d.d_m.square();
  Matrix out(1, 3);
  out << (w3 * (-cal).max(0.0)).sum(), (w4 * (-but).max(0.0)).sum(), (w5 * large.abs()).sum();
  return g.record(std::move(out), {s},
                  [d, cal, but, large, m = std::move(m), tau = std::move(tau), w3 = std::move(w3),
                   w4 = std::move(w4), w5 = std::move(w5), h](const Matrix& grad, std::span<Matrix* const> pg) {
                    if (!pg[0]) return;
                    const ArrayXd a3 = grad(0, 0) * w3 * (cal < 0.0).cast<double>() * -1.0;
                    const ArrayXd a4 = grad(0, 1) * w4 * (but < 0.0).cast<double>() * -1.0;
                    const ArrayXd a5 = grad(0, 2) * w5 * large.sign();
                    const ArrayXd& v = d.vol;
                    const ArrayXd A = 1.0 - m * d.d_m / v;
                    const ArrayXd g_v = a3 + a4 * (2.0 * A * m * d.d_m / v.square() -
                                                    v * (tau * d.d_m).square() / 2.0 + tau * d.d_mm) +
                                        a5 * d.d_mm;
                    const ArrayXd g_t = a3 * 2.0 * tau;
                    const ArrayXd g_m = a4 * (-2.0 * A * m / v - v.square() * tau.square() * d.d_m / 2.0) +
                                        a5 * 2.0 * d.d_m;
                    const ArrayXd g_mm = a4 * tau * v + a5 * v;
                    Matrix& out_g = *pg[0];
                    for (Eigen::Index k = 0; k < v.size(); ++k) {
                      out_g(0, 5 * k) += g_v(k) - 2.0 * g_mm(k) / (h * h);
                      out_g(0, 5 * k + 1) += g_m(k) / (2.0 * h) + g_mm(k) / (h * h);
                      out_g(0, 5 * k + 2) += -g_m(k) / (2.0 * h) + g_mm(k) / (h * h);
                      out_g(0, 5 * k + 3) += g_t(k) / (2.0 * h);
                      out_g(0, 5 * k + 4) += -g_t(k) / (2.0 * h);
                    }
                  });
}

void check_features(const SurfaceNet& net, Eigen::Index rows) {
  if (rows != net.feature_dim) {
    throw ShapeError("surface net: expected " + std::to_string(net.feature_dim) + " features, got " +
                     std::to_string(rows));
  }
}

Matrix quote_coords(const ConstructorDay& d) {
  Matrix c(2, d.m.size());
  c.row(0) = d.m.transpose();
  c.row(1) = d.tau.transpose();
  return c;
}

}  // namespace

Eigen::VectorXd surface_eval(const SurfaceNet& net, const Eigen::Matrix2Xd& coords, const Eigen::VectorXd& F) {
  check_features(net, F.size());
  const Stats s = net.mlp.norm.running();
  const double eps = net.mlp.norm.eps;
  const Matrix fn = norm_rows(s, 0, F, eps);
  const Matrix cn = norm_rows(s, net.feature_dim, coords, eps);
  return eval_pass(net, fn, std::vector<int>(static_cast<std::size_t>(coords.cols()), 0), cn).transpose();
}

double surface_eval(const SurfaceNet& net, double m, double tau, const Eigen::VectorXd& F) {
  Eigen::Matrix2Xd c(2, 1);
  c << m, tau;
  return surface_eval(net, c, F)(0);
}

LocalDerivs<double> surface_derivs(const SurfaceNet& net, double m, double tau, const Eigen::VectorXd& F) {
  ArrayXd mm(1), tt(1);
  mm << m;
  tt << tau;
  const Eigen::RowVectorXd s = surface_eval(net, stencil_coords(mm, tt, net.fd_step), F).transpose();
  const LocalDerivs<ArrayXd> d = stencil_derivs(s, net.fd_step);
  return {d.vol(0), d.d_tau(0), d.d_m(0), d.d_mm(0)};
}

LocalDerivs<ArrayXd> surface_derivs(const SurfaceNet& net, const Eigen::Matrix2Xd& coords, const Eigen::VectorXd& F) {
  const ArrayXd m = coords.row(0).transpose(), tau = coords.row(1).transpose();
  const Eigen::RowVectorXd s = surface_eval(net, stencil_coords(m, tau, net.fd_step), F).transpose();
  return stencil_derivs(s, net.fd_step);
}

PenaltyValues penalty_losses(const SurfaceNet& net, const Eigen::MatrixXd& F, const PenaltyGrids& grids) {
  check_features(net, F.rows());
  if (F.cols() == 0) throw DataError("penalty_losses: no days");
  const Stats s = net.mlp.norm.running();
  const double eps = net.mlp.norm.eps, h = net.fd_step;
  const NodeSet n34 = product_nodes(grids.m34, grids.tau34), n5 = product_nodes(grids.m5, grids.tau5);
  const Matrix c34 = norm_rows(s, net.feature_dim, stencil_coords(n34.m, n34.tau, h), eps);
  const Matrix c5 = norm_rows(s, net.feature_dim, stencil_coords(n5.m, n5.tau, h), eps);
  const std::vector<int> day34(static_cast<std::size_t>(c34.cols()), 0), day5(static_cast<std::size_t>(c5.cols()), 0);

  PenaltyValues out;
  out.min_cal = out.min_but = std::numeric_limits<double>::infinity();
  for (Eigen::Index t = 0; t < F.cols(); ++t) {
    const Matrix fn = norm_rows(s, 0, F.col(t), eps);
    const LocalDerivs<ArrayXd> d = stencil_derivs(eval_pass(net, fn, day34, c34), h);
    const ArrayXd cal = ell_cal(d, n34.tau), but = ell_but(d, n34.m, n34.tau);
    out.c3 += (-cal).max(0.0).sum();
    out.c4 += (-but).max(0.0).sum();
    out.min_cal = std::min(out.min_cal, cal.minCoeff());
    out.min_but = std::min(out.min_but, but.minCoeff());
    const ArrayXd large = large_m_term(stencil_derivs(eval_pass(net, fn, day5, c5), h));
    out.c5 += large.sum();
    out.max_large_m = std::max(out.max_large_m, large.maxCoeff());
  }
  const double days = static_cast<double>(F.cols());
  out.c3 /= days * static_cast<double>(n34.m.size());
  out.c4 /= days * static_cast<double>(n34.m.size());
  out.c5 /= days * static_cast<double>(n5.m.size());
  return out;
}

void ConstructorConfig::validate() const {
  train.validate();
  grids.validate();
  if (hidden <= 0 || depth <= 0) throw ConfigError("constructor: hidden size and depth must be positive");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("constructor: lambda must be a finite value >= 0");
  if (penalty_days < 0) throw ConfigError("constructor: penalty_days must be >= 0");
  if (!(fd_step > 0.0) || fd_step > 1e-2) throw ConfigError("constructor: fd_step must lie in (0, 0.01]");
}

BatchLoss constructor_loss(Graph& g, SurfaceNet& net, const std::vector<ConstructorDay>& days,
                           const std::vector<std::pair<int, int>>& rows, const std::vector<int>& penalty_days,
                           const PenaltyGrids& grids, double lambda, nn::Mode mode) {
  const int nf = net.feature_dim;
  if (rows.empty()) throw DataError("constructor_loss: empty batch");
  std::vector<int> local(days.size(), -1), used;
  auto local_of = [&](int d) {
    if (local[static_cast<std::size_t>(d)] < 0) {
      local[static_cast<std::size_t>(d)] = static_cast<int>(used.size());
      used.push_back(d);
    }
    return local[static_cast<std::size_t>(d)];
  };

  const Eigen::Index B = static_cast<Eigen::Index>(rows.size());
  Matrix x(nf + 2, B);
  Eigen::RowVectorXd target(B);
  std::vector<int> day;
  day.reserve(rows.size());
  for (Eigen::Index r = 0; r < B; ++r) {
    const auto [d, q] = rows[static_cast<std::size_t>(r)];
    const ConstructorDay& cd = days[static_cast<std::size_t>(d)];
    x.col(r).head(nf) = cd.features;
    x(nf, r) = cd.m(q);
    x(nf + 1, r) = cd.tau(q);
    target(r) = cd.vol(q);
    day.push_back(local_of(d));
  }
  Stats s;
  if (mode == nn::Mode::train) {
    s = nn::BatchNorm::batch_stats(x);
    net.mlp.norm.update_running(s);
  } else {
    s = net.mlp.norm.running();
  }
  const double eps = net.mlp.norm.eps, h = net.fd_step;
  Matrix coords = x.bottomRows(2);

  // penalty nodes: I_C34 nodes that violate a condition now, plus all of I_C5
  const NodeSet n34 = product_nodes(grids.m34, grids.tau34), n5 = product_nodes(grids.m5, grids.tau5);
  const double P = static_cast<double>(penalty_days.size());
  std::vector<double> pm, pt, w3, w4, w5;
  std::vector<int> pday;
  BatchLoss out;
  out.penalties.min_cal = out.penalties.min_but = std::numeric_limits<double>::infinity();
  Matrix fn_all;
  for (int d : penalty_days) local_of(d);
  fn_all.resize(nf, static_cast<Eigen::Index>(used.size()));
  for (std::size_t i = 0; i < used.size(); ++i) fn_all.col(static_cast<Eigen::Index>(i)) = days[static_cast<std::size_t>(used[i])].features;
  fn_all = norm_rows(s, 0, fn_all, eps);

  if (!penalty_days.empty()) {
    const Matrix c34 = norm_rows(s, nf, stencil_coords(n34.m, n34.tau, h), eps);
    const std::vector<int> zero(static_cast<std::size_t>(c34.cols()), 0);
    const double k34 = 1.0 / (P * static_cast<double>(n34.m.size()));
    const double k5 = 1.0 / (P * static_cast<double>(n5.m.size()));
    for (int d : penalty_days) {
      const int ld = local_of(d);
      const LocalDerivs<ArrayXd> dv = stencil_derivs(eval_pass(net, fn_all.col(ld), zero, c34), h);
      const ArrayXd cal = ell_cal(dv, n34.tau), but = ell_but(dv, n34.m, n34.tau);
      out.penalties.min_cal = std::min(out.penalties.min_cal, cal.minCoeff());
      out.penalties.min_but = std::min(out.penalties.min_but, but.minCoeff());
      for (Eigen::Index k = 0; k < cal.size(); ++k) {
        if (cal(k) < 0.0 || but(k) < 0.0) {
          pm.push_back(n34.m(k));
          pt.push_back(n34.tau(k));
          w3.push_back(k34);
          w4.push_back(k34);
          w5.push_back(0.0);
          pday.push_back(ld);
        }
      }
      for (Eigen::Index k = 0; k < n5.m.size(); ++k) {
        pm.push_back(n5.m(k));
        pt.push_back(n5.tau(k));
        w3.push_back(0.0);
        w4.push_back(0.0);
        w5.push_back(k5);
        pday.push_back(ld);
      }
    }
  }

  const Eigen::Index K = static_cast<Eigen::Index>(pm.size());
  auto to_array = [](const std::vector<double>& v) { return ArrayXd(Eigen::Map<const ArrayXd>(v.data(), static_cast<Eigen::Index>(v.size()))); };
  const ArrayXd am = to_array(pm), at = to_array(pt);
  Matrix all_coords(2, B + 5 * K);
  all_coords.leftCols(B) = coords;
  all_coords.rightCols(5 * K) = stencil_coords(am, at, h);
  for (Eigen::Index k = 0; k < K; ++k) {
    for (int j = 0; j < 5; ++j) day.push_back(pday[static_cast<std::size_t>(k)]);
  }
  Var f = taped_pass(g, net, fn_all, std::move(day), norm_rows(s, nf, all_coords, eps));

  std::vector<int> qidx(static_cast<std::size_t>(B));
  std::iota(qidx.begin(), qidx.end(), 0);
  Var resid = nn::gather_cols(f, std::move(qidx)) - g.constant(target);
  Var ls = nn::mean(nn::square(resid));
  out.ls = ls.value()(0, 0);
  out.total = ls;
  if (K > 0) {
    std::vector<int> pidx(static_cast<std::size_t>(5 * K));
    std::iota(pidx.begin(), pidx.end(), static_cast<int>(B));
    Var pen = penalty_op(g, nn::gather_cols(f, std::move(pidx)), am, at, to_array(w3), to_array(w4), to_array(w5), h);
    out.penalties.c3 = pen.value()(0, 0);
    out.penalties.c4 = pen.value()(0, 1);
    out.penalties.c5 = pen.value()(0, 2);
    if (lambda > 0.0) out.total = ls + nn::scale(nn::sum(pen), lambda);
  }
  if (penalty_days.empty()) out.penalties.min_cal = out.penalties.min_but = 0.0;
  return out;
}

double quote_mse(const SurfaceNet& net, const std::vector<ConstructorDay>& days) {
  double sse = 0.0;
  Eigen::Index count = 0;
  for (const auto& d : days) {
    sse += (surface_eval(net, quote_coords(d), d.features) - d.vol).squaredNorm();
    count += d.vol.size();
  }
  if (count == 0) throw DataError("quote_mse: no quotes");
  return sse / static_cast<double>(count);
}

namespace {

void check_days(const std::vector<ConstructorDay>& days, Eigen::Index nf, const char* what) {
  for (const auto& d : days) {
    if (d.features.size() != nf) throw ShapeError(std::string(what) + ": inconsistent feature dimension on " + d.date);
    if (d.m.size() != d.tau.size() || d.m.size() != d.vol.size()) {
      throw ShapeError(std::string(what) + ": quote vectors differ in length on " + d.date);
    }
    if (!d.features.allFinite() || !d.vol.allFinite()) throw DataError(std::string(what) + ": non-finite data on " + d.date);
  }
}

Matrix feature_matrix(const std::vector<ConstructorDay>& days) {
  Matrix F(days.front().features.size(), static_cast<Eigen::Index>(days.size()));
  for (std::size_t i = 0; i < days.size(); ++i) F.col(static_cast<Eigen::Index>(i)) = days[i].features;
  return F;
}

}  // namespace

SurfaceNet train_constructor(const std::vector<ConstructorDay>& train, const ConstructorConfig& cfg,
                             PenaltyReport* report, const std::vector<ConstructorDay>* test) {
  cfg.validate();
  if (train.empty()) throw DataError("train_constructor: no training days");
  const Eigen::Index nf = train.front().features.size();
  check_days(train, nf, "train_constructor");
  if (test) check_days(*test, nf, "train_constructor (test)");

  std::mt19937_64 init_rng(nn::derive_seed(cfg.train.seed, 1));
  SurfaceNet net(static_cast<int>(nf), cfg.hidden, cfg.depth, init_rng);
  net.fd_step = cfg.fd_step;
  const PenaltyGrids grids = build_penalty_grids(cfg.grids);

  std::vector<std::pair<int, int>> rows;
  for (std::size_t d = 0; d < train.size(); ++d) {
    for (Eigen::Index q = 0; q < train[d].vol.size(); ++q) rows.emplace_back(static_cast<int>(d), static_cast<int>(q));
  }
  if (rows.empty()) throw DataError("train_constructor: no quotes");

  std::vector<nn::Parameter*> params = net.parameters();
  nn::Adam adam(params, cfg.train.adam());
  std::mt19937_64 batch_rng(nn::derive_seed(cfg.train.seed, 2));
  std::mt19937_64 pen_rng(nn::derive_seed(cfg.train.seed, 3));
  const Matrix test_F = test && !test->empty() ? feature_matrix(*test) : Matrix();

  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    double ls = 0.0, c3 = 0.0, c4 = 0.0, c5 = 0.0;
    for (const auto& batch : nn::make_minibatches(rows.size(), cfg.train.batch_size, batch_rng)) {
      std::vector<std::pair<int, int>> brows;
      brows.reserve(batch.size());
      for (int i : batch) brows.push_back(rows[static_cast<std::size_t>(i)]);
      std::vector<int> bdays;
      for (const auto& r : brows) bdays.push_back(r.first);
      std::sort(bdays.begin(), bdays.end());
      bdays.erase(std::unique(bdays.begin(), bdays.end()), bdays.end());
      std::shuffle(bdays.begin(), bdays.end(), pen_rng);
      bdays.resize(std::min<std::size_t>(bdays.size(), static_cast<std::size_t>(cfg.penalty_days)));
      std::sort(bdays.begin(), bdays.end());

      Graph g;
      const BatchLoss bl = constructor_loss(g, net, train, brows, bdays, grids, cfg.lambda, nn::Mode::train);
      const double lv = bl.total.value()(0, 0);
      if (!std::isfinite(lv)) throw NumericalError("train_constructor: non-finite loss at epoch " + std::to_string(epoch));
      adam.zero_grad();
      g.backward(bl.total, params);
      adam.step();
      const double w = static_cast<double>(batch.size());
      ls += w * bl.ls;
      c3 += w * bl.penalties.c3;
      c4 += w * bl.penalties.c4;
      c5 += w * bl.penalties.c5;
    }
    if (report) {
      const double n = static_cast<double>(rows.size());
      report->rows.push_back({epoch + 1, "train", ls / n, c3 / n, c4 / n, c5 / n});
      if (test_F.cols() > 0) {
        const PenaltyValues pv = penalty_losses(net, test_F, grids);
        report->rows.push_back({epoch + 1, "test", quote_mse(net, *test), pv.c3, pv.c4, pv.c5});
      }
    }
  }
  return net;
}

void PenaltyReport::write_csv(std::ostream& out) const {
  out << "epoch,split,L_S,L_C3,L_C4,L_C5\n";
  for (const auto& r : rows) {
    out << r.epoch << ',' << r.split << ',' << nn::format_double(r.ls) << ',' << nn::format_double(r.c3) << ','
        << nn::format_double(r.c4) << ',' << nn::format_double(r.c5) << '\n';
  }
}

void PenaltyReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  write_csv(f);
}

}  // namespace ivs
