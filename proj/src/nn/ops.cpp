#include "ivs/nn/ops.hpp"

#include <string>

#include "ivs/errors.hpp"

namespace ivs::nn {

namespace {

void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::softplus: return "softplus";
  }
  return "identity";
}

Activation activation_from_string(std::string_view s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "tanh") return Activation::tanh;
  if (s == "softplus") return Activation::softplus;
  throw FormatError("unknown activation '" + std::string(s) + "'");
}

Matrix activate(Activation a, const Matrix& x) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::relu: return x.cwiseMax(0.0);
    case Activation::sigmoid: return (1.0 / (1.0 + (-x.array()).exp())).matrix();
    case Activation::tanh: return (1.0 - 2.0 / ((2.0 * x.array()).exp() + 1.0)).matrix();
    case Activation::softplus:
      return (x.array().max(0.0) + (-x.array().abs()).exp().log1p()).matrix();
  }
  return x;
}

Matrix activation_slope(Activation a, const Matrix& x, const Matrix& y) {
  switch (a) {
    case Activation::identity: return Matrix::Ones(x.rows(), x.cols());
    case Activation::relu: return (x.array() > 0.0).cast<double>().matrix();
    case Activation::sigmoid: return (y.array() * (1.0 - y.array())).matrix();
    case Activation::tanh: return (1.0 - y.array().square()).matrix();
    case Activation::softplus: return (1.0 / (1.0 + (-x.array()).exp())).matrix();
  }
  return Matrix::Ones(x.rows(), x.cols());
}

Var activate(Activation a, Var x) {
  if (a == Activation::identity) return x;
  Matrix y = activate(a, x.value());
  Matrix slope = activation_slope(a, x.value(), y);
  return x.graph().record(std::move(y), {x},
                          [slope = std::move(slope)](const Matrix& g, std::span<Matrix* const> pg) {
                            if (pg[0]) pg[0]->array() += g.array() * slope.array();
                          });
}

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                     std::to_string(b.rows()));
  }
  Matrix out = a.value() * b.value();
  Graph* g = &a.graph();
  const int ia = a.id();
  const int ib = b.id();
  return g->record(std::move(out), {a, b}, [g, ia, ib](const Matrix& grad, std::span<Matrix* const> pg) {
    if (pg[0]) pg[0]->noalias() += grad * g->value(ib).transpose();
    if (pg[1]) pg[1]->noalias() += g->value(ia).transpose() * grad;
  });
}

Var add(Var a, Var b) {
  same_shape(a, b, "add");
  return a.graph().record(a.value() + b.value(), {a, b}, [](const Matrix& g, std::span<Matrix* const> pg) {
    if (pg[0]) *pg[0] += g;
    if (pg[1]) *pg[1] += g;
  });
}

Var sub(Var a, Var b) {
  same_shape(a, b, "sub");
  return a.graph().record(a.value() - b.value(), {a, b}, [](const Matrix& g, std::span<Matrix* const> pg) {
    if (pg[0]) *pg[0] += g;
    if (pg[1]) *pg[1] -= g;
  });
}

Var hadamard(Var a, Var b) {
  same_shape(a, b, "hadamard");
  Graph* gr = &a.graph();
  const int ia = a.id();
  const int ib = b.id();
  return gr->record(a.value().cwiseProduct(b.value()), {a, b},
                    [gr, ia, ib](const Matrix& g, std::span<Matrix* const> pg) {
                      if (pg[0]) *pg[0] += g.cwiseProduct(gr->value(ib));
                      if (pg[1]) *pg[1] += g.cwiseProduct(gr->value(ia));
                    });
}

Var scale(Var a, double s) {
  return a.graph().record(a.value() * s, {a}, [s](const Matrix& g, std::span<Matrix* const> pg) {
    if (pg[0]) *pg[0] += s * g;
  });
}

Var add_scalar(Var a, double s) {
  return a.graph().record((a.value().array() + s).matrix(), {a},
                          [](const Matrix& g, std::span<Matrix* const> pg) {
                            if (pg[0]) *pg[0] += g;
                          });
}

Var add_bias(Var x, Var b) {
  if (b.cols() != 1 || b.rows() != x.rows()) throw ShapeError("add_bias: bias must be rows(x) x 1");
  Matrix out = x.value().colwise() + b.value().col(0);
  return x.graph().record(std::move(out), {x, b}, [](const Matrix& g, std::span<Matrix* const> pg) {
    if (pg[0]) *pg[0] += g;
    if (pg[1]) *pg[1] += g.rowwise().sum();
  });
}

Var scale_rows(Var x, Var s) {
  if (s.cols() != 1 || s.rows() != x.rows()) throw ShapeError("scale_rows: scale must be rows(x) x 1");
  Matrix out = s.value().col(0).asDiagonal() * x.value();
  Graph* gr = &x.graph();
  const int ix = x.id();
  const int is = s.id();
  return gr->record(std::move(out), {x, s}, [gr, ix, is](const Matrix& g, std::span<Matrix* const> pg) {
    if (pg[0]) *pg[0] += gr->value(is).col(0).asDiagonal() * g;
    if (pg[1]) *pg[1] += g.cwiseProduct(gr->value(ix)).rowwise().sum();
  });
}

Var exp(Var a) {
  Matrix y = a.value().array().exp().matrix();
  Matrix y_copy = y;
  return a.graph().record(std::move(y), {a}, [y = std::move(y_copy)](const Matrix& g, std::span<Matrix* const> pg) {
    if (pg[0]) *pg[0] += g.cwiseProduct(y);
  });
}

Var square(Var a) {
  Graph* gr = &a.graph();
  const int ia = a.id();
  return gr->record(a.value().array().square().matrix(), {a}, [gr, ia](const Matrix& g, std::span<Matrix* const> pg) {
    if (pg[0]) *pg[0] += 2.0 * g.cwiseProduct(gr->value(ia));
  });
}

Var relu(Var a) { return activate(Activation::relu, a); }

Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.graph().record(std::move(out), {a}, [](const Matrix& g, std::span<Matrix* const> pg) {
    if (pg[0]) pg[0]->array() += g(0, 0);
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var gather_cols(Var a, std::vector<int> idx) {
  Matrix out(a.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    if (idx[j] < 0 || idx[j] >= a.cols()) throw ShapeError("gather_cols: index out of range");
    out.col(static_cast<Eigen::Index>(j)) = a.value().col(idx[j]);
  }
  return a.graph().record(std::move(out), {a}, [idx = std::move(idx)](const Matrix& g, std::span<Matrix* const> pg) {
    if (!pg[0]) return;
    for (std::size_t j = 0; j < idx.size(); ++j) pg[0]->col(idx[j]) += g.col(static_cast<Eigen::Index>(j));
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeError("slice_rows: out of range");
  Matrix out = a.value().middleRows(start, count);
  return a.graph().record(std::move(out), {a}, [start, count](const Matrix& g, std::span<Matrix* const> pg) {
    if (pg[0]) pg[0]->middleRows(start, count) += g;
  });
}

}  // namespace ivs::nn
