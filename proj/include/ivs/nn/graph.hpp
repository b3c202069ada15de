#pragma once

// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Graph is a tape: every operation appends a node holding its value and a
// closure that pushes the output gradient to its parents. Samples are laid
// out as columns throughout the library.

#include <Eigen/Dense>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace ivs::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// A trainable tensor. Vectors are stored as n x 1 matrices.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)) { zero_grad(); }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Graph;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Graph& graph() const { return *graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* g, int id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  int id_ = -1;
};

class Graph {
 public:
  /// Receives dL/d(output) and fills the parents' gradient accumulators.
  /// Entries of `parent_grads` are null for parents that need no gradient.
  using BackwardFn = std::function<void(const Matrix& grad_out, std::span<Matrix* const> parent_grads)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Matrix value);
  /// Leaf bound to a Parameter; backward() accumulates into p.grad.
  Var param(Parameter& p);
  Var record(Matrix value, std::vector<Var> parents, BackwardFn backward);

  /// Reverse sweep from a 1x1 loss. Every parameter listed in `expected` must
  /// be reachable from the loss, otherwise MissingGradientError is thrown.
  void backward(Var loss, std::span<Parameter* const> expected = {});

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<int> parents;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return graph_->value(id_); }

}  // namespace ivs::nn
