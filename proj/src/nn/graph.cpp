#include "ivs/nn/graph.hpp"

#include <algorithm>

#include "ivs/errors.hpp"

namespace ivs::nn {

Var Graph::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::param(Parameter& p) {
  Node n;
  n.value = p.value;
  n.param = &p;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::record(Matrix value, std::vector<Var> parents, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.parents.reserve(parents.size());
  for (const auto& p : parents) {
    if (&p.graph() != this) throw StateError("graph: parent belongs to a different tape");
    n.parents.push_back(p.id());
    n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(p.id())].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Graph::backward(Var loss, std::span<Parameter* const> expected) {
  if (&loss.graph() != this) throw StateError("graph: loss belongs to a different tape");
  auto& root = nodes_[static_cast<std::size_t>(loss.id())];
  if (root.value.rows() != 1 || root.value.cols() != 1) {
    throw ShapeError("graph: backward() needs a scalar loss");
  }

  for (auto& n : nodes_) n.grad.resize(0, 0);
  root.grad = Matrix::Ones(1, 1);

  std::vector<Matrix*> parent_grads;
  for (int id = loss.id(); id >= 0; --id) {
    auto& node = nodes_[static_cast<std::size_t>(id)];
    if (node.grad.size() == 0 || !node.requires_grad) continue;
    if (node.param != nullptr) {
      node.param->grad += node.grad;
      continue;
    }
    if (!node.backward) continue;
    parent_grads.clear();
    for (int pid : node.parents) {
      auto& parent = nodes_[static_cast<std::size_t>(pid)];
      if (!parent.requires_grad) {
        parent_grads.push_back(nullptr);
        continue;
      }
      if (parent.grad.size() == 0) parent.grad.setZero(parent.value.rows(), parent.value.cols());
      parent_grads.push_back(&parent.grad);
    }
    node.backward(node.grad, parent_grads);
  }

  for (Parameter* p : expected) {
    const bool reached = std::any_of(nodes_.begin(), nodes_.end(), [p](const Node& n) {
      return n.param == p && n.grad.size() != 0;
    });
    if (!reached) throw MissingGradientError("graph: parameter '" + p->name + "' is detached from the loss");
  }
}

}  // namespace ivs::nn
