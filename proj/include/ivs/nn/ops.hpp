#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "ivs/nn/graph.hpp"

namespace ivs::nn {

enum class Activation { identity, relu, sigmoid, tanh, softplus };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view s);

// Plain (untaped) activations. tanh is evaluated as 1 - 2 / (exp(2x) + 1),
// which vectorizes in Eigen; the taped path uses the same formula.
Matrix activate(Activation a, const Matrix& x);
/// Derivative given the pre-activation x and the activation output y.
Matrix activation_slope(Activation a, const Matrix& x, const Matrix& y);

Var activate(Activation a, Var x);

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
/// x (r x c) plus the column vector b (r x 1) broadcast over columns.
Var add_bias(Var x, Var b);
/// x (r x c) times the column vector s (r x 1) broadcast over columns.
Var scale_rows(Var x, Var s);
Var exp(Var a);
Var square(Var a);
Var relu(Var a);
Var sum(Var a);
Var mean(Var a);
/// Column j of the result is column idx[j] of a.
Var gather_cols(Var a, std::vector<int> idx);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

}  // namespace ivs::nn
