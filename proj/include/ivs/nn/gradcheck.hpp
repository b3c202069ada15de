#pragma once

#include <functional>
#include <span>

#include "ivs/nn/graph.hpp"

namespace ivs::nn {

struct GradCheckResult {
  double relative_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  long entries = 0;
};

/// Builds the loss on a fresh graph; called once for the analytic pass and
/// twice per parameter entry for central differences.
using LossBuilder = std::function<Var(Graph&)>;

GradCheckResult gradient_check(const LossBuilder& loss, std::span<Parameter* const> params, double step = 1e-5);

}  // namespace ivs::nn
