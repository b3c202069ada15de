#include "ivs/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace ivs::nn {

namespace {

double loss_value(const LossBuilder& loss) {
  Graph g;
  return loss(g).value()(0, 0);
}

}  // namespace

GradCheckResult gradient_check(const LossBuilder& loss, std::span<Parameter* const> params, double step) {
  for (auto* p : params) p->zero_grad();
  {
    Graph g;
    Var l = loss(g);
    g.backward(l, params);
  }

  double diff2 = 0.0;
  double a2 = 0.0;
  double n2 = 0.0;
  long entries = 0;
  for (auto* p : params) {
    for (Eigen::Index k = 0; k < p->value.size(); ++k) {
      double& w = p->value.data()[k];
      const double saved = w;
      w = saved + step;
      const double up = loss_value(loss);
      w = saved - step;
      const double down = loss_value(loss);
      w = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = p->grad.data()[k];
      diff2 += (analytic - numeric) * (analytic - numeric);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
      ++entries;
    }
  }
  GradCheckResult r;
  r.analytic_norm = std::sqrt(a2);
  r.numeric_norm = std::sqrt(n2);
  const double denom = std::max({r.analytic_norm, r.numeric_norm, 1e-300});
  r.relative_error = std::sqrt(diff2) / denom;
  r.entries = entries;
  return r;
}

}  // namespace ivs::nn
