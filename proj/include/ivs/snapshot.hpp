#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ivs/core_surface.hpp"

namespace ivs {

enum class CoordKind { delta, moneyness };

/// Where an observed point came from in the quote file.
struct QuoteSource {
  CoordKind kind = CoordKind::moneyness;
  double coord = 0.0;  // delta (negative for put deltas) or m
  double tau_days = 0.0;
  double rate = 0.0;
  double div_yield = 0.0;
};

/// One day's observed implied-vol quotes at irregular (m, tau) points.
struct SurfaceSnapshot {
  std::string date;
  std::vector<SurfacePoint> points;
  std::vector<QuoteSource> sources;  // empty, or one per point

  std::size_t size() const { return points.size(); }
};

bool operator==(const QuoteSource& a, const QuoteSource& b);
bool operator==(const SurfacePoint& a, const SurfacePoint& b);
bool operator==(const SurfaceSnapshot& a, const SurfaceSnapshot& b);

}  // namespace ivs
