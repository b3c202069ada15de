#include "ivs/snapshot.hpp"

namespace ivs {

bool operator==(const QuoteSource& a, const QuoteSource& b) {
  return a.kind == b.kind && a.coord == b.coord && a.tau_days == b.tau_days && a.rate == b.rate &&
         a.div_yield == b.div_yield;
}

bool operator==(const SurfacePoint& a, const SurfacePoint& b) {
  return a.m == b.m && a.tau == b.tau && a.vol == b.vol;
}

bool operator==(const SurfaceSnapshot& a, const SurfaceSnapshot& b) {
  return a.date == b.date && a.points == b.points && a.sources == b.sources;
}

}  // namespace ivs
