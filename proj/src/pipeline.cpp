#include "ivs/pipeline.hpp"

#include <span>

#include "ivs/errors.hpp"

namespace ivs {

void FitConfig::validate() const {
  if (pca_components < 1) throw ConfigError("pca components must be at least 1");
  predictor.validate();
  constructor.validate();
}

std::vector<ConstructorDay> constructor_days(const Panel& panel, const FeatureModel& features, std::size_t begin,
                                             std::size_t end) {
  if (end > panel.days() || begin > end) throw BoundsError("constructor_days: range outside the panel");
  std::vector<ConstructorDay> out;
  out.reserve(end - begin);
  for (std::size_t t = begin; t < end; ++t) {
    const auto& snap = panel.snapshots[t];
    ConstructorDay d;
    d.date = snap.date;
    d.features = features.decode(features.encode(panel.surfaces[t]));
    const auto n = static_cast<Eigen::Index>(snap.points.size());
    d.m.resize(n);
    d.tau.resize(n);
    d.vol.resize(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      const auto& p = snap.points[static_cast<std::size_t>(k)];
      d.m(k) = p.m;
      d.tau(k) = p.tau;
      d.vol(k) = p.vol;
    }
    out.push_back(std::move(d));
  }
  return out;
}

FittedPipeline fit_pipeline(const Panel& panel, std::size_t n_train, FeatureMethod method, const FitConfig& cfg) {
  cfg.validate();
  if (n_train > panel.days() || n_train <= static_cast<std::size_t>(kLongWindow)) {
    throw DataError("fit: need more than " + std::to_string(kLongWindow) + " training days");
  }
  const std::span<const GriddedSurface> train(panel.surfaces.data(), n_train);
  const std::span<const GriddedSurface> all(panel.surfaces);

  FittedPipeline out;
  out.features.method = method;
  if (method == FeatureMethod::pca) {
    out.features.pca = pca_fit(train, cfg.pca_components);
  } else if (method == FeatureMethod::vae) {
    VaeConfig vc = cfg.vae;
    vc.train.seed = cfg.seed;
    out.features.vae = vae_train(train, vc, &out.vae_history);
  }

  PredictorConfig pc = cfg.predictor;
  pc.train.seed = cfg.seed;
  const FeatureSeries z_train = out.features.series(train);
  std::optional<FeatureSeries> z_test;
  if (n_train < panel.days()) z_test = out.features.series(all.subspan(n_train));  // continues z_train
  out.predictor = train_predictor(z_train, pc, &out.predictor_history, z_test ? &*z_test : nullptr);

  if (cfg.fit_dnn) {
    ConstructorConfig cc = cfg.constructor;
    cc.train.seed = cfg.seed;
    const auto train_days = constructor_days(panel, out.features, 0, n_train);
    const auto test_days = constructor_days(panel, out.features, n_train, panel.days());
    out.net = train_constructor(train_days, cc, &out.penalties, test_days.empty() ? nullptr : &test_days);
  }
  return out;
}

}  // namespace ivs
