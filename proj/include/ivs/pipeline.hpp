#pragma once

// Fits the models behind one feature method: the feature map, the LSTM
// predictor and, for DNN step 2, the surface construction net.

#include <optional>
#include <vector>

#include "ivs/constructor.hpp"
#include "ivs/dataset.hpp"
#include "ivs/features.hpp"
#include "ivs/predictor.hpp"

namespace ivs {

struct FitConfig {
  int pca_components = 3;
  VaeConfig vae;
  PredictorConfig predictor;
  ConstructorConfig constructor;
  bool fit_dnn = true;
  std::uint64_t seed = 1;  // replaces the seeds of the three training configs

  void validate() const;
};

struct FittedPipeline {
  FeatureModel features;
  Predictor predictor;
  std::optional<SurfaceNet> net;
  VaeHistory vae_history;
  PredictorHistory predictor_history;
  PenaltyReport penalties;
};

/// Constructor inputs for days [begin, end): F_t = h(g(surface_t)) and the day's quotes.
std::vector<ConstructorDay> constructor_days(const Panel& panel, const FeatureModel& features, std::size_t begin,
                                             std::size_t end);

/// Trains on days [0, n_train) of `panel`; later days feed the test curves only.
FittedPipeline fit_pipeline(const Panel& panel, std::size_t n_train, FeatureMethod method, const FitConfig& cfg);

}  // namespace ivs
