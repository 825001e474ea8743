#pragma once

#include "placekit/core_math.hpp"
#include "placekit/tasks.hpp"

#include <string>

namespace placekit {

/// A prediction map: context sets and target locations in, joint Gaussian
/// over the targets out. Implementations are immutable after construction and
/// safe to call concurrently.
class Predictor {
public:
  virtual ~Predictor() = default;
  virtual GaussianPredictive predict(const Task &task) const = 0;
  virtual std::string name() const = 0;
  /// False when the predictive covariance is a function of context locations
  /// only.
  virtual bool covariance_depends_on_values() const { return true; }
};

} // namespace placekit
