#pragma once

#include "dgp/training.hpp"

namespace dgp {

struct ElboGradient {
  double value = 0;
  /// d ELBO / d raw coordinates of the parameter vector.
  Vector<double> gradient;
};

/// ELBO estimate on a frozen noise block together with its exact pathwise
/// gradient, obtained by reverse-mode differentiation of the same estimator.
/// Blocks absent from `params` are held at their values in `fm`. The value
/// agrees with estimate_elbo(unpack_parameters(params, fm), ...) to rounding.
ElboGradient elbo_gradient(const FittedModel& fm, const ParamVector& params, const Dataset& data,
                           const NoiseBlock& noise, const ElboSettings& settings);

}  // namespace dgp
