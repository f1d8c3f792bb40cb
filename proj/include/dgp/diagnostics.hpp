#pragma once

#include <vector>

#include "dgp/schemes.hpp"

namespace dgp {

/// Second-order expansion of the output variance of a layer whose input is
/// x_bar plus zero-mean noise of variance noise_variance:
///   variance = base_variance + noise_variance * (mean_slope^2 + variance_curvature)
struct NoisyInputExpansion {
  double base_variance = 0;
  double mean_slope = 0;          // d/dx of the marginal mean at x_bar
  double variance_curvature = 0;  // d^2/dx^2 of the marginal variance at x_bar
  double noise_variance = 0;
  double variance = 0;
  double step = 0;                // stencil step actually used
};

/// Derivatives by five-point central differences of the marginal moments of
/// the layer under u ~ N(m, S), with step 1e-3 * lengthscale. A non-finite
/// stencil is retried once with a tenfold step before raising NumericalError.
NoisyInputExpansion noisy_input_expansion(const GpLayer<double>& layer, const Vector<double>& m,
                                          const Matrix<double>& s, double x_bar, double noise_variance);

/// Single inducing point with value 0 at location u, unit-variance SE kernel
/// with lengthscale gamma, test input x* ~ N(mu_star, sigma_star2).
struct CounterexampleResult {
  double gamma = 0;
  double u = 0;
  double mu_star = 0;
  double sigma_star2 = 0;
  double q = 0;
  double variance = 0;               // v = 1 - Q
  double derivative = 0;             // dv / d sigma*^2 at sigma_star2
  double derivative_at_zero = 0;     // dv / d sigma*^2 at 0
  bool noise_reduces_variance = false;  // gamma < sqrt(2) |u - mu*|
};

CounterexampleResult counterexample_eval(double gamma, double u, double mu_star, double sigma_star2);

/// Same quantities for a layer in the exact setting of the derivation; any
/// other layer (M != 1, periodic kernel, non-unit variance, non-zero mean
/// function) is refused with InvalidInput.
CounterexampleResult counterexample_eval(const GpLayer<double>& layer, double mu_star, double sigma_star2);

struct MonteCarloVariance {
  double variance = 0;
  double std_error = 0;
};

/// Var[f(x*)] for the counterexample setting by sampling x* and then f given
/// x*. Calls sharing `rng` reuse the same base draws, so differences across
/// sigma_star2 have common random numbers.
MonteCarloVariance counterexample_mc_variance(double gamma, double u, double mu_star, double sigma_star2,
                                              Index n_samples, const RngHandle& rng);

/// Prior conditional variance of a unit-variance SE layer with M inducing
/// points evenly spaced inside (-3 gamma, 3 gamma) (M + 1 equal gaps), and its
/// second derivative, on a grid over [-3 gamma, 3 gamma].
struct CurvatureScan {
  double gamma = 1;
  Vector<double> grid;
  std::vector<Index> m_values;
  std::vector<Vector<double>> variance;   // per M, at every grid point
  std::vector<Vector<double>> curvature;  // per M, NaN at the two end points
  std::vector<double> minimum;            // per M
  std::vector<double> argmin;             // per M, first grid point attaining it
};

/// Second derivatives by central differences on the grid. Runs the M values on
/// up to `threads` threads.
CurvatureScan second_derivative_scan(double gamma, const std::vector<Index>& m_values, Index grid_n = 601,
                                     int threads = 1);

struct LayerVariance {
  double x0 = 0;
  Index n_samples = 0;
  std::vector<double> variance;   // per layer
  std::vector<double> std_error;  // jackknife over 10 blocks of draws
};

LayerVariance layer_variance_probe(const FittedModel& fm, double x0, Index n_samples, const RngHandle& rng,
                                   const EstimatorOptions& opts = {});

}  // namespace dgp
