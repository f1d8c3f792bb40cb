#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dgp/schemes.hpp"

namespace dgp {

/// Maps an unconstrained coordinate to a constrained value.
///   Identity: x
///   Softplus: floor + log(1 + e^x)
///   Exp:      floor + e^x
enum class Transform { Identity, Softplus, Exp };

double forward_transform(Transform t, double raw, double floor = 0.0);
double inverse_transform(Transform t, double value, double floor = 0.0);

struct ParamBlock {
  std::string name;
  Index offset = 0;
  Index size = 0;
  Transform transform = Transform::Identity;
  double floor = 0.0;
};

/// Flat vector of unconstrained coordinates with named, transformed blocks.
class ParamVector {
 public:
  /// Appends a block holding `values` (constrained space).
  void add(const std::string& name, const Vector<double>& values, Transform t = Transform::Identity,
           double floor = 0.0);

  bool has(const std::string& name) const;
  const ParamBlock& block(const std::string& name) const;
  const std::vector<ParamBlock>& blocks() const { return blocks_; }

  /// Constrained values of a block.
  Vector<double> get(const std::string& name) const;
  double get_scalar(const std::string& name) const { return get(name)(0); }

  Vector<double>& raw() { return raw_; }
  const Vector<double>& raw() const { return raw_; }
  Index size() const { return raw_.size(); }

  /// Name of the block containing coordinate i, with the offset inside it.
  std::string describe(Index i) const;

 private:
  Vector<double> raw_;
  std::vector<ParamBlock> blocks_;
};

/// Which parameters take part in fitting.
struct TrainableSet {
  bool variational = true;
  bool kernel = true;
  bool noise = true;            // likelihood variance, floored at kTrainableNoiseFloor
  bool inducing_first = false;  // layer-1 z, or the shared z of the chained scheme
  bool inducing_inner = true;   // z_l for l > 1 (mean-field and joint schemes)
};

/// Floor of the trainable likelihood noise variance.
inline constexpr double kTrainableNoiseFloor = 1e-6;
/// Floor added to softplus-transformed Cholesky diagonals.
inline constexpr double kCholDiagFloor = 1e-10;

ParamVector pack_parameters(const FittedModel& fm, const TrainableSet& trainable);
/// Writes every block of `params` back into a copy of `fm`.
FittedModel unpack_parameters(const ParamVector& params, const FittedModel& fm);

/// Deterministic objective of the coordinates for a frozen noise block.
using Objective = std::function<double(const Vector<double>& theta)>;

/// Central finite differences with a per-coordinate step rel_step * (1 + |theta_i|).
/// The objective must be deterministic, which holds when its noise is frozen.
/// Probes run on up to `threads` threads.
Vector<double> grad_crn(const Objective& objective, const Vector<double>& theta,
                        double rel_step = 1e-4, int threads = 1,
                        const std::function<std::string(Index)>& describe = {});

/// How fit() differentiates the frozen-noise objective.
///   CrnFiniteDifference: grad_crn over the estimator (default)
///   Adjoint:             reverse-mode pathwise gradient of the same estimator
enum class GradientMethod { CrnFiniteDifference, Adjoint };

std::string to_string(GradientMethod m);
/// Accepts "crn" and "adjoint".
GradientMethod parse_gradient_method(const std::string& name);

/// Gradient of -ELBO at raw coordinates theta for one frozen noise block.
using GradientProvider = std::function<Vector<double>(const Vector<double>& theta, const NoiseBlock& noise)>;

struct AdamState {
  Vector<double> m;
  Vector<double> v;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lr = 5e-3;

  explicit AdamState(Index n = 0, double learning_rate = 5e-3)
      : m(Vector<double>::Zero(n)), v(Vector<double>::Zero(n)), lr(learning_rate) {}
};

/// One bias-corrected Adam descent step along gradient g.
void adam_step(AdamState& state, Vector<double>& theta, const Vector<double>& g);

struct FitConfig {
  Index iters = 3000;
  double lr = 5e-3;
  Index n_samples = 10;
  Index n_inner = 0;
  std::uint64_t seed = 0;
  Index refresh_noise_every = 10;
  Index eval_samples = 2000;
  Index trace_every = 50;
  bool analytic_final_layer = true;
  GradientMethod gradient = GradientMethod::CrnFiniteDifference;
  double rel_step = 1e-4;
  int threads = 1;
  TrainableSet trainable;

  void validate() const;
};

struct TracePoint {
  Index iter = 0;
  double elbo = 0;
  double std_error = 0;
};

struct FitResult {
  FittedModel fitted;
  std::vector<TracePoint> trace;
  ElboEstimate final_eval;
};

/// Raised when the evaluation ELBO drops below -1e8; carries the trace so far.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& what, std::vector<TracePoint> trace)
      : NumericalError(what), trace_(std::move(trace)) {}
  const std::vector<TracePoint>& trace() const { return trace_; }

 private:
  std::vector<TracePoint> trace_;
};

/// Independent stream used for every evaluation ELBO of a fit.
inline RngHandle evaluation_rng(std::uint64_t seed) { return {seed ^ 0xa5a5a5a5a5a5a5a5ull, 0}; }

/// Estimator settings used for evaluation under a fit config.
ElboSettings evaluation_settings(const FitConfig& config);

/// Provider for `method` over the blocks of `layout`; theta replaces layout's
/// raw coordinates and blocks outside it stay at their values in `fm`.
GradientProvider make_gradient_provider(GradientMethod method, const FittedModel& fm, const ParamVector& layout,
                                        const Dataset& data, const ElboSettings& settings,
                                        double rel_step = 1e-4, int threads = 1);

/// Adam on -ELBO with the configured gradient provider; training noise is redrawn every
/// refresh_noise_every iterations. The trace holds the evaluation ELBO at
/// iteration 0, every trace_every iterations and at the end.
FitResult fit(const FittedModel& initial, const Dataset& data, const FitConfig& config);

}  // namespace dgp
