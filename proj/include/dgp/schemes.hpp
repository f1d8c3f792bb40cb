#pragma once

#include <string>
#include <variant>

#include "dgp/vi_chained_inducing.hpp"
#include "dgp/vi_joint_gaussian.hpp"
#include "dgp/vi_meanfield.hpp"

namespace dgp {

enum class SchemeKind { MeanField, JointSampled, JointAnalytic, Chained };

std::string to_string(SchemeKind k);
/// Accepts "meanfield", "joint_sampled", "joint_analytic", "chained".
SchemeKind parse_scheme(const std::string& name);

using VariationalState = std::variant<MeanFieldState, ChainGaussianState, ChainedInducingState>;

/// A model together with the variational state of one scheme.
struct FittedModel {
  SchemeKind scheme = SchemeKind::MeanField;
  DgpModel<double> model;
  VariationalState state;
};

/// Sample counts and estimator switches shared by every scheme.
struct ElboSettings {
  Index n_samples = 10;
  /// Nested paths per joint draw for the sampled joint scheme; 0 splits
  /// n_samples evenly (n_outer = n_inner = ceil(sqrt(n_samples))).
  Index n_inner = 0;
  EstimatorOptions estimator;

  Index outer_samples(SchemeKind k) const;
  Index inner_samples(SchemeKind k) const;
};

/// Initial state: small variational covariances around the prior means. The
/// chained scheme places its shared inputs z on a regular grid over `x`'s
/// range, with as many points as layer 1 has inducing locations.
FittedModel initialise(SchemeKind scheme, const DgpModel<double>& model, const Vector<double>& x,
                       double scale = 1e-2);

/// Sets the final layer's inducing outputs to the GP regression mean of y given
/// the inputs carried through the variational means of the earlier layers. The
/// regression uses the final layer's kernel, mean function and noise variance.
/// Covariances are left as they are.
void seed_final_layer(FittedModel& fm, const Dataset& data);

/// Standard-normal block sized for one ELBO estimate on `n_points` inputs.
NoiseBlock draw_elbo_noise(const FittedModel& fm, Index n_points, const ElboSettings& settings,
                           const RngHandle& rng);

ElboEstimate estimate_elbo(const FittedModel& fm, const Dataset& data, const NoiseBlock& noise,
                           const ElboSettings& settings);
ElboEstimate estimate_elbo(const FittedModel& fm, const Dataset& data, const ElboSettings& settings,
                           const RngHandle& rng);

/// Per-layer draws at the query inputs.
SampleSet sample_layers(const FittedModel& fm, const Vector<double>& query, Index n_samples,
                        const RngHandle& rng, const EstimatorOptions& opts = {});

}  // namespace dgp
