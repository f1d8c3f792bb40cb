#pragma once

#include <vector>

#include "dgp/estimates.hpp"

namespace dgp {

/// Jointly Gaussian q(u_1, ..., u_L) with Markov structure across layers:
///   u_1 = b_1 + C_1 e_1,   u_l = A_l u_{l-1} + b_l + C_l e_l.
/// Index 0 holds the first layer, whose transition `a[0]` is empty.
/// The implied precision is block tridiagonal and the joint covariance is
/// positive definite whenever every C_l has a positive diagonal.
struct ChainGaussianState {
  std::vector<Matrix<double>> a;
  std::vector<Vector<double>> b;
  std::vector<Matrix<double>> c;  // lower triangular innovation factors

  Index num_layers() const { return static_cast<Index>(b.size()); }
  void validate(const DgpModel<double>& model) const;
};

/// A = 0, b_l = mu_l(z_l), C_l = chol(scale * K_l(z_l, z_l)): the mean-field initialisation.
ChainGaussianState init_joint_gaussian(const DgpModel<double>& model, double scale = 1e-2);

/// Marginal means, diagonal blocks S_ll and first sub-diagonal blocks S_{l,l-1}.
/// `factors[l]` satisfies factors[l] factors[l]^T = S_ll and is built as
/// [A_l factors[l-1], C_l]; its width grows with depth.
struct JointBlocks {
  std::vector<Vector<double>> mean;
  std::vector<Matrix<double>> diag;
  std::vector<Matrix<double>> lower;  // lower[0] is empty
  std::vector<Matrix<double>> factors;
};

JointBlocks assemble_joint_blocks(const ChainGaussianState& state);

/// Dense LM x LM covariance of the joint, including the implied far blocks.
Matrix<double> dense_joint_covariance(const ChainGaussianState& state);

/// Ancestral draws; element l is M_l x n_samples.
std::vector<Matrix<double>> sample_u_joint(const ChainGaussianState& state, const NoiseBlock& noise);
std::vector<Matrix<double>> sample_u_joint(const ChainGaussianState& state, Index n_samples,
                                           const RngHandle& rng);

/// KL(q(u_1, ..., u_L) || p(u_1) ... p(u_L)).
double kl_joint(const DgpModel<double>& model, const ChainGaussianState& state,
                const JitterSchedule& schedule = {});

/// Posterior of u_l given the layer outputs f_1, ..., f_l seen so far.
struct ChainPosterior {
  Vector<double> mean;
  Matrix<double> cov;
};

/// Moments of f_l given f_{l-1} with all inducing values integrated out, plus
/// what is needed to condition on the realised f_l afterwards.
struct ChainStep {
  MvnMoments<double> moments;      // (mu~_l, Sigma~_l)
  Vector<double> predicted_mean;   // E[u_l | f_1..f_{l-1}]
  Matrix<double> predicted_cov;    // Cov[u_l | f_1..f_{l-1}]
  Matrix<double> alpha;            // K_l(z,z)^{-1} K_l(z, f_{l-1})
  CholeskyFactor<double> moments_chol;
};

/// Joint (all points together) version of the analytic recursion. `layer` is
/// 0-based; `previous` must be the posterior returned by condition_chain for
/// layer - 1 and is ignored for the first layer.
ChainStep marginalised_conditional_chain(const DgpModel<double>& model,
                                         const ChainGaussianState& state, Index layer,
                                         const Vector<double>& f_prev,
                                         const ChainPosterior* previous,
                                         const JitterSchedule& schedule = {});

/// Updates the inducing posterior with the realised layer output, reusing the
/// Cholesky factor of Sigma~ held by `step`.
ChainPosterior condition_chain(const ChainStep& step, const Vector<double>& f);

inline Index joint_inducing_rows(const DgpModel<double>& model) {
  Index rows = 0;
  for (const auto& l : model.layers) rows += l.num_inducing();
  return rows;
}

inline Index joint_sampled_noise_rows(const DgpModel<double>& model, Index n_points, Index n_inner) {
  return joint_inducing_rows(model) + n_inner * model.num_layers() * n_points;
}

inline Index joint_analytic_noise_rows(const DgpModel<double>& model, Index n_points) {
  return model.num_layers() * n_points;
}

/// Nested estimator: n_outer joint draws of u (columns of `noise`), n_inner
/// function paths per draw.
ElboEstimate elbo_jg_sampled(const DgpModel<double>& model, const ChainGaussianState& state,
                             const Dataset& data, Index n_inner, const NoiseBlock& noise,
                             const EstimatorOptions& opts = {});
ElboEstimate elbo_jg_sampled(const DgpModel<double>& model, const ChainGaussianState& state,
                             const Dataset& data, Index n_outer, Index n_inner, const RngHandle& rng,
                             const EstimatorOptions& opts = {});

/// Inducing values integrated out; each point follows its own path and the
/// recursion is applied per point.
ElboEstimate elbo_jg_analytic(const DgpModel<double>& model, const ChainGaussianState& state,
                              const Dataset& data, const NoiseBlock& noise,
                              const EstimatorOptions& opts = {});
ElboEstimate elbo_jg_analytic(const DgpModel<double>& model, const ChainGaussianState& state,
                              const Dataset& data, Index n_samples, const RngHandle& rng,
                              const EstimatorOptions& opts = {});

/// Per-point draws through the analytic recursion.
SampleSet sample_layers_jg(const DgpModel<double>& model, const ChainGaussianState& state,
                           const Vector<double>& query, const NoiseBlock& noise,
                           const EstimatorOptions& opts = {});
SampleSet sample_layers_jg(const DgpModel<double>& model, const ChainGaussianState& state,
                           const Vector<double>& query, Index n_samples, const RngHandle& rng,
                           const EstimatorOptions& opts = {});

/// Draws u jointly and then each point's path given u (one inner path per draw).
SampleSet sample_layers_jg_sampled(const DgpModel<double>& model, const ChainGaussianState& state,
                                   const Vector<double>& query, const NoiseBlock& noise,
                                   const EstimatorOptions& opts = {});

}  // namespace dgp
