#pragma once

#include <vector>

#include "dgp/estimates.hpp"

namespace dgp {

/// Variational distribution over layer evaluations at shared inputs z:
/// q(f^z_l) = N(m_l, C_l C_l^T), independent across layers. Layer 1 is
/// conditioned on (z -> f^z_1) and layer l > 1 on (f^z_{l-1} -> f^z_l), so the
/// draws of one layer act as the inducing locations of the next. The inducing
/// locations stored in the model's layers are not used by this scheme.
struct ChainedInducingState {
  Vector<double> z;
  std::vector<Vector<double>> m;
  std::vector<Matrix<double>> chol;

  Index num_layers() const { return static_cast<Index>(m.size()); }
  Index num_inducing() const { return z.size(); }
  Matrix<double> covariance(Index l) const { return chol[l] * chol[l].transpose(); }
  void validate(const DgpModel<double>& model) const;
};

/// m_1 = mu_1(z), m_l = mu_l(m_{l-1}); S_l = scale * K_l(m_{l-1}, m_{l-1}) with m_0 = z.
ChainedInducingState init_chained(const DgpModel<double>& model, const Vector<double>& z,
                                  double scale = 1e-2);

/// Rows per sample: the f^z draws, a reserve set used to redraw them once when
/// the conditioning matrix is degenerate, and one row per layer and point.
inline Index chained_noise_rows(Index n_layers, Index n_inducing, Index n_points) {
  return 2 * n_layers * n_inducing + n_layers * n_points;
}
inline Index chained_noise_rows(const DgpModel<double>& model, const ChainedInducingState& state,
                                Index n_points) {
  return chained_noise_rows(model.num_layers(), state.num_inducing(), n_points);
}

/// KL(q(f^z_l) || p(f^z_l | f^z_{l-1})) averaged over the columns of
/// `fz_prev` (M x S draws of f^z_{l-1}). `layer` is 0-based; for the first
/// layer the conditioning set is z and `fz_prev` is ignored.
double kl_term_chained(const DgpModel<double>& model, const ChainedInducingState& state, Index layer,
                       const Matrix<double>& fz_prev, const JitterSchedule& schedule = {});

SampleSet sample_chain(const DgpModel<double>& model, const ChainedInducingState& state,
                       const Vector<double>& query, const NoiseBlock& noise,
                       const EstimatorOptions& opts = {}, OpStats* stats = nullptr);
SampleSet sample_chain(const DgpModel<double>& model, const ChainedInducingState& state,
                       const Vector<double>& query, Index n_samples, const RngHandle& rng,
                       const EstimatorOptions& opts = {}, OpStats* stats = nullptr);

/// Test-time draws at x_star; the training data is not consulted.
inline SampleSet predict_chained(const DgpModel<double>& model, const ChainedInducingState& state,
                                 const Vector<double>& x_star, Index n_samples, const RngHandle& rng,
                                 const EstimatorOptions& opts = {}) {
  return sample_chain(model, state, x_star, n_samples, rng, opts);
}

/// The f^z draws used by sample_chain / elbo_chained for one noise block;
/// element l is M x n_samples. Degenerate draws are replaced as in the estimator.
/// Only the leading 2*L*M rows of `noise` are read, so a block laid out for
/// sample_chain gives the same f^z that sample_chain conditions on.
std::vector<Matrix<double>> draw_inducing_outputs(const DgpModel<double>& model,
                                                  const ChainedInducingState& state,
                                                  const NoiseBlock& noise,
                                                  const EstimatorOptions& opts = {},
                                                  OpStats* stats = nullptr);

ElboEstimate elbo_chained(const DgpModel<double>& model, const ChainedInducingState& state,
                          const Dataset& data, const NoiseBlock& noise,
                          const EstimatorOptions& opts = {});
ElboEstimate elbo_chained(const DgpModel<double>& model, const ChainedInducingState& state,
                          const Dataset& data, Index n_samples, const RngHandle& rng,
                          const EstimatorOptions& opts = {});

}  // namespace dgp
