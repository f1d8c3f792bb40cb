#pragma once

#include <vector>

#include "dgp/estimates.hpp"

namespace dgp {

/// Factorised q(u_1) ... q(u_L), q(u_l) = N(m_l, C_l C_l^T).
struct MeanFieldState {
  std::vector<Vector<double>> m;
  std::vector<Matrix<double>> chol;  // lower triangular, positive diagonal

  Index num_layers() const { return static_cast<Index>(m.size()); }
  Matrix<double> covariance(Index l) const { return chol[l] * chol[l].transpose(); }
  void validate(const DgpModel<double>& model) const;
};

/// m_l = mu_l(z_l), S_l = scale * K_l(z_l, z_l).
MeanFieldState init_meanfield(const DgpModel<double>& model, double scale = 1e-2);

/// Sum over layers of KL(q(u_l) || p(u_l)).
double kl_meanfield(const DgpModel<double>& model, const MeanFieldState& state,
                    const JitterSchedule& schedule = {});

/// Rows of the standard-normal block consumed per sample: one per layer and point.
inline Index meanfield_noise_rows(const DgpModel<double>& model, Index n_points) {
  return model.num_layers() * n_points;
}

SampleSet sample_layers_mf(const DgpModel<double>& model, const MeanFieldState& state,
                           const Vector<double>& query, const NoiseBlock& noise,
                           const EstimatorOptions& opts = {});
SampleSet sample_layers_mf(const DgpModel<double>& model, const MeanFieldState& state,
                           const Vector<double>& query, Index n_samples, const RngHandle& rng,
                           const EstimatorOptions& opts = {});

ElboEstimate elbo_mf(const DgpModel<double>& model, const MeanFieldState& state, const Dataset& data,
                     const NoiseBlock& noise, const EstimatorOptions& opts = {});
ElboEstimate elbo_mf(const DgpModel<double>& model, const MeanFieldState& state, const Dataset& data,
                     Index n_samples, const RngHandle& rng, const EstimatorOptions& opts = {});

}  // namespace dgp
