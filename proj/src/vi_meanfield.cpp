#include "dgp/vi_meanfield.hpp"

#include <cmath>
#include <string>

namespace dgp {

void MeanFieldState::validate(const DgpModel<double>& model) const {
  if (num_layers() != model.num_layers() || static_cast<Index>(chol.size()) != model.num_layers())
    throw InvalidInput("mean-field state has the wrong number of layers");
  for (Index l = 0; l < num_layers(); ++l) {
    const Index mz = model.layers[l].num_inducing();
    if (m[l].size() != mz || chol[l].rows() != mz || chol[l].cols() != mz)
      throw InvalidInput("mean-field state shape does not match layer " + std::to_string(l + 1));
  }
}

MeanFieldState init_meanfield(const DgpModel<double>& model, double scale) {
  model.validate();
  MeanFieldState s;
  for (const auto& layer : model.layers) {
    s.m.push_back(apply_mean(layer.mean, layer.z));
    const Matrix<double> k = eval_kernel_matrix(layer.kernel, layer.z);
    s.chol.push_back(chol_psd(Matrix<double>(scale * k)).lower);
  }
  return s;
}

double kl_meanfield(const DgpModel<double>& model, const MeanFieldState& state,
                    const JitterSchedule& schedule) {
  state.validate(model);
  double kl = 0;
  for (Index l = 0; l < model.num_layers(); ++l) {
    const LayerConditioner<double> cond(model.layers[l], schedule);
    const double log_det = 2.0 * state.chol[l].diagonal().array().abs().log().sum();
    kl += kl_from_factor<double>(state.m[l], state.chol[l], log_det, cond.mean_at_locations(),
                                 cond.chol());
  }
  return kl;
}

namespace {

struct Propagation {
  std::vector<double> log_lik;  // per sample, empty when no targets given
  std::vector<Matrix<double>> layers;
  OpStats stats;
};

// Pushes every column of `noise` through the layers at once. Each point is
// drawn from its own marginal, so all (point, sample) pairs of a layer share
// one batch of kernel evaluations and solves.
Propagation propagate(const DgpModel<double>& model, const MeanFieldState& state,
                      const Vector<double>& inputs, const Vector<double>* targets,
                      const NoiseBlock& noise, const EstimatorOptions& opts, bool keep_layers) {
  const Index n = inputs.size();
  const Index n_layers = model.num_layers();
  const Index n_samples = noise.cols();
  detail::check_noise(noise, n_layers * n, "mean-field");

  Propagation out;
  const bool analytic = opts.analytic_final_layer && targets;
  // f holds sample s in entries [s n, (s + 1) n).
  Vector<double> f = inputs.replicate(n_samples, 1);
  for (Index l = 0; l < n_layers; ++l) {
    const LayerConditioner<double> cond(model.layers[l], opts.schedule);
    const Matrix<double> c = state.chol[l].triangularView<Eigen::Lower>();
    out.stats.factorizations += 1;
    // The first layer sees the same inputs in every sample.
    DiagMoments<double> moments;
    if (l == 0) {
      const auto once = cond.marginal_diag_factor(cond.whiten(inputs), state.m[l], c);
      moments.mean = once.mean.replicate(n_samples, 1);
      moments.variance = once.variance.replicate(n_samples, 1);
    } else {
      moments = cond.marginal_diag_factor(cond.whiten(f), state.m[l], c);
    }
    detail::check_finite_moments(moments, static_cast<int>(l + 1));
    out.stats.scalar_conditionals += n * n_samples;
    if (analytic && l + 1 == n_layers) {
      for (Index s = 0; s < n_samples; ++s)
        out.log_lik.push_back(expected_log_likelihood(
            *targets,
            DiagMoments<double>{moments.mean.segment(s * n, n), moments.variance.segment(s * n, n)},
            model.noise_variance));
      return out;
    }
    const Matrix<double> eps = noise.middleRows(l * n, n);
    f = moments.mean +
        (moments.variance.cwiseMax(0.0).cwiseSqrt().array() * eps.reshaped().array()).matrix();
    if (keep_layers) out.layers.push_back(f.reshaped(n, n_samples).transpose());
  }
  if (targets)
    for (Index s = 0; s < n_samples; ++s)
      out.log_lik.push_back(log_likelihood(*targets, Vector<double>(f.segment(s * n, n)), model.noise_variance));
  return out;
}

}  // namespace

SampleSet sample_layers_mf(const DgpModel<double>& model, const MeanFieldState& state,
                           const Vector<double>& query, const NoiseBlock& noise,
                           const EstimatorOptions& opts) {
  state.validate(model);
  SampleSet set;
  set.scheme = "meanfield";
  set.query = query;
  if (query.size() == 0) {
    set.layers.assign(model.num_layers(), Matrix<double>(noise.cols(), 0));
    return set;
  }
  set.layers = propagate(model, state, query, nullptr, noise, opts, true).layers;
  return set;
}

SampleSet sample_layers_mf(const DgpModel<double>& model, const MeanFieldState& state,
                           const Vector<double>& query, Index n_samples, const RngHandle& rng,
                           const EstimatorOptions& opts) {
  const NoiseBlock noise =
      draw_standard_normals(meanfield_noise_rows(model, query.size()), n_samples, rng);
  SampleSet set = sample_layers_mf(model, state, query, noise, opts);
  set.rng = rng;
  return set;
}

ElboEstimate elbo_mf(const DgpModel<double>& model, const MeanFieldState& state, const Dataset& data,
                     const NoiseBlock& noise, const EstimatorOptions& opts) {
  data.validate();
  state.validate(model);
  const auto prop = propagate(model, state, data.x, &data.y, noise, opts, false);
  ElboEstimate e;
  e.kl = kl_meanfield(model, state, opts.schedule);
  const auto [ell, se] = detail::mean_and_se(prop.log_lik);
  e.expected_log_lik = ell;
  e.ell_std_error = se;
  e.std_error = se;  // the KL term is exact
  e.value = ell - e.kl;
  e.n_samples = noise.cols();
  e.stats = prop.stats;
  e.stats.factorizations += model.num_layers();
  if (!std::isfinite(e.value)) throw NumericalError("mean-field ELBO is not finite");
  return e;
}

ElboEstimate elbo_mf(const DgpModel<double>& model, const MeanFieldState& state, const Dataset& data,
                     Index n_samples, const RngHandle& rng, const EstimatorOptions& opts) {
  const NoiseBlock noise =
      draw_standard_normals(meanfield_noise_rows(model, data.size()), n_samples, rng);
  return elbo_mf(model, state, data, noise, opts);
}

}  // namespace dgp
