#include "dgp/schemes.hpp"

#include <algorithm>
#include <cmath>

namespace dgp {

std::string to_string(SchemeKind k) {
  switch (k) {
    case SchemeKind::MeanField: return "meanfield";
    case SchemeKind::JointSampled: return "joint_sampled";
    case SchemeKind::JointAnalytic: return "joint_analytic";
    case SchemeKind::Chained: return "chained";
  }
  return "unknown";
}

SchemeKind parse_scheme(const std::string& name) {
  if (name == "meanfield" || name == "mean_field") return SchemeKind::MeanField;
  if (name == "joint_sampled") return SchemeKind::JointSampled;
  if (name == "joint_analytic" || name == "joint") return SchemeKind::JointAnalytic;
  if (name == "chained") return SchemeKind::Chained;
  throw ConfigError("unknown scheme '" + name +
                    "' (expected meanfield, joint_sampled, joint_analytic or chained)");
}

Index ElboSettings::outer_samples(SchemeKind k) const {
  if (k != SchemeKind::JointSampled) return n_samples;
  if (n_inner > 0) return std::max<Index>(1, n_samples / n_inner);
  return static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(n_samples))));
}

Index ElboSettings::inner_samples(SchemeKind k) const {
  if (k != SchemeKind::JointSampled) return 1;
  if (n_inner > 0) return n_inner;
  return static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(n_samples))));
}

FittedModel initialise(SchemeKind scheme, const DgpModel<double>& model, const Vector<double>& x,
                       double scale) {
  model.validate();
  FittedModel fm{scheme, model, MeanFieldState{}};
  switch (scheme) {
    case SchemeKind::MeanField:
      fm.state = init_meanfield(model, scale);
      break;
    case SchemeKind::JointSampled:
    case SchemeKind::JointAnalytic:
      fm.state = init_joint_gaussian(model, scale);
      break;
    case SchemeKind::Chained: {
      if (x.size() == 0) throw InvalidInput("chained initialisation needs the training inputs");
      const Index mz = model.layers[0].num_inducing();
      Vector<double> z = Vector<double>::LinSpaced(mz, x.minCoeff(), x.maxCoeff());
      if (mz == 1) z(0) = 0.5 * (x.minCoeff() + x.maxCoeff());
      fm.state = init_chained(model, z, scale);
      break;
    }
  }
  return fm;
}

namespace {

// Regression mean at `at` from observations (h, y) under one layer's prior.
Vector<double> regression_mean(const GpLayer<double>& layer, double noise_variance, const Vector<double>& h,
                               const Vector<double>& y, const Vector<double>& at) {
  Matrix<double> kff = eval_kernel_matrix(layer.kernel, h);
  kff.diagonal().array() += noise_variance;
  const auto chol = chol_psd(kff, JitterSchedule::extended());
  const Vector<double> w = chol.solve(y - apply_mean(layer.mean, h));
  return apply_mean(layer.mean, at) + eval_kernel_matrix(layer.kernel, at, h) * w;
}

}  // namespace

void seed_final_layer(FittedModel& fm, const Dataset& data) {
  data.validate();
  const auto& model = fm.model;
  const Index last = model.num_layers() - 1;
  Vector<double> h = data.x;
  const auto& top = model.layers[last];
  switch (fm.scheme) {
    case SchemeKind::MeanField: {
      auto& s = std::get<MeanFieldState>(fm.state);
      for (Index l = 0; l < last; ++l)
        h = LayerConditioner<double>(model.layers[l]).marginal_diag(h, s.m[l], nullptr).mean;
      s.m[last] = regression_mean(top, model.noise_variance, h, data.y, top.z);
      break;
    }
    case SchemeKind::JointSampled:
    case SchemeKind::JointAnalytic: {
      auto& s = std::get<ChainGaussianState>(fm.state);
      const JointBlocks blocks = assemble_joint_blocks(s);
      for (Index l = 0; l < last; ++l)
        h = LayerConditioner<double>(model.layers[l]).marginal_diag(h, blocks.mean[l], nullptr).mean;
      Vector<double> target = regression_mean(top, model.noise_variance, h, data.y, top.z);
      if (last > 0) target -= s.a[last] * blocks.mean[last - 1];
      s.b[last] = target;
      break;
    }
    case SchemeKind::Chained: {
      auto& s = std::get<ChainedInducingState>(fm.state);
      Vector<double> locations = s.z;
      for (Index l = 0; l < last; ++l) {
        const auto& layer = model.layers[l];
        h = LayerConditioner<double>(layer.kernel, layer.mean, locations).marginal_diag(h, s.m[l], nullptr).mean;
        locations = s.m[l];
      }
      s.m[last] = regression_mean(top, model.noise_variance, h, data.y, locations);
      break;
    }
  }
}

NoiseBlock draw_elbo_noise(const FittedModel& fm, Index n_points, const ElboSettings& settings,
                           const RngHandle& rng) {
  const auto& model = fm.model;
  Index rows = 0;
  switch (fm.scheme) {
    case SchemeKind::MeanField: rows = meanfield_noise_rows(model, n_points); break;
    case SchemeKind::JointSampled:
      rows = joint_sampled_noise_rows(model, n_points, settings.inner_samples(fm.scheme));
      break;
    case SchemeKind::JointAnalytic: rows = joint_analytic_noise_rows(model, n_points); break;
    case SchemeKind::Chained:
      rows = chained_noise_rows(model, std::get<ChainedInducingState>(fm.state), n_points);
      break;
  }
  return draw_standard_normals(rows, settings.outer_samples(fm.scheme), rng);
}

ElboEstimate estimate_elbo(const FittedModel& fm, const Dataset& data, const NoiseBlock& noise,
                           const ElboSettings& settings) {
  const auto& opts = settings.estimator;
  switch (fm.scheme) {
    case SchemeKind::MeanField:
      return elbo_mf(fm.model, std::get<MeanFieldState>(fm.state), data, noise, opts);
    case SchemeKind::JointSampled:
      return elbo_jg_sampled(fm.model, std::get<ChainGaussianState>(fm.state), data,
                             settings.inner_samples(fm.scheme), noise, opts);
    case SchemeKind::JointAnalytic:
      return elbo_jg_analytic(fm.model, std::get<ChainGaussianState>(fm.state), data, noise, opts);
    case SchemeKind::Chained:
      return elbo_chained(fm.model, std::get<ChainedInducingState>(fm.state), data, noise, opts);
  }
  throw InvalidInput("unknown scheme");
}

ElboEstimate estimate_elbo(const FittedModel& fm, const Dataset& data, const ElboSettings& settings,
                           const RngHandle& rng) {
  return estimate_elbo(fm, data, draw_elbo_noise(fm, data.size(), settings, rng), settings);
}

SampleSet sample_layers(const FittedModel& fm, const Vector<double>& query, Index n_samples,
                        const RngHandle& rng, const EstimatorOptions& opts) {
  SampleSet set;
  switch (fm.scheme) {
    case SchemeKind::MeanField:
      set = sample_layers_mf(fm.model, std::get<MeanFieldState>(fm.state), query, n_samples, rng, opts);
      break;
    case SchemeKind::JointSampled: {
      const NoiseBlock noise =
          draw_standard_normals(joint_sampled_noise_rows(fm.model, query.size(), 1), n_samples, rng);
      set = sample_layers_jg_sampled(fm.model, std::get<ChainGaussianState>(fm.state), query, noise, opts);
      break;
    }
    case SchemeKind::JointAnalytic:
      set = sample_layers_jg(fm.model, std::get<ChainGaussianState>(fm.state), query, n_samples, rng, opts);
      break;
    case SchemeKind::Chained:
      set = sample_chain(fm.model, std::get<ChainedInducingState>(fm.state), query, n_samples, rng, opts);
      break;
  }
  set.scheme = to_string(fm.scheme);
  set.rng = rng;
  return set;
}

}  // namespace dgp
