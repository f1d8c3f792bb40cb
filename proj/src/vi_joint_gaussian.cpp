#include "dgp/vi_joint_gaussian.hpp"

#include <cmath>
#include <string>

namespace dgp {

void ChainGaussianState::validate(const DgpModel<double>& model) const {
  const Index n_layers = model.num_layers();
  if (num_layers() != n_layers || static_cast<Index>(a.size()) != n_layers ||
      static_cast<Index>(c.size()) != n_layers)
    throw InvalidInput("joint-Gaussian state has the wrong number of layers");
  for (Index l = 0; l < n_layers; ++l) {
    const Index mz = model.layers[l].num_inducing();
    const std::string where = " (layer " + std::to_string(l + 1) + ")";
    if (b[l].size() != mz || c[l].rows() != mz || c[l].cols() != mz)
      throw InvalidInput("joint-Gaussian offset or innovation factor has the wrong shape" + where);
    if (l == 0) {
      if (a[0].size() != 0) throw InvalidInput("first layer has no transition");
    } else if (a[l].rows() != mz || a[l].cols() != model.layers[l - 1].num_inducing()) {
      throw InvalidInput("joint-Gaussian transition has the wrong shape" + where);
    }
  }
}

ChainGaussianState init_joint_gaussian(const DgpModel<double>& model, double scale) {
  model.validate();
  ChainGaussianState s;
  for (Index l = 0; l < model.num_layers(); ++l) {
    const auto& layer = model.layers[l];
    const Index mz = layer.num_inducing();
    s.a.push_back(l == 0 ? Matrix<double>() : Matrix<double>::Zero(mz, model.layers[l - 1].num_inducing()));
    s.b.push_back(apply_mean(layer.mean, layer.z));
    const Matrix<double> k = eval_kernel_matrix(layer.kernel, layer.z);
    s.c.push_back(chol_psd(Matrix<double>(scale * k)).lower);
  }
  return s;
}

JointBlocks assemble_joint_blocks(const ChainGaussianState& state) {
  JointBlocks out;
  for (Index l = 0; l < state.num_layers(); ++l) {
    const Matrix<double> c = state.c[l].triangularView<Eigen::Lower>();
    if (l == 0) {
      out.mean.push_back(state.b[0]);
      out.factors.push_back(c);
      out.lower.emplace_back();
    } else {
      const Matrix<double>& a = state.a[l];
      out.mean.push_back(a * out.mean[l - 1] + state.b[l]);
      const Matrix<double> carried = a * out.factors[l - 1];
      Matrix<double> g(c.rows(), carried.cols() + c.cols());
      g << carried, c;
      out.factors.push_back(std::move(g));
      out.lower.push_back(a * out.diag[l - 1]);
    }
    out.diag.push_back(out.factors[l] * out.factors[l].transpose());
  }
  return out;
}

Matrix<double> dense_joint_covariance(const ChainGaussianState& state) {
  const auto blocks = assemble_joint_blocks(state);
  const Index n_layers = state.num_layers();
  std::vector<Index> offset(n_layers + 1, 0);
  for (Index l = 0; l < n_layers; ++l) offset[l + 1] = offset[l] + state.b[l].size();
  Matrix<double> s = Matrix<double>::Zero(offset[n_layers], offset[n_layers]);
  for (Index l = 0; l < n_layers; ++l) {
    const Index ml = state.b[l].size();
    s.block(offset[l], offset[l], ml, ml) = blocks.diag[l];
    // S_{l,k} = A_l S_{l-1,k} for k < l.
    for (Index k = 0; k < l; ++k) {
      const Index mk = state.b[k].size();
      s.block(offset[l], offset[k], ml, mk) =
          state.a[l] * s.block(offset[l - 1], offset[k], state.b[l - 1].size(), mk);
      s.block(offset[k], offset[l], mk, ml) = s.block(offset[l], offset[k], ml, mk).transpose();
    }
  }
  return s;
}

std::vector<Matrix<double>> sample_u_joint(const ChainGaussianState& state, const NoiseBlock& noise) {
  Index rows = 0;
  for (const auto& b : state.b) rows += b.size();
  detail::check_noise(noise, rows, "joint-Gaussian u draw");
  std::vector<Matrix<double>> u;
  Index offset = 0;
  for (Index l = 0; l < state.num_layers(); ++l) {
    const Index ml = state.b[l].size();
    Matrix<double> draw = state.c[l].triangularView<Eigen::Lower>() * noise.middleRows(offset, ml);
    draw.colwise() += state.b[l];
    if (l > 0) draw += state.a[l] * u[l - 1];
    u.push_back(std::move(draw));
    offset += ml;
  }
  return u;
}

std::vector<Matrix<double>> sample_u_joint(const ChainGaussianState& state, Index n_samples,
                                           const RngHandle& rng) {
  Index rows = 0;
  for (const auto& b : state.b) rows += b.size();
  return sample_u_joint(state, draw_standard_normals(rows, n_samples, rng));
}

double kl_joint(const DgpModel<double>& model, const ChainGaussianState& state,
                const JitterSchedule& schedule) {
  state.validate(model);
  const auto blocks = assemble_joint_blocks(state);
  // Entropy of the chain is the sum of the innovation entropies, so layer l
  // contributes a cross-entropy against p(u_l) minus log det C_l.
  double kl = 0;
  for (Index l = 0; l < model.num_layers(); ++l) {
    const LayerConditioner<double> cond(model.layers[l], schedule);
    const double log_det = 2.0 * state.c[l].diagonal().array().abs().log().sum();
    kl += kl_from_factor<double>(blocks.mean[l], blocks.factors[l], log_det,
                                 cond.mean_at_locations(), cond.chol());
  }
  return kl;
}

ChainStep marginalised_conditional_chain(const DgpModel<double>& model,
                                         const ChainGaussianState& state, Index layer,
                                         const Vector<double>& f_prev,
                                         const ChainPosterior* previous,
                                         const JitterSchedule& schedule) {
  state.validate(model);
  if (layer < 0 || layer >= model.num_layers()) throw InvalidInput("layer index out of range");
  ChainStep step;
  const Matrix<double> c = state.c[layer].triangularView<Eigen::Lower>();
  if (layer == 0) {
    step.predicted_mean = state.b[0];
    step.predicted_cov = c * c.transpose();
  } else {
    if (!previous) throw InvalidInput("analytic recursion needs the previous layer's posterior");
    const Matrix<double>& a = state.a[layer];
    step.predicted_mean = a * previous->mean + state.b[layer];
    step.predicted_cov = symmetrize(a * previous->cov * a.transpose() + c * c.transpose());
  }
  const LayerConditioner<double> cond(model.layers[layer], schedule);
  step.moments = cond.marginal_conditional(f_prev, step.predicted_mean, step.predicted_cov);
  step.alpha = cond.alpha(f_prev);
  step.moments_chol = chol_psd(step.moments.covariance, schedule);
  return step;
}

ChainPosterior condition_chain(const ChainStep& step, const Vector<double>& f) {
  if (f.size() != step.moments.dim()) throw InvalidInput("realised output has the wrong length");
  // Gain P alpha Sigma~^{-1}, applied through the cached factor of Sigma~.
  const Matrix<double> p_alpha = step.predicted_cov * step.alpha;
  const Matrix<double> half = step.moments_chol.solve_lower(p_alpha.transpose());
  const Vector<double> innov = step.moments_chol.solve_lower(f - step.moments.mean);
  ChainPosterior post;
  post.mean = step.predicted_mean + half.transpose() * innov;
  post.cov = symmetrize(step.predicted_cov - half.transpose() * half);
  return post;
}

namespace {

struct Propagation {
  std::vector<double> log_lik;
  std::vector<Matrix<double>> layers;
  OpStats stats;
};

// Per-point analytic recursion for every (point, sample) pair at once. Column
// j carries the posterior of the current u for one pair as
// (r_j, S_ll - sum_k w_k,j w_k,j^T); the low-rank terms live in w[k].
Propagation propagate_analytic(const DgpModel<double>& model, const ChainGaussianState& state,
                               const Vector<double>& inputs, const Vector<double>* targets,
                               const NoiseBlock& noise, const EstimatorOptions& opts,
                               bool keep_layers) {
  const Index n = inputs.size();
  const Index n_layers = model.num_layers();
  const Index n_samples = noise.cols();
  const Index cols = n * n_samples;
  detail::check_noise(noise, n_layers * n, "joint-Gaussian (analytic)");
  const auto blocks = assemble_joint_blocks(state);

  Propagation out;
  const bool analytic = opts.analytic_final_layer && targets;
  Vector<double> f = inputs.replicate(n_samples, 1);
  Matrix<double> r;
  std::vector<Matrix<double>> w;
  for (Index l = 0; l < n_layers; ++l) {
    const LayerConditioner<double> cond(model.layers[l], opts.schedule);
    out.stats.factorizations += 1;
    if (l == 0) {
      r = blocks.mean[0].replicate(1, cols);
    } else {
      r = state.a[l] * r;
      r.colwise() += state.b[l];
      for (auto& wk : w) wk = state.a[l] * wk;
    }
    const auto terms = cond.point_terms(f);
    Matrix<double> p_alpha = blocks.diag[l] * terms.alpha;  // P_j alpha_j per column
    Vector<double> var =
        terms.residual + (terms.alpha.array() * p_alpha.array()).colwise().sum().matrix().transpose();
    for (const auto& wk : w) {
      const Vector<double> proj = (wk.array() * terms.alpha.array()).colwise().sum().matrix().transpose();
      var -= proj.cwiseAbs2();
      p_alpha -= wk * proj.asDiagonal();
    }
    var = var.cwiseMax(1e-12 * cond.kernel().variance);
    const Vector<double> mean =
        terms.prior_mean + ((r.colwise() - cond.mean_at_locations()).array() * terms.alpha.array())
                               .colwise().sum().matrix().transpose();
    out.stats.scalar_conditionals += cols;
    if (!mean.allFinite() || !var.allFinite())
      throw NumericalError("non-finite marginalised moments in layer " + std::to_string(l + 1),
                           static_cast<int>(l + 1));

    if (analytic && l + 1 == n_layers) {
      for (Index s = 0; s < n_samples; ++s)
        out.log_lik.push_back(expected_log_likelihood(
            *targets, DiagMoments<double>{mean.segment(s * n, n), var.segment(s * n, n)},
            model.noise_variance));
      return out;
    }
    const Matrix<double> eps_block = noise.middleRows(l * n, n);
    const auto eps = eps_block.reshaped();
    const Vector<double> sd = var.cwiseSqrt();
    f = mean + (sd.array() * eps.array()).matrix();
    if (keep_layers) out.layers.push_back(f.reshaped(n, n_samples).transpose());
    if (l + 1 < n_layers) {
      // (f - mean) / var = eps / sd
      r += p_alpha * (eps.array() / sd.array()).matrix().asDiagonal();
      w.push_back(p_alpha * sd.cwiseInverse().asDiagonal());
    }
  }
  if (targets)
    for (Index s = 0; s < n_samples; ++s)
      out.log_lik.push_back(log_likelihood(*targets, Vector<double>(f.segment(s * n, n)), model.noise_variance));
  return out;
}

}  // namespace

ElboEstimate elbo_jg_sampled(const DgpModel<double>& model, const ChainGaussianState& state,
                             const Dataset& data, Index n_inner, const NoiseBlock& noise,
                             const EstimatorOptions& opts) {
  data.validate();
  state.validate(model);
  if (n_inner < 1) throw InvalidInput("n_inner must be positive");
  const Index n = data.size();
  const Index n_layers = model.num_layers();
  const Index u_rows = joint_inducing_rows(model);
  detail::check_noise(noise, joint_sampled_noise_rows(model, n, n_inner), "joint-Gaussian (sampled)");

  std::vector<LayerConditioner<double>> conds;
  for (Index l = 0; l < n_layers; ++l) conds.emplace_back(model.layers[l], opts.schedule);
  ElboEstimate e;
  e.stats.factorizations += n_layers;
  const auto u = sample_u_joint(state, NoiseBlock(noise.topRows(u_rows)));

  std::vector<double> outer;
  std::vector<double> all;
  for (Index o = 0; o < noise.cols(); ++o) {
    double acc = 0;
    for (Index i = 0; i < n_inner; ++i) {
      Vector<double> f = data.x;
      double ll = 0;
      for (Index l = 0; l < n_layers; ++l) {
        const Vector<double> ul = u[l].col(o);
        const auto moments = conds[l].marginal_diag(f, ul, nullptr);
        detail::check_finite_moments(moments, static_cast<int>(l + 1));
        e.stats.scalar_conditionals += n;
        if (opts.analytic_final_layer && l + 1 == n_layers) {
          ll = expected_log_likelihood(data.y, moments, model.noise_variance);
          break;
        }
        const auto eps = noise.col(o).segment(u_rows + (i * n_layers + l) * n, n);
        f = moments.mean + (moments.variance.cwiseMax(0.0).cwiseSqrt().array() * eps.array()).matrix();
        if (l + 1 == n_layers) ll = log_likelihood(data.y, f, model.noise_variance);
      }
      acc += ll;
      all.push_back(ll);
    }
    outer.push_back(acc / static_cast<double>(n_inner));
  }
  e.kl = kl_joint(model, state, opts.schedule);
  e.stats.factorizations += n_layers;
  const auto [ell, se] = detail::mean_and_se(outer);
  e.expected_log_lik = ell;
  e.ell_std_error = se;
  e.std_error = se;
  e.value = ell - e.kl;
  e.n_samples = noise.cols();
  e.n_inner = n_inner;
  if (!std::isfinite(e.value)) throw NumericalError("joint-Gaussian ELBO is not finite");
  return e;
}

ElboEstimate elbo_jg_sampled(const DgpModel<double>& model, const ChainGaussianState& state,
                             const Dataset& data, Index n_outer, Index n_inner, const RngHandle& rng,
                             const EstimatorOptions& opts) {
  const NoiseBlock noise =
      draw_standard_normals(joint_sampled_noise_rows(model, data.size(), n_inner), n_outer, rng);
  return elbo_jg_sampled(model, state, data, n_inner, noise, opts);
}

ElboEstimate elbo_jg_analytic(const DgpModel<double>& model, const ChainGaussianState& state,
                              const Dataset& data, const NoiseBlock& noise,
                              const EstimatorOptions& opts) {
  data.validate();
  state.validate(model);
  const auto prop = propagate_analytic(model, state, data.x, &data.y, noise, opts, false);
  ElboEstimate e;
  e.kl = kl_joint(model, state, opts.schedule);
  const auto [ell, se] = detail::mean_and_se(prop.log_lik);
  e.expected_log_lik = ell;
  e.ell_std_error = se;
  e.std_error = se;
  e.value = ell - e.kl;
  e.n_samples = noise.cols();
  e.stats = prop.stats;
  e.stats.factorizations += model.num_layers();
  if (!std::isfinite(e.value)) throw NumericalError("joint-Gaussian ELBO is not finite");
  return e;
}

ElboEstimate elbo_jg_analytic(const DgpModel<double>& model, const ChainGaussianState& state,
                              const Dataset& data, Index n_samples, const RngHandle& rng,
                              const EstimatorOptions& opts) {
  const NoiseBlock noise =
      draw_standard_normals(joint_analytic_noise_rows(model, data.size()), n_samples, rng);
  return elbo_jg_analytic(model, state, data, noise, opts);
}

SampleSet sample_layers_jg(const DgpModel<double>& model, const ChainGaussianState& state,
                           const Vector<double>& query, const NoiseBlock& noise,
                           const EstimatorOptions& opts) {
  state.validate(model);
  SampleSet set;
  set.scheme = "joint_analytic";
  set.query = query;
  if (query.size() == 0) {
    set.layers.assign(model.num_layers(), Matrix<double>(noise.cols(), 0));
    return set;
  }
  set.layers = propagate_analytic(model, state, query, nullptr, noise, opts, true).layers;
  return set;
}

SampleSet sample_layers_jg(const DgpModel<double>& model, const ChainGaussianState& state,
                           const Vector<double>& query, Index n_samples, const RngHandle& rng,
                           const EstimatorOptions& opts) {
  const NoiseBlock noise =
      draw_standard_normals(joint_analytic_noise_rows(model, query.size()), n_samples, rng);
  SampleSet set = sample_layers_jg(model, state, query, noise, opts);
  set.rng = rng;
  return set;
}

SampleSet sample_layers_jg_sampled(const DgpModel<double>& model, const ChainGaussianState& state,
                                   const Vector<double>& query, const NoiseBlock& noise,
                                   const EstimatorOptions& opts) {
  state.validate(model);
  const Index n = query.size();
  const Index n_layers = model.num_layers();
  const Index u_rows = joint_inducing_rows(model);
  detail::check_noise(noise, joint_sampled_noise_rows(model, n, 1), "joint-Gaussian (sampled)");
  SampleSet set;
  set.scheme = "joint_sampled";
  set.query = query;
  for (Index l = 0; l < n_layers; ++l) set.layers.emplace_back(noise.cols(), n);
  if (n == 0) return set;
  std::vector<LayerConditioner<double>> conds;
  for (Index l = 0; l < n_layers; ++l) conds.emplace_back(model.layers[l], opts.schedule);
  const auto u = sample_u_joint(state, NoiseBlock(noise.topRows(u_rows)));
  for (Index s = 0; s < noise.cols(); ++s) {
    Vector<double> f = query;
    for (Index l = 0; l < n_layers; ++l) {
      const Vector<double> ul = u[l].col(s);
      const auto moments = conds[l].marginal_diag(f, ul, nullptr);
      const auto eps = noise.col(s).segment(u_rows + l * n, n);
      f = moments.mean + (moments.variance.cwiseMax(0.0).cwiseSqrt().array() * eps.array()).matrix();
      set.layers[l].row(s) = f.transpose();
    }
  }
  return set;
}

}  // namespace dgp
