#include "dgp/adjoint_elbo.hpp"

#include <cmath>
#include <string>

#include "dgp/autodiff.hpp"

namespace dgp {

namespace {

using ad::Var;

std::string layer_name(Index l) { return "layer" + std::to_string(l + 1); }

struct AdLayer {
  KernelFamily family = KernelFamily::SquaredExponential;
  MeanFunction mean = MeanFunction::Zero;
  Var variance, lengthscale, period, z;
};

// Differentiable view of a parameter vector: trainable blocks are slices of
// one leaf, everything else is a constant taken from the fitted model.
class Binder {
 public:
  Binder(ad::Tape& tape, const ParamVector& params) : tape_(tape), params_(params) {
    theta_ = tape_.leaf(params.raw());
  }

  Var theta() const { return theta_; }

  Var get(const std::string& name, const Matrix<double>& fallback) {
    if (!params_.has(name)) return tape_.constant(fallback);
    const auto& b = params_.block(name);
    Var raw = ad::segment(theta_, b.offset, b.size);
    Var v = raw;
    switch (b.transform) {
      case Transform::Identity: break;
      case Transform::Softplus: v = ad::add_constant(ad::softplus(raw), b.floor); break;
      case Transform::Exp: v = ad::add_constant(ad::exp(raw), b.floor); break;
    }
    if (fallback.cols() != 1) v = ad::reshape(v, fallback.rows(), fallback.cols());
    return v;
  }

  Var scalar(const std::string& name, double fallback) {
    return get(name, Matrix<double>::Constant(1, 1, fallback));
  }

  Var chol(const std::string& name, const Matrix<double>& fallback) {
    if (!params_.has(name + ".diag")) return tape_.constant(fallback.triangularView<Eigen::Lower>());
    const Index n = fallback.rows();
    return ad::tri_assemble(get(name + ".diag", Matrix<double>::Zero(n, 1)),
                            get(name + ".lower", Matrix<double>::Zero(n * (n - 1) / 2, 1)));
  }

 private:
  ad::Tape& tape_;
  const ParamVector& params_;
  Var theta_;
};

Var kern(const AdLayer& layer, const Var& x, const Var& y) {
  return ad::kernel_matrix(layer.family, x, y, layer.variance, layer.lengthscale, layer.period);
}

Var mean_of(const AdLayer& layer, const Var& x) {
  if (layer.mean == MeanFunction::Identity) return x;
  return x.tape()->constant(Matrix<double>::Zero(x.rows(), 1));
}

// KL(N(m, G G^T) || N(p_mean, L L^T)) where G's square part has lower factor c.
Var kl_factor(const Var& m, const Var& g, const Var& c, const Var& p_mean, const Var& l) {
  const double k = static_cast<double>(m.rows());
  Var quad = ad::sqnorm(ad::solve_lower(l, g)) + ad::sqnorm(ad::solve_lower(l, p_mean - m));
  return 0.5 * ad::add_constant(quad, -k) + ad::log_diag_sum(l) - ad::log_diag_sum(c);
}

struct Bound {
  std::vector<AdLayer> layers;
  Var noise_variance;
};

Bound bind_model(Binder& bind, const FittedModel& fm) {
  Bound out;
  const auto& model = fm.model;
  for (Index l = 0; l < model.num_layers(); ++l) {
    const auto& spec = model.layers[l];
    const std::string name = layer_name(l);
    AdLayer a;
    a.family = spec.kernel.family;
    a.mean = spec.mean;
    a.variance = bind.scalar(name + ".kernel.variance", spec.kernel.variance);
    a.lengthscale = bind.scalar(name + ".kernel.lengthscale", spec.kernel.lengthscale);
    a.period = bind.scalar(name + ".kernel.period", spec.kernel.period);
    a.z = bind.get(name + ".z", spec.z);
    out.layers.push_back(a);
  }
  out.noise_variance = bind.scalar("noise_variance", model.noise_variance);
  return out;
}

Var replicate_targets_ell(const Var& mean, const Var& var, const Dataset& data, Index copies,
                          const Var& noise_variance) {
  const Vector<double> y = data.y.replicate(copies, 1);
  return ad::gaussian_ell(mean, var, y, noise_variance, 1.0 / static_cast<double>(copies));
}

// Rows [row, row + n) of every column, stacked column after column.
Matrix<double> noise_rows(const NoiseBlock& noise, Index row, Index n) {
  const Matrix<double> block = noise.middleRows(row, n);
  return block.reshaped();
}

Var elbo_meanfield(ad::Tape& tape, Binder& bind, const Bound& m, const FittedModel& fm,
                   const Dataset& data, const NoiseBlock& noise, const EstimatorOptions& opts) {
  const auto& state = std::get<MeanFieldState>(fm.state);
  const Index n = data.size();
  const Index n_layers = fm.model.num_layers();
  const Index n_samples = noise.cols();
  detail::check_noise(noise, n_layers * n, "mean-field");
  const Var x = tape.constant(data.x);

  Var kl = tape.constant(0.0);
  Var f = x;
  Var ell;
  for (Index l = 0; l < n_layers; ++l) {
    const AdLayer& layer = m.layers[l];
    const std::string name = layer_name(l);
    const Var mu = bind.get(name + ".m", state.m[l]);
    const Var c = bind.chol(name + ".chol", state.chol[l]);
    const Var lz = ad::cholesky(kern(layer, layer.z, layer.z), opts.schedule);
    const Var mz = mean_of(layer, layer.z);
    kl = kl + kl_factor(mu, c, c, mz, lz);

    const Index cols = f.rows();
    const Var h = ad::solve_lower(lz, kern(layer, layer.z, f));
    const Var resid = ad::broadcast(layer.variance, cols, 1) - ad::colsqnorm(h);
    Var mean = mean_of(layer, f) + ad::matmul(ad::transpose(h), ad::solve_lower(lz, mu - mz));
    Var var = resid + ad::colsqnorm(ad::matmul(ad::transpose(ad::solve_lower(lz, c)), h));
    if (l == 0) {
      mean = ad::replicate_rows(mean, n_samples);
      var = ad::replicate_rows(var, n_samples);
    }
    if (opts.analytic_final_layer && l + 1 == n_layers) {
      ell = replicate_targets_ell(mean, var, data, n_samples, m.noise_variance);
      break;
    }
    f = mean + ad::cwise_mul_const(ad::sqrt_clamped(var), noise_rows(noise, l * n, n));
  }
  if (!opts.analytic_final_layer) ell = replicate_targets_ell(f, Var(), data, n_samples, m.noise_variance);
  return ell - kl;
}

// Per-layer (mean, G, C) of the joint chain and the matching KL.
struct ChainBlocks {
  std::vector<Var> a, b, c, mean, factor;
};

ChainBlocks bind_chain(Binder& bind, const ChainGaussianState& state) {
  ChainBlocks out;
  for (Index l = 0; l < state.num_layers(); ++l) {
    const std::string name = layer_name(l);
    out.b.push_back(bind.get(name + ".b", state.b[l]));
    out.c.push_back(bind.chol(name + ".c", state.c[l]));
    if (l == 0) {
      out.a.emplace_back();
      out.mean.push_back(out.b[0]);
      out.factor.push_back(out.c[0]);
    } else {
      out.a.push_back(bind.get(name + ".a", state.a[l]));
      out.mean.push_back(ad::matmul(out.a[l], out.mean[l - 1]) + out.b[l]);
      out.factor.push_back(ad::hconcat(ad::matmul(out.a[l], out.factor[l - 1]), out.c[l]));
    }
  }
  return out;
}

Var chain_kl(const Bound& m, const ChainBlocks& blocks, std::vector<Var>& chols,
             const EstimatorOptions& opts) {
  Var kl = blocks.mean[0].tape()->constant(0.0);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const AdLayer& layer = m.layers[l];
    chols.push_back(ad::cholesky(kern(layer, layer.z, layer.z), opts.schedule));
    kl = kl + kl_factor(blocks.mean[l], blocks.factor[l], blocks.c[l], mean_of(layer, layer.z), chols[l]);
  }
  return kl;
}

Var elbo_joint_analytic(ad::Tape& tape, Binder& bind, const Bound& m, const FittedModel& fm,
                        const Dataset& data, const NoiseBlock& noise, const EstimatorOptions& opts) {
  const auto& state = std::get<ChainGaussianState>(fm.state);
  const Index n = data.size();
  const Index n_layers = fm.model.num_layers();
  const Index n_samples = noise.cols();
  const Index cols = n * n_samples;
  detail::check_noise(noise, n_layers * n, "joint-Gaussian (analytic)");
  const ChainBlocks blocks = bind_chain(bind, state);
  std::vector<Var> chols;
  const Var kl = chain_kl(m, blocks, chols, opts);

  Var f = tape.constant(data.x.replicate(n_samples, 1));
  Var r;
  std::vector<Var> w;
  Var ell;
  for (Index l = 0; l < n_layers; ++l) {
    const AdLayer& layer = m.layers[l];
    if (l == 0) {
      r = ad::repeat_cols(blocks.mean[0], cols);
    } else {
      r = ad::add_colwise(ad::matmul(blocks.a[l], r), blocks.b[l]);
      for (auto& wk : w) wk = ad::matmul(blocks.a[l], wk);
    }
    const Var& lz = chols[l];
    const Var h = ad::solve_lower(lz, kern(layer, layer.z, f));
    const Var alpha = ad::solve_lower_t(lz, h);
    const Var diag = ad::matmul(blocks.factor[l], ad::transpose(blocks.factor[l]));
    Var p_alpha = ad::matmul(diag, alpha);
    Var var = ad::broadcast(layer.variance, cols, 1) - ad::colsqnorm(h) + ad::colsum_prod(alpha, p_alpha);
    for (const auto& wk : w) {
      const Var proj = ad::colsum_prod(wk, alpha);
      var = var - ad::square(proj);
      p_alpha = p_alpha - ad::scale_cols(wk, proj);
    }
    var = ad::clamp_min(var, 1e-12 * layer.variance.scalar());
    const Var mean = mean_of(layer, f) + ad::colsum_prod(ad::add_colwise(r, -mean_of(layer, layer.z)), alpha);
    if (opts.analytic_final_layer && l + 1 == n_layers) {
      ell = replicate_targets_ell(mean, var, data, n_samples, m.noise_variance);
      break;
    }
    const Matrix<double> eps = noise_rows(noise, l * n, n);
    const Var sd = ad::sqrt_clamped(var);
    f = mean + ad::cwise_mul_const(sd, eps);
    if (l + 1 < n_layers) {
      const Var inv_sd = ad::cwise_inverse(sd);
      r = r + ad::scale_cols(p_alpha, ad::cwise_mul_const(inv_sd, eps));
      w.push_back(ad::scale_cols(p_alpha, inv_sd));
    }
  }
  if (!opts.analytic_final_layer) ell = replicate_targets_ell(f, Var(), data, n_samples, m.noise_variance);
  return ell - kl;
}

Var elbo_joint_sampled(ad::Tape& tape, Binder& bind, const Bound& m, const FittedModel& fm,
                       const Dataset& data, Index n_inner, const NoiseBlock& noise,
                       const EstimatorOptions& opts) {
  const auto& state = std::get<ChainGaussianState>(fm.state);
  const Index n = data.size();
  const Index n_layers = fm.model.num_layers();
  const Index n_outer = noise.cols();
  const Index paths = n_outer * n_inner;
  const Index u_rows = joint_inducing_rows(fm.model);
  detail::check_noise(noise, joint_sampled_noise_rows(fm.model, n, n_inner), "joint-Gaussian (sampled)");
  const ChainBlocks blocks = bind_chain(bind, state);
  std::vector<Var> chols;
  const Var kl = chain_kl(m, blocks, chols, opts);

  // Column (o n_inner + i) n + p is point p of inner path i under joint draw o.
  Var f = tape.constant(data.x.replicate(paths, 1));
  Var u;
  Index offset = 0;
  Var ell;
  for (Index l = 0; l < n_layers; ++l) {
    const AdLayer& layer = m.layers[l];
    const Index ml = state.b[l].size();
    Var draw = ad::add_colwise(ad::matmul(blocks.c[l], tape.constant(noise.middleRows(offset, ml))),
                               blocks.b[l]);
    u = l == 0 ? draw : draw + ad::matmul(blocks.a[l], u);
    offset += ml;

    const Var& lz = chols[l];
    const Var h = ad::solve_lower(lz, kern(layer, layer.z, f));
    const Var coef = ad::repeat_cols(ad::solve_lower(lz, ad::add_colwise(u, -mean_of(layer, layer.z))), n * n_inner);
    const Var mean = mean_of(layer, f) + ad::colsum_prod(h, coef);
    const Var var = ad::broadcast(layer.variance, f.rows(), 1) - ad::colsqnorm(h);
    if (opts.analytic_final_layer && l + 1 == n_layers) {
      ell = replicate_targets_ell(mean, var, data, paths, m.noise_variance);
      break;
    }
    Matrix<double> eps(n * n_inner, n_outer);
    for (Index i = 0; i < n_inner; ++i) eps.middleRows(i * n, n) = noise.middleRows(u_rows + (i * n_layers + l) * n, n);
    f = mean + ad::cwise_mul_const(ad::sqrt_clamped(var), eps.reshaped());
  }
  if (!opts.analytic_final_layer) ell = replicate_targets_ell(f, Var(), data, paths, m.noise_variance);
  return ell - kl;
}

Var elbo_chained_ad(ad::Tape& tape, Binder& bind, const Bound& m, const FittedModel& fm,
                    const Dataset& data, const NoiseBlock& noise, const EstimatorOptions& opts) {
  const auto& state = std::get<ChainedInducingState>(fm.state);
  const Index n = data.size();
  const Index n_layers = fm.model.num_layers();
  const Index mz = state.num_inducing();
  const Index n_samples = noise.cols();
  detail::check_noise(noise, chained_noise_rows(n_layers, mz, n), "chained");

  const Var z = bind.get("z", state.z);
  std::vector<Var> mu, c;
  for (Index l = 0; l < n_layers; ++l) {
    mu.push_back(bind.get(layer_name(l) + ".m", state.m[l]));
    c.push_back(bind.chol(layer_name(l) + ".chol", state.chol[l]));
  }
  const AdLayer& first = m.layers[0];
  const Var l1 = ad::cholesky(kern(first, z, z), opts.schedule);
  const Var mz1 = mean_of(first, z);
  const Var x = tape.constant(data.x);
  const Var h1 = ad::solve_lower(l1, kern(first, z, x));
  const Var resid1 = ad::broadcast(first.variance, n, 1) - ad::colsqnorm(h1);
  const Var prior1 = mean_of(first, x);
  const Var kl_first = kl_factor(mu[0], c[0], c[0], mz1, l1);

  auto draw = [&](Index s, Index row) {
    std::vector<Var> fz;
    for (Index l = 0; l < n_layers; ++l)
      fz.push_back(mu[l] + ad::matmul(c[l], tape.constant(noise.col(s).segment(row + l * mz, mz))));
    return fz;
  };
  auto condition = [&](const std::vector<Var>& fz, const JitterSchedule& schedule, std::vector<Var>& chols) {
    chols.assign(n_layers, Var());
    try {
      for (Index l = 1; l < n_layers; ++l)
        chols[l] = ad::cholesky(kern(m.layers[l], fz[l - 1], fz[l - 1]), schedule);
    } catch (const NotPsdError&) {
      return false;
    }
    return true;
  };

  const Index path_offset = 2 * n_layers * mz;
  const double weight = 1.0 / static_cast<double>(n_samples);
  Var total = tape.constant(0.0);
  for (Index s = 0; s < n_samples; ++s) {
    // Same rejection policy as the estimator: reserve draw, then extended jitter.
    std::vector<Var> chols;
    std::vector<Var> fz = draw(s, 0);
    if (!condition(fz, opts.schedule, chols)) {
      fz = draw(s, n_layers * mz);
      if (!condition(fz, opts.schedule, chols) && !condition(fz, JitterSchedule::extended(), chols))
        throw NumericalError("inducing outputs are degenerate even with the extended jitter schedule");
    }
    Var sample = tape.constant(0.0);
    for (Index l = 1; l < n_layers; ++l)
      sample = sample - kl_factor(mu[l], c[l], c[l], mean_of(m.layers[l], fz[l - 1]), chols[l]);

    Var f = x;
    for (Index l = 0; l < n_layers; ++l) {
      Var mean, var;
      if (l == 0) {
        mean = prior1 + ad::matmul(ad::transpose(h1), ad::solve_lower(l1, fz[0] - mz1));
        var = resid1;
      } else {
        const AdLayer& layer = m.layers[l];
        const Var h = ad::solve_lower(chols[l], kern(layer, fz[l - 1], f));
        mean = mean_of(layer, f) +
               ad::matmul(ad::transpose(h), ad::solve_lower(chols[l], fz[l] - mean_of(layer, fz[l - 1])));
        var = ad::broadcast(layer.variance, n, 1) - ad::colsqnorm(h);
      }
      if (opts.analytic_final_layer && l + 1 == n_layers) {
        sample = sample + ad::gaussian_ell(mean, var, data.y, m.noise_variance);
        break;
      }
      const Matrix<double> eps = noise.col(s).segment(path_offset + l * n, n);
      f = mean + ad::cwise_mul_const(ad::sqrt_clamped(var), eps);
      if (l + 1 == n_layers) sample = sample + ad::gaussian_ell(f, Var(), data.y, m.noise_variance);
    }
    total = total + weight * sample;
  }
  return total - kl_first;
}

}  // namespace

ElboGradient elbo_gradient(const FittedModel& fm, const ParamVector& params, const Dataset& data,
                           const NoiseBlock& noise, const ElboSettings& settings) {
  data.validate();
  // Shape and domain checks run on the plain model first.
  const FittedModel current = unpack_parameters(params, fm);
  current.model.validate();

  ad::Tape tape;
  Binder bind(tape, params);
  const Bound bound = bind_model(bind, current);
  const auto& opts = settings.estimator;
  Var elbo;
  switch (fm.scheme) {
    case SchemeKind::MeanField:
      std::get<MeanFieldState>(current.state).validate(current.model);
      elbo = elbo_meanfield(tape, bind, bound, current, data, noise, opts);
      break;
    case SchemeKind::JointAnalytic:
      std::get<ChainGaussianState>(current.state).validate(current.model);
      elbo = elbo_joint_analytic(tape, bind, bound, current, data, noise, opts);
      break;
    case SchemeKind::JointSampled:
      std::get<ChainGaussianState>(current.state).validate(current.model);
      elbo = elbo_joint_sampled(tape, bind, bound, current, data, settings.inner_samples(fm.scheme), noise,
                                opts);
      break;
    case SchemeKind::Chained:
      std::get<ChainedInducingState>(current.state).validate(current.model);
      elbo = elbo_chained_ad(tape, bind, bound, current, data, noise, opts);
      break;
  }
  ElboGradient out;
  out.value = elbo.scalar();
  if (!std::isfinite(out.value)) throw NumericalError(to_string(fm.scheme) + " ELBO is not finite");
  tape.backward(elbo);
  out.gradient = tape.gradient(bind.theta());
  if (!out.gradient.allFinite()) throw NumericalError(to_string(fm.scheme) + " ELBO gradient is not finite");
  return out;
}

}  // namespace dgp
