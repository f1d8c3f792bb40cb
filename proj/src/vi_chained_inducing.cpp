#include "dgp/vi_chained_inducing.hpp"

#include <cmath>
#include <optional>
#include <string>

namespace dgp {

void ChainedInducingState::validate(const DgpModel<double>& model) const {
  if (num_layers() != model.num_layers() || static_cast<Index>(chol.size()) != model.num_layers())
    throw InvalidInput("chained state has the wrong number of layers");
  if (z.size() < 1 || !z.allFinite()) throw InvalidInput("chained state needs finite inducing inputs");
  for (Index l = 0; l < num_layers(); ++l)
    if (m[l].size() != z.size() || chol[l].rows() != z.size() || chol[l].cols() != z.size())
      throw InvalidInput("chained state shape does not match layer " + std::to_string(l + 1));
}

ChainedInducingState init_chained(const DgpModel<double>& model, const Vector<double>& z,
                                  double scale) {
  model.validate();
  ChainedInducingState s;
  s.z = z;
  Vector<double> inputs = z;
  for (const auto& layer : model.layers) {
    s.m.push_back(apply_mean(layer.mean, inputs));
    const Matrix<double> k = eval_kernel_matrix(layer.kernel, inputs);
    s.chol.push_back(chol_psd(Matrix<double>(scale * k)).lower);
    inputs = s.m.back();
  }
  return s;
}

namespace {

double log_det_of(const Matrix<double>& chol) {
  return 2.0 * chol.diagonal().array().abs().log().sum();
}

// Per-sample conditioning machinery: f^z draws and one conditioner per layer.
struct SampleContext {
  std::vector<Vector<double>> fz;
  std::vector<std::optional<LayerConditioner<double>>> conds;  // layers >= 2 only
};

std::vector<Vector<double>> draw_fz(const ChainedInducingState& state, const NoiseBlock& noise,
                                    Index col, Index row_offset) {
  const Index mz = state.num_inducing();
  std::vector<Vector<double>> fz;
  for (Index l = 0; l < state.num_layers(); ++l)
    fz.push_back(state.m[l] + state.chol[l].triangularView<Eigen::Lower>() *
                                  noise.col(col).segment(row_offset + l * mz, mz));
  return fz;
}

bool try_condition(const DgpModel<double>& model, SampleContext& ctx, const JitterSchedule& schedule) {
  ctx.conds.assign(model.num_layers(), std::nullopt);
  try {
    for (Index l = 1; l < model.num_layers(); ++l)
      ctx.conds[l].emplace(model.layers[l].kernel, model.layers[l].mean, ctx.fz[l - 1], schedule);
  } catch (const NotPsdError&) {
    return false;
  }
  return true;
}

// Draws f^z for one sample. When a drawn f^z_{l-1} makes K_l(f^z_{l-1})
// unfactorisable under the standard schedule (i.e. it would need jitter above
// 1e-6 of the kernel variance), the whole draw is replaced once by the
// reserve noise; if that also fails the extended schedule is used.
SampleContext prepare_sample(const DgpModel<double>& model, const ChainedInducingState& state,
                             const NoiseBlock& noise, Index col, const EstimatorOptions& opts,
                             OpStats& stats) {
  SampleContext ctx;
  ctx.fz = draw_fz(state, noise, col, 0);
  stats.factorizations += model.num_layers() - 1;
  if (try_condition(model, ctx, opts.schedule)) return ctx;
  ++stats.rejected_samples;
  ctx.fz = draw_fz(state, noise, col, model.num_layers() * state.num_inducing());
  stats.factorizations += model.num_layers() - 1;
  if (try_condition(model, ctx, opts.schedule)) return ctx;
  ++stats.escalations;
  stats.factorizations += model.num_layers() - 1;
  if (!try_condition(model, ctx, JitterSchedule::extended()))
    throw NumericalError("inducing outputs are degenerate even with the extended jitter schedule");
  return ctx;
}

struct Propagation {
  std::vector<double> log_lik;
  std::vector<double> kl_inner;  // per sample, sum over layers >= 2
  std::vector<Matrix<double>> layers;
  std::vector<Matrix<double>> fz;
  OpStats stats;
};

Propagation propagate(const DgpModel<double>& model, const ChainedInducingState& state,
                      const Vector<double>& inputs, const Vector<double>* targets,
                      const NoiseBlock& noise, const EstimatorOptions& opts, bool keep_layers,
                      bool want_kl) {
  state.validate(model);
  const Index n = inputs.size();
  const Index n_layers = model.num_layers();
  const Index mz = state.num_inducing();
  detail::check_noise(noise, chained_noise_rows(n_layers, mz, n), "chained");

  Propagation out;
  const LayerConditioner<double> first(model.layers[0].kernel, model.layers[0].mean, state.z,
                                       opts.schedule);
  out.stats.factorizations += 1;
  std::vector<double> log_det(n_layers);
  for (Index l = 0; l < n_layers; ++l) log_det[l] = log_det_of(state.chol[l]);
  for (Index l = 0; l < n_layers; ++l) {
    out.fz.emplace_back(mz, noise.cols());
    if (keep_layers) out.layers.emplace_back(noise.cols(), n);
  }

  const bool analytic = opts.analytic_final_layer && targets;
  const auto first_terms = first.whiten(inputs);
  const Index path_offset = 2 * n_layers * mz;
  for (Index s = 0; s < noise.cols(); ++s) {
    SampleContext ctx = prepare_sample(model, state, noise, s, opts, out.stats);
    for (Index l = 0; l < n_layers; ++l) out.fz[l].col(s) = ctx.fz[l];
    if (want_kl) {
      double kl = 0;
      for (Index l = 1; l < n_layers; ++l)
        kl += kl_from_factor<double>(state.m[l], state.chol[l], log_det[l],
                                     ctx.conds[l]->mean_at_locations(), ctx.conds[l]->chol());
      out.kl_inner.push_back(kl);
    }
    if (n == 0) continue;
    Vector<double> f = inputs;
    for (Index l = 0; l < n_layers; ++l) {
      const auto moments = l == 0 ? first.given_u_diag(first_terms, ctx.fz[0])
                                  : ctx.conds[l]->given_u_diag(ctx.conds[l]->whiten(f), ctx.fz[l]);
      detail::check_finite_moments(moments, static_cast<int>(l + 1));
      out.stats.scalar_conditionals += n;
      if (analytic && l + 1 == n_layers) {
        out.log_lik.push_back(expected_log_likelihood(*targets, moments, model.noise_variance));
        break;
      }
      const auto eps = noise.col(s).segment(path_offset + l * n, n);
      f = moments.mean + (moments.variance.cwiseMax(0.0).cwiseSqrt().array() * eps.array()).matrix();
      if (keep_layers) out.layers[l].row(s) = f.transpose();
    }
    if (targets && !analytic) out.log_lik.push_back(log_likelihood(*targets, f, model.noise_variance));
  }
  return out;
}

double first_layer_kl(const DgpModel<double>& model, const ChainedInducingState& state,
                      const JitterSchedule& schedule) {
  const LayerConditioner<double> cond(model.layers[0].kernel, model.layers[0].mean, state.z, schedule);
  return kl_from_factor<double>(state.m[0], state.chol[0], log_det_of(state.chol[0]),
                                cond.mean_at_locations(), cond.chol());
}

}  // namespace

double kl_term_chained(const DgpModel<double>& model, const ChainedInducingState& state, Index layer,
                       const Matrix<double>& fz_prev, const JitterSchedule& schedule) {
  state.validate(model);
  if (layer < 0 || layer >= model.num_layers()) throw InvalidInput("layer index out of range");
  if (layer == 0) return first_layer_kl(model, state, schedule);
  if (fz_prev.rows() != state.num_inducing() || fz_prev.cols() < 1)
    throw InvalidInput("kl_term_chained needs M x S draws of the previous layer");
  const auto& spec = model.layers[layer];
  const double log_det = log_det_of(state.chol[layer]);
  double total = 0;
  for (Index s = 0; s < fz_prev.cols(); ++s) {
    const Vector<double> inputs = fz_prev.col(s);
    const Matrix<double> k = eval_kernel_matrix(spec.kernel, inputs);
    CholeskyFactor<double> chol;
    try {
      chol = chol_psd(k, schedule);
    } catch (const NotPsdError&) {
      chol = chol_psd(k, JitterSchedule::extended());
    }
    total += kl_from_factor<double>(state.m[layer], state.chol[layer], log_det,
                                    apply_mean(spec.mean, inputs), chol);
  }
  return total / static_cast<double>(fz_prev.cols());
}

std::vector<Matrix<double>> draw_inducing_outputs(const DgpModel<double>& model,
                                                  const ChainedInducingState& state,
                                                  const NoiseBlock& noise,
                                                  const EstimatorOptions& opts, OpStats* stats) {
  const Index rows = chained_noise_rows(model, state, 0);
  if (noise.rows() < rows)
    throw InvalidInput("noise block has " + std::to_string(noise.rows()) + " rows, need at least " +
                       std::to_string(rows));
  auto prop = propagate(model, state, Vector<double>(0), nullptr, NoiseBlock(noise.topRows(rows)),
                        opts, false, false);
  if (stats) *stats += prop.stats;
  return prop.fz;
}

SampleSet sample_chain(const DgpModel<double>& model, const ChainedInducingState& state,
                       const Vector<double>& query, const NoiseBlock& noise,
                       const EstimatorOptions& opts, OpStats* stats) {
  auto prop = propagate(model, state, query, nullptr, noise, opts, true, false);
  if (stats) *stats += prop.stats;
  SampleSet set;
  set.scheme = "chained";
  set.query = query;
  set.layers = std::move(prop.layers);
  return set;
}

SampleSet sample_chain(const DgpModel<double>& model, const ChainedInducingState& state,
                       const Vector<double>& query, Index n_samples, const RngHandle& rng,
                       const EstimatorOptions& opts, OpStats* stats) {
  const NoiseBlock noise =
      draw_standard_normals(chained_noise_rows(model, state, query.size()), n_samples, rng);
  SampleSet set = sample_chain(model, state, query, noise, opts, stats);
  set.rng = rng;
  return set;
}

ElboEstimate elbo_chained(const DgpModel<double>& model, const ChainedInducingState& state,
                          const Dataset& data, const NoiseBlock& noise, const EstimatorOptions& opts) {
  data.validate();
  const auto prop = propagate(model, state, data.x, &data.y, noise, opts, false, true);
  const double kl_first = first_layer_kl(model, state, opts.schedule);
  std::vector<double> values;
  std::vector<double> kls;
  for (std::size_t s = 0; s < prop.log_lik.size(); ++s) {
    kls.push_back(kl_first + prop.kl_inner[s]);
    values.push_back(prop.log_lik[s] - kls.back());
  }
  ElboEstimate e;
  const auto [ell, ell_se] = detail::mean_and_se(prop.log_lik);
  const auto [value, se] = detail::mean_and_se(values);
  e.expected_log_lik = ell;
  e.ell_std_error = ell_se;
  e.kl = detail::mean_and_se(kls).first;
  e.value = value;
  e.std_error = se;
  e.n_samples = noise.cols();
  e.stats = prop.stats;
  e.stats.factorizations += 1;
  if (!std::isfinite(e.value)) throw NumericalError("chained ELBO is not finite");
  return e;
}

ElboEstimate elbo_chained(const DgpModel<double>& model, const ChainedInducingState& state,
                          const Dataset& data, Index n_samples, const RngHandle& rng,
                          const EstimatorOptions& opts) {
  const NoiseBlock noise =
      draw_standard_normals(chained_noise_rows(model, state, data.size()), n_samples, rng);
  return elbo_chained(model, state, data, noise, opts);
}

}  // namespace dgp
