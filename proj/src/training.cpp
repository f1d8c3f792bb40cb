#include "dgp/training.hpp"

#include "dgp/adjoint_elbo.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

namespace dgp {

double forward_transform(Transform t, double raw, double floor) {
  switch (t) {
    case Transform::Identity: return raw;
    case Transform::Softplus:
      // log(1 + e^x) without overflow for large x
      return floor + (raw > 30.0 ? raw + std::log1p(std::exp(-raw)) : std::log1p(std::exp(raw)));
    case Transform::Exp: return floor + std::exp(raw);
  }
  return raw;
}

double inverse_transform(Transform t, double value, double floor) {
  switch (t) {
    case Transform::Identity: return value;
    case Transform::Softplus: {
      const double y = std::max(value - floor, 1e-300);
      return y > 30.0 ? y + std::log(-std::expm1(-y)) : std::log(std::expm1(y));
    }
    case Transform::Exp: return std::log(std::max(value - floor, 1e-300));
  }
  return value;
}

void ParamVector::add(const std::string& name, const Vector<double>& values, Transform t, double floor) {
  if (has(name)) throw InvalidInput("duplicate parameter block '" + name + "'");
  ParamBlock b{name, raw_.size(), values.size(), t, floor};
  raw_.conservativeResize(raw_.size() + values.size());
  for (Index i = 0; i < values.size(); ++i) raw_(b.offset + i) = inverse_transform(t, values(i), floor);
  blocks_.push_back(b);
}

bool ParamVector::has(const std::string& name) const {
  return std::any_of(blocks_.begin(), blocks_.end(), [&](const ParamBlock& b) { return b.name == name; });
}

const ParamBlock& ParamVector::block(const std::string& name) const {
  for (const auto& b : blocks_)
    if (b.name == name) return b;
  throw InvalidInput("no parameter block named '" + name + "'");
}

Vector<double> ParamVector::get(const std::string& name) const {
  const auto& b = block(name);
  Vector<double> out(b.size);
  for (Index i = 0; i < b.size; ++i) out(i) = forward_transform(b.transform, raw_(b.offset + i), b.floor);
  return out;
}

std::string ParamVector::describe(Index i) const {
  for (const auto& b : blocks_)
    if (i >= b.offset && i < b.offset + b.size) return b.name + "[" + std::to_string(i - b.offset) + "]";
  return "coordinate " + std::to_string(i);
}

namespace {

std::string layer_name(Index l) { return "layer" + std::to_string(l + 1); }

Vector<double> strict_lower(const Matrix<double>& c) {
  const Index n = c.rows();
  Vector<double> out(n * (n - 1) / 2);
  Index k = 0;
  for (Index j = 0; j < n; ++j)
    for (Index i = j + 1; i < n; ++i) out(k++) = c(i, j);
  return out;
}

void add_chol(ParamVector& p, const std::string& name, const Matrix<double>& c) {
  p.add(name + ".diag", c.diagonal().cwiseAbs().cwiseMax(2 * kCholDiagFloor), Transform::Softplus,
        kCholDiagFloor);
  p.add(name + ".lower", strict_lower(c));
}

Matrix<double> get_chol(const ParamVector& p, const std::string& name) {
  const Vector<double> diag = p.get(name + ".diag");
  const Vector<double> lower = p.get(name + ".lower");
  const Index n = diag.size();
  Matrix<double> c = Matrix<double>::Zero(n, n);
  c.diagonal() = diag;
  Index k = 0;
  for (Index j = 0; j < n; ++j)
    for (Index i = j + 1; i < n; ++i) c(i, j) = lower(k++);
  return c;
}

Vector<double> flatten(const Matrix<double>& a) { return Eigen::Map<const Vector<double>>(a.data(), a.size()); }

Matrix<double> reshape(const Vector<double>& v, Index rows, Index cols) {
  return Eigen::Map<const Matrix<double>>(v.data(), rows, cols);
}

void pack_kernel(ParamVector& p, const std::string& prefix, const KernelSpec<double>& k) {
  p.add(prefix + ".kernel.variance", Vector<double>::Constant(1, k.variance), Transform::Exp);
  p.add(prefix + ".kernel.lengthscale", Vector<double>::Constant(1, k.lengthscale), Transform::Exp);
  if (k.family == KernelFamily::Periodic)
    p.add(prefix + ".kernel.period", Vector<double>::Constant(1, k.period), Transform::Exp);
}

}  // namespace

ParamVector pack_parameters(const FittedModel& fm, const TrainableSet& trainable) {
  ParamVector p;
  const auto& model = fm.model;
  const Index n_layers = model.num_layers();
  if (trainable.variational) {
    if (const auto* s = std::get_if<MeanFieldState>(&fm.state)) {
      for (Index l = 0; l < n_layers; ++l) {
        p.add(layer_name(l) + ".m", s->m[l]);
        add_chol(p, layer_name(l) + ".chol", s->chol[l]);
      }
    } else if (const auto* s = std::get_if<ChainGaussianState>(&fm.state)) {
      for (Index l = 0; l < n_layers; ++l) {
        if (l > 0) p.add(layer_name(l) + ".a", flatten(s->a[l]));
        p.add(layer_name(l) + ".b", s->b[l]);
        add_chol(p, layer_name(l) + ".c", s->c[l]);
      }
    } else if (const auto* s = std::get_if<ChainedInducingState>(&fm.state)) {
      for (Index l = 0; l < n_layers; ++l) {
        p.add(layer_name(l) + ".m", s->m[l]);
        add_chol(p, layer_name(l) + ".chol", s->chol[l]);
      }
    }
  }
  if (trainable.kernel)
    for (Index l = 0; l < n_layers; ++l) pack_kernel(p, layer_name(l), model.layers[l].kernel);
  if (trainable.noise)
    p.add("noise_variance", Vector<double>::Constant(1, std::max(model.noise_variance, 2 * kTrainableNoiseFloor)),
          Transform::Exp, kTrainableNoiseFloor);
  if (fm.scheme == SchemeKind::Chained) {
    if (trainable.inducing_first) p.add("z", std::get<ChainedInducingState>(fm.state).z);
  } else {
    for (Index l = 0; l < n_layers; ++l)
      if (l == 0 ? trainable.inducing_first : trainable.inducing_inner)
        p.add(layer_name(l) + ".z", model.layers[l].z);
  }
  return p;
}

FittedModel unpack_parameters(const ParamVector& p, const FittedModel& fm) {
  FittedModel out = fm;
  auto& model = out.model;
  const Index n_layers = model.num_layers();
  for (Index l = 0; l < n_layers; ++l) {
    const std::string name = layer_name(l);
    auto& k = model.layers[l].kernel;
    if (p.has(name + ".kernel.variance")) k.variance = p.get_scalar(name + ".kernel.variance");
    if (p.has(name + ".kernel.lengthscale")) k.lengthscale = p.get_scalar(name + ".kernel.lengthscale");
    if (p.has(name + ".kernel.period")) k.period = p.get_scalar(name + ".kernel.period");
    if (p.has(name + ".z")) model.layers[l].z = p.get(name + ".z");
  }
  if (p.has("noise_variance")) model.noise_variance = p.get_scalar("noise_variance");

  if (auto* s = std::get_if<MeanFieldState>(&out.state)) {
    for (Index l = 0; l < n_layers; ++l) {
      const std::string name = layer_name(l);
      if (p.has(name + ".m")) s->m[l] = p.get(name + ".m");
      if (p.has(name + ".chol.diag")) s->chol[l] = get_chol(p, name + ".chol");
    }
  } else if (auto* s = std::get_if<ChainGaussianState>(&out.state)) {
    for (Index l = 0; l < n_layers; ++l) {
      const std::string name = layer_name(l);
      if (p.has(name + ".a")) s->a[l] = reshape(p.get(name + ".a"), s->a[l].rows(), s->a[l].cols());
      if (p.has(name + ".b")) s->b[l] = p.get(name + ".b");
      if (p.has(name + ".c.diag")) s->c[l] = get_chol(p, name + ".c");
    }
  } else if (auto* s = std::get_if<ChainedInducingState>(&out.state)) {
    if (p.has("z")) s->z = p.get("z");
    for (Index l = 0; l < n_layers; ++l) {
      const std::string name = layer_name(l);
      if (p.has(name + ".m")) s->m[l] = p.get(name + ".m");
      if (p.has(name + ".chol.diag")) s->chol[l] = get_chol(p, name + ".chol");
    }
  }
  return out;
}

Vector<double> grad_crn(const Objective& objective, const Vector<double>& theta, double rel_step,
                        int threads, const std::function<std::string(Index)>& describe) {
  const Index n = theta.size();
  Vector<double> g(n);
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto probe_range = [&](Index begin, Index end) {
    try {
      Vector<double> t = theta;
      for (Index i = begin; i < end; ++i) {
        const double h = rel_step * (1.0 + std::abs(theta(i)));
        t(i) = theta(i) + h;
        const double up = objective(t);
        t(i) = theta(i) - h;
        const double down = objective(t);
        t(i) = theta(i);
        if (!std::isfinite(up) || !std::isfinite(down))
          throw NumericalError("objective is not finite when probing " +
                               (describe ? describe(i) : "coordinate " + std::to_string(i)));
        g(i) = (up - down) / (2.0 * h);
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  };

  const Index workers = std::clamp<Index>(threads, 1, std::max<Index>(n, 1));
  if (workers == 1) {
    probe_range(0, n);
  } else {
    std::vector<std::thread> pool;
    const Index chunk = (n + workers - 1) / workers;
    for (Index w = 0; w < workers; ++w) {
      const Index begin = w * chunk;
      const Index end = std::min(n, begin + chunk);
      if (begin < end) pool.emplace_back(probe_range, begin, end);
    }
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return g;
}

void adam_step(AdamState& state, Vector<double>& theta, const Vector<double>& g) {
  if (g.size() != theta.size() || state.m.size() != theta.size())
    throw InvalidInput("adam_step: size mismatch");
  ++state.step;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * g;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * g.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  theta.array() -= state.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + state.eps);
}

std::string to_string(GradientMethod m) {
  return m == GradientMethod::Adjoint ? "adjoint" : "crn";
}

GradientMethod parse_gradient_method(const std::string& name) {
  if (name == "crn" || name == "finite_difference") return GradientMethod::CrnFiniteDifference;
  if (name == "adjoint" || name == "reverse") return GradientMethod::Adjoint;
  throw ConfigError("unknown gradient method '" + name + "' (expected crn or adjoint)");
}

GradientProvider make_gradient_provider(GradientMethod method, const FittedModel& fm, const ParamVector& layout,
                                        const Dataset& data, const ElboSettings& settings, double rel_step,
                                        int threads) {
  if (method == GradientMethod::Adjoint)
    return [fm, layout, data, settings](const Vector<double>& theta, const NoiseBlock& noise) {
      ParamVector probe = layout;
      probe.raw() = theta;
      return Vector<double>(-elbo_gradient(fm, probe, data, noise, settings).gradient);
    };
  return [fm, layout, data, settings, rel_step, threads](const Vector<double>& theta, const NoiseBlock& noise) {
    const Objective objective = [&](const Vector<double>& t) {
      ParamVector probe = layout;
      probe.raw() = t;
      try {
        return -estimate_elbo(unpack_parameters(probe, fm), data, noise, settings).value;
      } catch (const Error&) {
        return std::numeric_limits<double>::quiet_NaN();
      }
    };
    return grad_crn(objective, theta, rel_step, threads, [&](Index i) { return layout.describe(i); });
  };
}

void FitConfig::validate() const {
  if (iters < 0) throw ConfigError("training.iters must be non-negative");
  if (!(lr >= 0)) throw ConfigError("training.lr must be non-negative");
  if (n_samples < 1) throw ConfigError("training.n_samples must be positive");
  if (refresh_noise_every < 1) throw ConfigError("training.refresh_noise_every must be positive");
  if (eval_samples < 1) throw ConfigError("training.eval_samples must be positive");
  if (trace_every < 1) throw ConfigError("training.trace_every must be positive");
  if (!(rel_step > 0)) throw ConfigError("training.rel_step must be positive");
}

ElboSettings evaluation_settings(const FitConfig& config) {
  ElboSettings s;
  s.n_samples = config.eval_samples;
  s.n_inner = 0;
  s.estimator.analytic_final_layer = config.analytic_final_layer;
  return s;
}

FitResult fit(const FittedModel& initial, const Dataset& data, const FitConfig& config) {
  config.validate();
  data.validate();
  ParamVector params = pack_parameters(initial, config.trainable);
  AdamState adam(params.size(), config.lr);

  ElboSettings train;
  train.n_samples = config.n_samples;
  train.n_inner = config.n_inner;
  train.estimator.analytic_final_layer = config.analytic_final_layer;
  const ElboSettings eval = evaluation_settings(config);
  const NoiseBlock eval_noise = draw_elbo_noise(initial, data.size(), eval, evaluation_rng(config.seed));

  FitResult result;
  auto record = [&](Index iter, const FittedModel& fm) {
    ElboEstimate e;
    try {
      e = estimate_elbo(fm, data, eval_noise, eval);
    } catch (const Error& err) {
      // e.g. a lengthscale driven to zero by an oversized step
      throw NumericalError(std::string(err.what()) + " at iteration " + std::to_string(iter));
    }
    result.trace.push_back({iter, e.value, e.std_error});
    result.final_eval = e;
    if (e.value < -1e8)
      throw DivergenceError("ELBO diverged at iteration " + std::to_string(iter), result.trace);
  };

  const GradientProvider gradient = make_gradient_provider(config.gradient, initial, params, data, train,
                                                           config.rel_step, config.threads);
  record(0, unpack_parameters(params, initial));
  NoiseBlock noise;
  for (Index it = 0; it < config.iters; ++it) {
    if (it % config.refresh_noise_every == 0) {
      const auto stream = static_cast<std::uint32_t>(1 + it / config.refresh_noise_every);
      noise = draw_elbo_noise(initial, data.size(), train, RngHandle{config.seed, stream});
    }
    Vector<double> g;
    try {
      g = gradient(params.raw(), noise);
    } catch (const Error& e) {
      // Any failure inside the estimator during a step is a numerical one.
      throw NumericalError(std::string(e.what()) + " at iteration " + std::to_string(it));
    }
    adam_step(adam, params.raw(), g);
    const Index done = it + 1;
    if (done % config.trace_every == 0 || done == config.iters)
      record(done, unpack_parameters(params, initial));
  }
  result.fitted = unpack_parameters(params, initial);
  return result;
}

}  // namespace dgp
