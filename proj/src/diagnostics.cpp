#include "dgp/diagnostics.hpp"

#include <atomic>
#include <cmath>
#include <thread>

namespace dgp {

namespace {

struct Stencil {
  double mean_slope;
  double variance_curvature;
  double base_variance;
};

Stencil five_point(const LayerConditioner<double>& cond, const Vector<double>& m, const Matrix<double>& s,
                   double x_bar, double h) {
  Vector<double> xs(5);
  xs << x_bar - 2 * h, x_bar - h, x_bar, x_bar + h, x_bar + 2 * h;
  const auto d = cond.marginal_diag(xs, m, &s);
  const auto& mu = d.mean;
  const auto& v = d.variance;
  Stencil out;
  out.mean_slope = (mu(0) - 8 * mu(1) + 8 * mu(3) - mu(4)) / (12 * h);
  out.variance_curvature = (-v(0) + 16 * v(1) - 30 * v(2) + 16 * v(3) - v(4)) / (12 * h * h);
  out.base_variance = v(2);
  return out;
}

}  // namespace

NoisyInputExpansion noisy_input_expansion(const GpLayer<double>& layer, const Vector<double>& m,
                                          const Matrix<double>& s, double x_bar, double noise_variance) {
  layer.validate();
  if (!std::isfinite(x_bar)) throw InvalidInput("noisy_input_expansion: x_bar must be finite");
  if (!(noise_variance >= 0)) throw InvalidInput("noisy_input_expansion: input noise variance must be >= 0");
  const LayerConditioner<double> cond(layer);
  double h = 1e-3 * layer.kernel.lengthscale;
  for (int attempt = 0; attempt < 2; ++attempt, h *= 10) {
    const Stencil st = five_point(cond, m, s, x_bar, h);
    if (!std::isfinite(st.mean_slope) || !std::isfinite(st.variance_curvature) ||
        !std::isfinite(st.base_variance))
      continue;
    NoisyInputExpansion out;
    out.base_variance = st.base_variance;
    out.mean_slope = st.mean_slope;
    out.variance_curvature = st.variance_curvature;
    out.noise_variance = noise_variance;
    out.step = h;
    out.variance = noise_variance == 0
                       ? st.base_variance
                       : st.base_variance + noise_variance * (st.mean_slope * st.mean_slope + st.variance_curvature);
    return out;
  }
  throw NumericalError("noisy_input_expansion: non-finite moments on the stencil around x_bar");
}

CounterexampleResult counterexample_eval(double gamma, double u, double mu_star, double sigma_star2) {
  if (!(gamma > 0)) throw InvalidInput("counterexample: gamma must be positive");
  if (!(sigma_star2 >= 0)) throw InvalidInput("counterexample: sigma_star2 must be >= 0");
  if (!std::isfinite(u) || !std::isfinite(mu_star) || !std::isfinite(sigma_star2))
    throw InvalidInput("counterexample: arguments must be finite");
  const double g2 = gamma * gamma;
  const double d2 = (u - mu_star) * (u - mu_star);
  const double a = 0.5 * g2 + sigma_star2;
  const double r = 2 * sigma_star2 / g2 + 1;

  CounterexampleResult out;
  out.gamma = gamma;
  out.u = u;
  out.mu_star = mu_star;
  out.sigma_star2 = sigma_star2;
  out.q = std::exp(-d2 / (2 * a)) / std::sqrt(r);
  out.variance = 1 - out.q;
  out.derivative = std::exp(-d2 / (2 * a)) * (-d2 / (2 * a * a) + 1 / (g2 * std::pow(r, 1.5)));
  out.derivative_at_zero = std::exp(-d2 / g2) * (-2 * d2 / (g2 * g2) + 1 / g2);
  out.noise_reduces_variance = gamma < std::sqrt(2.0) * std::abs(u - mu_star);
  return out;
}

CounterexampleResult counterexample_eval(const GpLayer<double>& layer, double mu_star, double sigma_star2) {
  layer.validate();
  if (layer.num_inducing() != 1)
    throw InvalidInput("counterexample: the closed form holds for a single inducing point only");
  if (layer.kernel.family != KernelFamily::SquaredExponential)
    throw InvalidInput("counterexample: the closed form needs a squared-exponential kernel");
  if (layer.kernel.variance != 1.0)
    throw InvalidInput("counterexample: the closed form needs unit kernel variance");
  if (layer.mean != MeanFunction::Zero)
    throw InvalidInput("counterexample: the closed form needs a zero mean function (u = 0)");
  return counterexample_eval(layer.kernel.lengthscale, layer.z(0), mu_star, sigma_star2);
}

MonteCarloVariance counterexample_mc_variance(double gamma, double u, double mu_star, double sigma_star2,
                                              Index n_samples, const RngHandle& rng) {
  counterexample_eval(gamma, u, mu_star, sigma_star2);
  if (n_samples < 2) throw InvalidInput("counterexample_mc_variance: need at least 2 samples");
  const NoiseBlock e = draw_standard_normals(2, n_samples, rng);
  const double sd = std::sqrt(sigma_star2);
  // Given x*, f ~ N(0, 1 - k(x*, u)^2): the posterior of a unit SE process with f(u) = 0.
  Vector<double> f(n_samples);
  for (Index i = 0; i < n_samples; ++i) {
    const double x = mu_star + sd * e(0, i);
    const double k = std::exp(-0.5 * (x - u) * (x - u) / (gamma * gamma));
    f(i) = std::sqrt(std::max(0.0, 1 - k * k)) * e(1, i);
  }
  const double n = static_cast<double>(n_samples);
  const double mean = f.mean();
  const Vector<double> c = f.array() - mean;
  const double var = c.squaredNorm() / (n - 1);
  const double m4 = c.array().pow(4).mean();
  MonteCarloVariance out;
  out.variance = var;
  out.std_error = std::sqrt(std::max(0.0, (m4 - var * var) / n));
  return out;
}

namespace {

void scan_one(double gamma, Index m, const Vector<double>& grid, Vector<double>& variance,
              Vector<double>& curvature) {
  using Real = long double;
  KernelSpec<Real> k;
  k.lengthscale = gamma;
  // M points strictly inside the interval, equal gaps including both borders.
  const Vector<Real> z = Vector<Real>::LinSpaced(m + 2, Real(-3 * gamma), Real(3 * gamma)).segment(1, m);
  const LayerConditioner<Real> cond(k, MeanFunction::Zero, z);
  const Vector<Real> x = grid.cast<Real>();
  const Vector<Real> v = cond.whiten(x).residual;
  const Index n = grid.size();
  const Real h = (x(n - 1) - x(0)) / Real(n - 1);
  variance = v.cast<double>();
  curvature = Vector<double>::Constant(n, std::numeric_limits<double>::quiet_NaN());
  for (Index i = 1; i + 1 < n; ++i)
    curvature(i) = static_cast<double>((v(i + 1) - 2 * v(i) + v(i - 1)) / (h * h));
}

}  // namespace

CurvatureScan second_derivative_scan(double gamma, const std::vector<Index>& m_values, Index grid_n,
                                     int threads) {
  if (!(gamma > 0)) throw InvalidInput("second_derivative_scan: gamma must be positive");
  if (grid_n < 3) throw InvalidInput("second_derivative_scan: grid needs at least 3 points");
  if (m_values.empty()) throw InvalidInput("second_derivative_scan: no inducing counts given");
  for (Index m : m_values)
    if (m < 2) throw InvalidInput("second_derivative_scan: every M must be at least 2");

  CurvatureScan out;
  out.gamma = gamma;
  out.m_values = m_values;
  out.grid = Vector<double>::LinSpaced(grid_n, -3 * gamma, 3 * gamma);
  const std::size_t k = m_values.size();
  out.variance.resize(k);
  out.curvature.resize(k);
  out.minimum.resize(k);
  out.argmin.resize(k);

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(k);
  auto work = [&] {
    for (std::size_t j; (j = next++) < k;) {
      try {
        scan_one(gamma, m_values[j], out.grid, out.variance[j], out.curvature[j]);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(threads, static_cast<int>(k)));
  std::vector<std::thread> pool;
  for (int t = 1; t < n_threads; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (std::size_t j = 0; j < k; ++j) {
    const Vector<double>& c = out.curvature[j];
    Index best = 1;
    for (Index i = 2; i + 1 < c.size(); ++i)
      if (c(i) < c(best)) best = i;
    out.minimum[j] = c(best);
    out.argmin[j] = out.grid(best);
  }
  return out;
}

LayerVariance layer_variance_probe(const FittedModel& fm, double x0, Index n_samples, const RngHandle& rng,
                                   const EstimatorOptions& opts) {
  constexpr Index kBlocks = 10;
  if (n_samples < 2 * kBlocks) throw InvalidInput("layer_variance_probe: need at least 20 samples");
  if (!std::isfinite(x0)) throw InvalidInput("layer_variance_probe: x0 must be finite");
  const SampleSet set = sample_layers(fm, Vector<double>::Constant(1, x0), n_samples, rng, opts);

  auto variance_of = [](const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    double mean = 0;
    for (double x : v) mean += x;
    mean /= n;
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return ss / (n - 1);
  };

  LayerVariance out;
  out.x0 = x0;
  out.n_samples = n_samples;
  for (const Matrix<double>& draws : set.layers) {
    std::vector<double> all(draws.col(0).data(), draws.col(0).data() + draws.rows());
    out.variance.push_back(variance_of(all));
    // Delete-one-block jackknife; blocks are contiguous runs of draws.
    std::vector<double> partial(kBlocks);
    for (Index b = 0; b < kBlocks; ++b) {
      const Index lo = b * n_samples / kBlocks;
      const Index hi = (b + 1) * n_samples / kBlocks;
      std::vector<double> rest;
      rest.reserve(all.size());
      for (Index i = 0; i < n_samples; ++i)
        if (i < lo || i >= hi) rest.push_back(all[i]);
      partial[b] = variance_of(rest);
    }
    double pbar = 0;
    for (double p : partial) pbar += p;
    pbar /= kBlocks;
    double ss = 0;
    for (double p : partial) ss += (p - pbar) * (p - pbar);
    out.std_error.push_back(std::sqrt(ss * (kBlocks - 1) / kBlocks));
  }
  return out;
}

}  // namespace dgp
