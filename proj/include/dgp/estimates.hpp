#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dgp/gp_layers.hpp"

namespace dgp {

/// Training or query data for one-dimensional regression.
struct Dataset {
  Vector<double> x;
  Vector<double> y;

  Index size() const { return x.size(); }

  void validate() const {
    if (x.size() != y.size()) throw InvalidInput("dataset x and y lengths differ");
    if (x.size() == 0) throw InvalidInput("dataset is empty");
    if (!x.allFinite() || !y.allFinite()) throw InvalidInput("dataset contains non-finite values");
  }
};

/// Per-layer function draws over a set of query inputs.
/// layers[l] is n_samples x n_query and holds the outputs of layer l + 1.
struct SampleSet {
  std::string scheme;
  RngHandle rng;
  Vector<double> query;
  std::vector<Matrix<double>> layers;

  Index num_samples() const { return layers.empty() ? 0 : layers.front().rows(); }
};

/// Work counters, used to check the cost model of the estimators.
struct OpStats {
  std::uint64_t factorizations = 0;       // M x M Cholesky factorisations
  std::uint64_t scalar_conditionals = 0;  // per-point univariate conditionals
  std::uint64_t rejected_samples = 0;     // chained scheme: f^z draws redrawn once
  std::uint64_t escalations = 0;          // chained scheme: extended jitter schedule used

  OpStats& operator+=(const OpStats& o) {
    factorizations += o.factorizations;
    scalar_conditionals += o.scalar_conditionals;
    rejected_samples += o.rejected_samples;
    escalations += o.escalations;
    return *this;
  }
};

/// Monte-Carlo ELBO with its breakdown. `value` = expected_log_lik - kl.
struct ElboEstimate {
  double value = 0;
  double expected_log_lik = 0;
  double kl = 0;
  double std_error = 0;      // of `value`
  double ell_std_error = 0;  // of the expectation term alone
  Index n_samples = 0;       // outer samples
  Index n_inner = 1;         // nested samples per outer sample (sampled joint scheme)
  OpStats stats;
};

struct EstimatorOptions {
  /// Replace the final-layer draw by the closed-form Gaussian expectation
  /// E[log N(y | f, s2)] = log N(y | mu, s2) - v / (2 s2).
  bool analytic_final_layer = false;
  JitterSchedule schedule;
};

namespace detail {

/// Mean and standard error of per-sample values.
inline std::pair<double, double> mean_and_se(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  if (v.empty()) return {0.0, 0.0};
  double mean = 0;
  for (double x : v) mean += x;
  mean /= n;
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1) / n)};
}

inline void check_noise(const NoiseBlock& noise, Index rows, const char* scheme) {
  if (noise.rows() != rows || noise.cols() < 1)
    throw InvalidInput(std::string(scheme) + ": noise block has " + std::to_string(noise.rows()) +
                       " rows, expected " + std::to_string(rows));
}

inline void check_finite_moments(const DiagMoments<double>& d, int layer) {
  if (!d.mean.allFinite() || !d.variance.allFinite())
    throw NumericalError("non-finite conditional moments in layer " + std::to_string(layer), layer);
}

}  // namespace detail

}  // namespace dgp
