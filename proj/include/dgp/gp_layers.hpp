#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dgp/math_core.hpp"

namespace dgp {

enum class MeanFunction { Zero, Identity };

inline std::string to_string(MeanFunction m) { return m == MeanFunction::Zero ? "zero" : "identity"; }

template <typename Derived>
Vector<typename Derived::Scalar> apply_mean(MeanFunction mean, const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  if (mean == MeanFunction::Identity) return x;
  return Vector<Scalar>::Zero(x.size());
}

/// One layer of the composition: kernel, mean function and inducing locations.
template <typename Scalar>
struct GpLayer {
  KernelSpec<Scalar> kernel;
  MeanFunction mean = MeanFunction::Zero;
  Vector<Scalar> z;

  Index num_inducing() const { return z.size(); }

  void validate() const {
    kernel.validate();
    if (z.size() < 1) throw InvalidInput("layer needs at least one inducing location");
    if (!z.allFinite()) throw InvalidInput("inducing locations must be finite");
    for (Index i = 0; i < z.size(); ++i)
      for (Index j = i + 1; j < z.size(); ++j) {
        using std::abs;
        if (abs(z(i) - z(j)) < Scalar(1e-9))
          throw InvalidInput("inducing locations must be pairwise distinct");
      }
  }
};

/// Noise floor below which the Gaussian likelihood is considered degenerate.
inline constexpr double kMinNoiseVariance = 1e-8;

template <typename Scalar>
struct DgpModel {
  std::vector<GpLayer<Scalar>> layers;
  Scalar noise_variance = Scalar(1e-2);

  Index num_layers() const { return static_cast<Index>(layers.size()); }

  void validate() const {
    if (layers.empty()) throw InvalidInput("model needs at least one layer");
    for (const auto& l : layers) l.validate();
    if (!(noise_variance >= Scalar(kMinNoiseVariance)))
      throw InvalidInput("likelihood noise variance is below the floor 1e-8");
  }
};

/// Per-point marginals of a Gaussian.
template <typename Scalar>
struct DiagMoments {
  Vector<Scalar> mean;
  Vector<Scalar> variance;
};

/// GP conditioning on a fixed set of locations. Factorises k(z, z) once and
/// answers alpha / conditional queries at arbitrary inputs via Cholesky solves.
template <typename Scalar>
class LayerConditioner {
 public:
  LayerConditioner(const KernelSpec<Scalar>& kernel, MeanFunction mean,
                   const Vector<Scalar>& locations, const JitterSchedule& schedule = {})
      : kernel_(kernel),
        mean_(mean),
        locations_(locations),
        kzz_(eval_kernel_matrix(kernel, locations)),
        chol_(chol_psd(kzz_, schedule)),
        mean_at_locations_(apply_mean(mean, locations)) {}

  explicit LayerConditioner(const GpLayer<Scalar>& layer, const JitterSchedule& schedule = {})
      : LayerConditioner(layer.kernel, layer.mean, layer.z, schedule) {}

  Index size() const { return locations_.size(); }
  const KernelSpec<Scalar>& kernel() const { return kernel_; }
  MeanFunction mean_function() const { return mean_; }
  const Vector<Scalar>& locations() const { return locations_; }
  const Matrix<Scalar>& kzz() const { return kzz_; }
  const CholeskyFactor<Scalar>& chol() const { return chol_; }
  const Vector<Scalar>& mean_at_locations() const { return mean_at_locations_; }

  /// alpha = k(z, z)^{-1} k(z, inputs), M x N.
  Matrix<Scalar> alpha(const Vector<Scalar>& inputs) const {
    return chol_.solve(eval_kernel_matrix(kernel_, locations_, inputs));
  }

  /// GP posterior at `inputs` given values u at the locations.
  MvnMoments<Scalar> conditional_given_u(const Vector<Scalar>& inputs, const Vector<Scalar>& u) const {
    check_size(u.size());
    const Matrix<Scalar> half = chol_.solve_lower(eval_kernel_matrix(kernel_, locations_, inputs));
    const Matrix<Scalar> a = chol_.lower.transpose().template triangularView<Eigen::Upper>().solve(half);
    MvnMoments<Scalar> out;
    out.mean = apply_mean(mean_, inputs) + a.transpose() * (u - mean_at_locations_);
    out.covariance = symmetrize(eval_kernel_matrix(kernel_, inputs) - half.transpose() * half);
    return out;
  }

  /// Marginal of the conditional after integrating u ~ N(m, S).
  MvnMoments<Scalar> marginal_conditional(const Vector<Scalar>& inputs, const Vector<Scalar>& m,
                                          const Matrix<Scalar>& s) const {
    check_size(m.size());
    if (s.rows() != size() || s.cols() != size())
      throw InvalidInput("variational covariance has the wrong order");
    const Matrix<Scalar> half = chol_.solve_lower(eval_kernel_matrix(kernel_, locations_, inputs));
    const Matrix<Scalar> a = chol_.lower.transpose().template triangularView<Eigen::Upper>().solve(half);
    MvnMoments<Scalar> out;
    out.mean = apply_mean(mean_, inputs) + a.transpose() * (m - mean_at_locations_);
    out.covariance =
        symmetrize(eval_kernel_matrix(kernel_, inputs) - half.transpose() * half + a.transpose() * s * a);
    return out;
  }

  /// Pieces shared by the per-point (diagonal) conditionals at one set of inputs.
  struct PointTerms {
    Matrix<Scalar> alpha;       // M x N
    Vector<Scalar> prior_mean;  // mean function at the inputs
    Vector<Scalar> residual;    // k(x, x) - k(x, z) K^{-1} k(z, x), per point
  };

  PointTerms point_terms(const Vector<Scalar>& inputs) const {
    PointTerms t;
    Matrix<Scalar> half = chol_.solve_lower(eval_kernel_matrix(kernel_, locations_, inputs));
    t.residual = Vector<Scalar>::Constant(inputs.size(), kernel_.variance) -
                 half.colwise().squaredNorm().transpose();
    chol_.lower.transpose().template triangularView<Eigen::Upper>().solveInPlace(half);
    t.alpha = std::move(half);
    t.prior_mean = apply_mean(mean_, inputs);
    return t;
  }

  /// Per-point marginals of marginal_conditional; S = 0 gives the conditional given u = m.
  DiagMoments<Scalar> marginal_diag(const PointTerms& t, const Vector<Scalar>& m,
                                    const Matrix<Scalar>* s) const {
    check_size(m.size());
    DiagMoments<Scalar> out;
    out.mean = t.prior_mean + t.alpha.transpose() * (m - mean_at_locations_);
    out.variance = t.residual;
    if (s) out.variance += (t.alpha.array() * (*s * t.alpha).array()).colwise().sum().matrix().transpose();
    return out;
  }

  DiagMoments<Scalar> marginal_diag(const Vector<Scalar>& inputs, const Vector<Scalar>& m,
                                    const Matrix<Scalar>* s) const {
    return marginal_diag(point_terms(inputs), m, s);
  }

  /// Inputs projected onto the whitened inducing basis: h = L^{-1} k(z, inputs)
  /// with L L^T = k(z, z). One triangular solve serves both per-point
  /// conditionals below.
  struct WhitenedTerms {
    Matrix<Scalar> h;           // M x N
    Vector<Scalar> prior_mean;
    Vector<Scalar> residual;
  };

  WhitenedTerms whiten(const Vector<Scalar>& inputs) const {
    WhitenedTerms t;
    t.h = chol_.solve_lower(eval_kernel_matrix(kernel_, locations_, inputs));
    t.residual = Vector<Scalar>::Constant(inputs.size(), kernel_.variance) -
                 t.h.colwise().squaredNorm().transpose();
    t.prior_mean = apply_mean(mean_, inputs);
    return t;
  }

  /// Per-point conditional given u: mean mu(x) + h^T L^{-1}(u - mu(z)), variance residual.
  DiagMoments<Scalar> given_u_diag(const WhitenedTerms& t, const Vector<Scalar>& u) const {
    check_size(u.size());
    DiagMoments<Scalar> out;
    out.mean = t.prior_mean + t.h.transpose() * chol_.solve_lower(u - mean_at_locations_);
    out.variance = t.residual;
    return out;
  }

  /// Per-point marginal with u ~ N(m, C C^T); alpha^T S alpha = |C^T L^{-T} h|^2.
  DiagMoments<Scalar> marginal_diag_factor(const WhitenedTerms& t, const Vector<Scalar>& m,
                                           const Matrix<Scalar>& c) const {
    check_size(m.size());
    const Matrix<Scalar> b = chol_.solve_lower(c).transpose();
    DiagMoments<Scalar> out;
    out.mean = t.prior_mean + t.h.transpose() * chol_.solve_lower(m - mean_at_locations_);
    out.variance = t.residual + (b * t.h).colwise().squaredNorm().transpose();
    return out;
  }

 private:
  void check_size(Index n) const {
    if (n != size()) throw InvalidInput("inducing value vector has the wrong length");
  }

  KernelSpec<Scalar> kernel_;
  MeanFunction mean_;
  Vector<Scalar> locations_;
  Matrix<Scalar> kzz_;
  CholeskyFactor<Scalar> chol_;
  Vector<Scalar> mean_at_locations_;
};

/// alpha(inputs) = K(z, z)^{-1} K(z, inputs) for the layer's inducing locations.
template <typename Scalar>
Matrix<Scalar> alpha(const GpLayer<Scalar>& layer, const Vector<Scalar>& inputs) {
  return LayerConditioner<Scalar>(layer).alpha(inputs);
}

template <typename Scalar>
MvnMoments<Scalar> conditional_given_u(const GpLayer<Scalar>& layer, const Vector<Scalar>& inputs,
                                       const Vector<Scalar>& u) {
  return LayerConditioner<Scalar>(layer).conditional_given_u(inputs, u);
}

template <typename Scalar>
MvnMoments<Scalar> marginal_conditional(const GpLayer<Scalar>& layer, const Vector<Scalar>& inputs,
                                        const Vector<Scalar>& m, const Matrix<Scalar>& s) {
  return LayerConditioner<Scalar>(layer).marginal_conditional(inputs, m, s);
}

/// Expected Gaussian log-likelihood of y under f ~ N(mean, variance) per point.
template <typename Scalar>
Scalar expected_log_likelihood(const Vector<Scalar>& y, const DiagMoments<Scalar>& f,
                               const Scalar& noise_variance) {
  Scalar total(0);
  for (Index j = 0; j < y.size(); ++j)
    total += log_normal_pdf(y(j), f.mean(j), noise_variance) -
             f.variance(j) / (Scalar(2) * noise_variance);
  return total;
}

template <typename Scalar>
Scalar log_likelihood(const Vector<Scalar>& y, const Vector<Scalar>& f, const Scalar& noise_variance) {
  Scalar total(0);
  for (Index j = 0; j < y.size(); ++j) total += log_normal_pdf(y(j), f(j), noise_variance);
  return total;
}

}  // namespace dgp
