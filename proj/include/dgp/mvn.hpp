#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dgp/linalg.hpp"
#include "dgp/random.hpp"

namespace dgp {

template <typename Scalar>
struct MvnMoments {
  Vector<Scalar> mean;
  Matrix<Scalar> covariance;

  Index dim() const { return mean.size(); }

  void validate() const {
    if (covariance.rows() != mean.size() || covariance.cols() != mean.size())
      throw InvalidInput("MvnMoments: covariance order does not match mean");
  }
};

/// Draws `n_samples` columns mean + L eps, with L the jittered Cholesky factor.
template <typename Scalar>
Matrix<Scalar> sample_mvn(const MvnMoments<Scalar>& m, Index n_samples, const RngHandle& rng,
                          const JitterSchedule& schedule = {}) {
  m.validate();
  const auto chol = chol_psd(m.covariance, schedule);
  const Matrix<Scalar> eps = draw_standard_normals(m.dim(), n_samples, rng).template cast<Scalar>();
  Matrix<Scalar> draws = chol.lower.template triangularView<Eigen::Lower>() * eps;
  draws.colwise() += m.mean;
  return draws;
}

/// KL(N(q_mean, G G^T) || N(p_mean, Lp Lp^T)) where the caller supplies
/// log det of the q covariance separately. G need not be square: chain
/// factorisations pass a wide factor whose Gram matrix is the marginal covariance.
template <typename Scalar, typename DerivedG>
Scalar kl_from_factor(const Vector<Scalar>& q_mean, const Eigen::MatrixBase<DerivedG>& q_factor,
                      Scalar q_log_det, const Vector<Scalar>& p_mean,
                      const CholeskyFactor<Scalar>& p_chol) {
  const Index k = q_mean.size();
  if (p_mean.size() != k || p_chol.order() != k || q_factor.rows() != k)
    throw InvalidInput("gauss_kl: dimension mismatch");
  const Scalar trace_term = p_chol.solve_lower(q_factor).squaredNorm();
  const Scalar mahalanobis = p_chol.solve_lower(p_mean - q_mean).squaredNorm();
  const Scalar kl =
      Scalar(0.5) * (trace_term + mahalanobis - Scalar(k) + p_chol.log_det() - q_log_det);
  using std::max;
  return max(kl, Scalar(0));
}

/// Closed-form KL(q || p) between multivariate normals.
template <typename Scalar>
Scalar gauss_kl(const MvnMoments<Scalar>& q, const MvnMoments<Scalar>& p,
                const JitterSchedule& schedule = {}) {
  q.validate();
  p.validate();
  if (q.dim() != p.dim()) throw InvalidInput("gauss_kl: dimension mismatch");
  const auto q_chol = chol_psd(q.covariance, schedule);
  const auto p_chol = chol_psd(p.covariance, schedule);
  return kl_from_factor<Scalar>(q.mean, q_chol.lower, q_chol.log_det(), p.mean, p_chol);
}

template <typename Scalar>
Scalar log_normal_pdf(const Scalar& y, const Scalar& mean, const Scalar& variance) {
  using std::log;
  const Scalar d = y - mean;
  return Scalar(-0.5) * (log(Scalar(2 * std::numbers::pi) * variance) + d * d / variance);
}

}  // namespace dgp
