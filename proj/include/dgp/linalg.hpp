#pragma once

#include <cmath>
#include <sstream>
#include <vector>

#include "dgp/errors.hpp"
#include "dgp/types.hpp"

namespace dgp {

/// Relative jitters tried in increasing order. Each is scaled by trace/order
/// of the matrix being factorised (1 when the trace is not positive).
struct JitterSchedule {
  std::vector<double> relative{1e-10, 1e-8, 1e-6};

  static JitterSchedule standard() { return {}; }
  static JitterSchedule extended() { return {{1e-10, 1e-8, 1e-6, 1e-4, 1e-3, 1e-2}}; }
};

/// Lower Cholesky factor of A + jitter * I.
template <typename Scalar>
struct CholeskyFactor {
  Matrix<Scalar> lower;
  Scalar jitter = Scalar(0);

  Index order() const { return lower.rows(); }

  /// L^{-1} B
  template <typename Derived>
  Matrix<Scalar> solve_lower(const Eigen::MatrixBase<Derived>& b) const {
    return lower.template triangularView<Eigen::Lower>().solve(b);
  }

  /// (L L^T)^{-1} B
  template <typename Derived>
  Matrix<Scalar> solve(const Eigen::MatrixBase<Derived>& b) const {
    Matrix<Scalar> x = solve_lower(b);
    lower.template triangularView<Eigen::Lower>().transpose().solveInPlace(x);
    return x;
  }

  Scalar log_det() const {
    using std::log;
    Scalar s(0);
    for (Index i = 0; i < order(); ++i) s += log(lower(i, i));
    return Scalar(2) * s;
  }
};

/// Cholesky factorisation with a jitter schedule. Uses the smallest scheduled
/// jitter for which the factorisation succeeds.
template <typename Derived>
CholeskyFactor<typename Derived::Scalar> chol_psd(
    const Eigen::MatrixBase<Derived>& a, const JitterSchedule& schedule = {}) {
  using Scalar = typename Derived::Scalar;
  using std::isfinite;
  if (a.rows() != a.cols()) throw InvalidInput("chol_psd: matrix is not square");
  const Index n = a.rows();
  if (n == 0) return {Matrix<Scalar>(0, 0), Scalar(0)};
  if (!a.allFinite()) throw InvalidInput("chol_psd: matrix has non-finite entries");

  Scalar scale = a.trace() / Scalar(n);
  if (!(scale > Scalar(0))) scale = Scalar(1);

  Matrix<Scalar> work;
  Eigen::LLT<Matrix<Scalar>> llt;
  Scalar jitter(0);
  for (double rel : schedule.relative) {
    jitter = Scalar(rel) * scale;
    work = a;
    work.diagonal().array() += jitter;
    llt.compute(work.template selfadjointView<Eigen::Lower>());
    if (llt.info() != Eigen::Success) continue;
    Matrix<Scalar> l = llt.matrixL();
    if (l.diagonal().allFinite() && (l.diagonal().array() > Scalar(0)).all())
      return {std::move(l), jitter};
  }
  std::ostringstream msg;
  msg << "matrix of order " << n << " is not positive semi-definite (last jitter "
      << static_cast<double>(jitter) << ")";
  throw NotPsdError(msg.str(), static_cast<double>(jitter));
}

/// Lower-triangular part of a symmetric matrix mirrored to the upper part.
template <typename Derived>
Matrix<typename Derived::Scalar> symmetrize(const Eigen::MatrixBase<Derived>& a) {
  return (a + a.transpose()) * typename Derived::Scalar(0.5);
}

}  // namespace dgp
