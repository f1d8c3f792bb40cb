#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "dgp/errors.hpp"
#include "dgp/types.hpp"

namespace dgp {

enum class KernelFamily { SquaredExponential, Periodic };

/// Stationary covariance function on the real line.
///
/// SquaredExponential: variance * exp(-(x - y)^2 / (2 lengthscale^2))
/// Periodic:           variance * exp(-2 sin^2(pi |x - y| / period) / lengthscale^2)
template <typename Scalar>
struct KernelSpec {
  KernelFamily family = KernelFamily::SquaredExponential;
  Scalar variance = Scalar(1);
  Scalar lengthscale = Scalar(1);
  Scalar period = Scalar(1);

  Scalar operator()(const Scalar& x, const Scalar& y) const {
    using std::exp;
    using std::sin;
    const Scalar d = x - y;
    if (family == KernelFamily::SquaredExponential)
      return variance * exp(-d * d / (Scalar(2) * lengthscale * lengthscale));
    const Scalar s = sin(Scalar(std::numbers::pi) * d / period);
    return variance * exp(Scalar(-2) * s * s / (lengthscale * lengthscale));
  }

  void validate() const {
    if (!(variance > Scalar(0)) || !(lengthscale > Scalar(0)))
      throw InvalidInput("kernel variance and lengthscale must be positive");
    if (family == KernelFamily::Periodic && !(period > Scalar(0)))
      throw InvalidInput("periodic kernel period must be positive");
  }

  template <typename Other>
  KernelSpec<Other> cast() const {
    return {family, Other(variance), Other(lengthscale), Other(period)};
  }
};

inline std::string to_string(KernelFamily f) {
  return f == KernelFamily::SquaredExponential ? "se" : "periodic";
}

namespace detail {

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& v, const char* what) {
  if (!v.allFinite()) throw InvalidInput(std::string(what) + " contains non-finite entries");
}

}  // namespace detail

/// Covariance matrix with entry (i, j) = k(x_i, y_j).
template <typename Scalar, typename DerivedX, typename DerivedY>
Matrix<Scalar> eval_kernel_matrix(const KernelSpec<Scalar>& k,
                                  const Eigen::MatrixBase<DerivedX>& x,
                                  const Eigen::MatrixBase<DerivedY>& y) {
  k.validate();
  detail::require_finite(x, "kernel input X");
  detail::require_finite(y, "kernel input Y");
  const Index nx = x.size();
  const Index ny = y.size();
  Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> d =
      x.reshaped().array().replicate(1, ny) - y.reshaped().transpose().array().replicate(nx, 1);
  if (k.family == KernelFamily::SquaredExponential)
    return (k.variance * (d.square() * (Scalar(-0.5) / (k.lengthscale * k.lengthscale))).exp()).matrix();
  d = (d * Scalar(std::numbers::pi) / k.period).sin();
  return (k.variance * (d.square() * (Scalar(-2) / (k.lengthscale * k.lengthscale))).exp()).matrix();
}

/// Symmetric kernel matrix k(X, X); fills one triangle and mirrors it.
template <typename Scalar, typename Derived>
Matrix<Scalar> eval_kernel_matrix(const KernelSpec<Scalar>& k,
                                  const Eigen::MatrixBase<Derived>& x) {
  k.validate();
  detail::require_finite(x, "kernel input X");
  const Index n = x.size();
  Matrix<Scalar> out(n, n);
  for (Index j = 0; j < n; ++j) {
    out(j, j) = k.variance;
    for (Index i = j + 1; i < n; ++i) out(j, i) = out(i, j) = k(x(i), x(j));
  }
  return out;
}

}  // namespace dgp
