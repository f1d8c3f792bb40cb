#pragma once

#include <functional>
#include <vector>

#include "dgp/kernel.hpp"
#include "dgp/linalg.hpp"

/// Reverse-mode differentiation over dense matrices. Each operation records
/// one node holding its value and a backward rule; `Tape::backward` walks the
/// nodes in reverse and accumulates adjoints. Values are plain Eigen matrices,
/// vectors are N x 1 and scalars 1 x 1.
namespace dgp::ad {

using Mat = Matrix<double>;

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  const Mat& value() const;
  double scalar() const { return value()(0, 0); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  bool active() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  Var constant(Mat value);
  Var constant(double value) { return constant(Mat::Constant(1, 1, value)); }
  Var leaf(Mat value);

  /// Records a node computed from `inputs`; `rule` receives the node's adjoint.
  Var record(Mat value, std::vector<int> inputs, std::function<void(const Mat&)> rule);

  const Mat& value(int id) const { return nodes_[id].value; }
  bool active(int id) const { return nodes_[id].active; }

  /// Adjoint accumulator of a node, allocated on first use.
  Mat& adjoint(int id);
  /// Adds `g` to the adjoint of an active node; inactive nodes are skipped.
  void accumulate(int id, const Mat& g);

  /// Seeds d(root)/d(root) = 1 for a scalar root and propagates to all nodes.
  void backward(const Var& root);
  /// Adjoint of `v` after backward(); zero if nothing flowed into it.
  Mat gradient(const Var& v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat adjoint;
    bool active = false;
    std::function<void(const Mat&)> rule;
  };
  std::vector<Node> nodes_;
};

inline const Mat& Var::value() const { return tape_->value(id_); }
inline bool Var::active() const { return tape_->active(id_); }

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator-(const Var& a);
Var operator*(double c, const Var& a);
Var add_constant(const Var& a, const Mat& c);
Var add_constant(const Var& a, double c);

Var matmul(const Var& a, const Var& b);
/// A * B where B is not differentiated.
Var matmul_const(const Var& a, const Mat& b);
Var transpose(const Var& a);
/// s * A for a 1 x 1 variable s.
Var scale_by(const Var& s, const Var& a);

Var cwise_mul(const Var& a, const Var& b);
Var cwise_mul_const(const Var& a, const Mat& b);
Var cwise_inverse(const Var& a);
Var square(const Var& a);
/// sqrt(max(a, 0)); the derivative is zero where a <= 0.
Var sqrt_clamped(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var softplus(const Var& a);
Var clamp_min(const Var& a, double floor);

/// A with v added to every column.
Var add_colwise(const Var& a, const Var& v);
/// Column sums of A o B as a column vector.
Var colsum_prod(const Var& a, const Var& b);
/// Column sums of A o A as a column vector.
Var colsqnorm(const Var& a);
Var sum(const Var& a);
/// Sum of squared entries.
Var sqnorm(const Var& a);
/// 1 x 1 s spread over a rows x cols matrix.
Var broadcast(const Var& s, Index rows, Index cols);
/// A * diag(v).
Var scale_cols(const Var& a, const Var& v);
/// Vertical tiling of a column vector k times.
Var replicate_rows(const Var& v, Index k);
/// Each column repeated k times consecutively.
Var repeat_cols(const Var& a, Index k);
Var segment(const Var& v, Index offset, Index size);
Var reshape(const Var& v, Index rows, Index cols);
Var hconcat(const Var& a, const Var& b);
/// Lower-triangular matrix from its diagonal and its strictly lower entries (column-major).
Var tri_assemble(const Var& diag, const Var& lower);

/// k(x_i, y_j) with differentiable inputs and hyperparameters. `period` is
/// ignored for the squared-exponential family.
Var kernel_matrix(KernelFamily family, const Var& x, const Var& y, const Var& variance,
                  const Var& lengthscale, const Var& period);

/// Cholesky factor of A + jitter I (jitter chosen by chol_psd and held fixed).
Var cholesky(const Var& a, const JitterSchedule& schedule);
/// L^{-1} B
Var solve_lower(const Var& l, const Var& b);
/// L^{-T} B
Var solve_lower_t(const Var& l, const Var& b);
/// sum_i log |L_ii|
Var log_diag_sum(const Var& l);

/// scale * sum_j [ -0.5 log(2 pi s2) - ((y_j - mean_j)^2 + var_j) / (2 s2) ]
/// `var` may be a default-constructed Var, meaning zero.
Var gaussian_ell(const Var& mean, const Var& var, const Vector<double>& y, const Var& noise_variance,
                 double scale = 1.0);

}  // namespace dgp::ad
