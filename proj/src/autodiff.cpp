#include "dgp/autodiff.hpp"

#include <cmath>
#include <numbers>

namespace dgp::ad {

Var Tape::constant(Mat value) {
  nodes_.push_back({std::move(value), Mat(), false, {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::leaf(Mat value) {
  nodes_.push_back({std::move(value), Mat(), true, {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Mat value, std::vector<int> inputs, std::function<void(const Mat&)> rule) {
  bool active = false;
  for (int id : inputs) active = active || nodes_[id].active;
  nodes_.push_back({std::move(value), Mat(), active, active ? std::move(rule) : nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Mat& Tape::adjoint(int id) {
  Node& n = nodes_[id];
  if (n.adjoint.size() == 0) n.adjoint = Mat::Zero(n.value.rows(), n.value.cols());
  return n.adjoint;
}

void Tape::accumulate(int id, const Mat& g) {
  if (!nodes_[id].active) return;
  adjoint(id) += g;
}

void Tape::backward(const Var& root) {
  if (root.rows() != 1 || root.cols() != 1) throw InvalidInput("backward needs a scalar root");
  for (auto& n : nodes_) n.adjoint.resize(0, 0);
  adjoint(root.id()).setOnes();
  for (int id = root.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.rule || n.adjoint.size() == 0) continue;
    // The rule may append nothing but can grow other adjoints; copy the seed first.
    const Mat g = n.adjoint;
    n.rule(g);
  }
}

Mat Tape::gradient(const Var& v) const {
  const Node& n = nodes_[v.id()];
  if (n.adjoint.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.adjoint;
}

namespace {

Tape& tape_of(const Var& a) {
  if (!a.tape()) throw InvalidInput("autodiff variable is not attached to a tape");
  return *a.tape();
}

void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InvalidInput(std::string("autodiff ") + op + ": shape mismatch");
}

template <typename F>
Var unary(const Var& a, Mat value, F rule) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.record(std::move(value), {ia}, [&t, ia, rule](const Mat& g) { t.accumulate(ia, rule(g)); });
}

}  // namespace

Var operator+(const Var& a, const Var& b) {
  same_shape(a, b, "add");
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() + b.value(), {ia, ib}, [&t, ia, ib](const Mat& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var operator-(const Var& a, const Var& b) {
  same_shape(a, b, "sub");
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() - b.value(), {ia, ib}, [&t, ia, ib](const Mat& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

Var operator-(const Var& a) {
  return unary(a, -a.value(), [](const Mat& g) { return Mat(-g); });
}

Var operator*(double c, const Var& a) {
  return unary(a, c * a.value(), [c](const Mat& g) { return Mat(c * g); });
}

Var add_constant(const Var& a, const Mat& c) {
  return unary(a, a.value() + c, [](const Mat& g) { return g; });
}

Var add_constant(const Var& a, double c) {
  return unary(a, (a.value().array() + c).matrix(), [](const Mat& g) { return g; });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw InvalidInput("autodiff matmul: shape mismatch");
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() * b.value(), {ia, ib}, [&t, ia, ib](const Mat& g) {
    if (t.active(ia)) t.adjoint(ia).noalias() += g * t.value(ib).transpose();
    if (t.active(ib)) t.adjoint(ib).noalias() += t.value(ia).transpose() * g;
  });
}

Var matmul_const(const Var& a, const Mat& b) {
  if (a.cols() != b.rows()) throw InvalidInput("autodiff matmul: shape mismatch");
  return unary(a, a.value() * b, [b](const Mat& g) { return Mat(g * b.transpose()); });
}

Var transpose(const Var& a) {
  return unary(a, a.value().transpose(), [](const Mat& g) { return Mat(g.transpose()); });
}

Var scale_by(const Var& s, const Var& a) {
  if (s.rows() != 1 || s.cols() != 1) throw InvalidInput("autodiff scale_by: scale is not scalar");
  Tape& t = tape_of(a);
  const int is = s.id(), ia = a.id();
  return t.record(s.scalar() * a.value(), {is, ia}, [&t, is, ia](const Mat& g) {
    if (t.active(ia)) t.adjoint(ia) += t.value(is)(0, 0) * g;
    if (t.active(is)) t.adjoint(is)(0, 0) += (g.array() * t.value(ia).array()).sum();
  });
}

Var cwise_mul(const Var& a, const Var& b) {
  same_shape(a, b, "cwise_mul");
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  return t.record(a.value().cwiseProduct(b.value()), {ia, ib}, [&t, ia, ib](const Mat& g) {
    if (t.active(ia)) t.adjoint(ia) += g.cwiseProduct(t.value(ib));
    if (t.active(ib)) t.adjoint(ib) += g.cwiseProduct(t.value(ia));
  });
}

Var cwise_mul_const(const Var& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InvalidInput("autodiff cwise_mul: shape mismatch");
  return unary(a, a.value().cwiseProduct(b), [b](const Mat& g) { return Mat(g.cwiseProduct(b)); });
}

Var cwise_inverse(const Var& a) {
  Mat y = a.value().cwiseInverse();
  return unary(a, y, [y](const Mat& g) { return Mat(-(g.array() * y.array().square()).matrix()); });
}

Var square(const Var& a) {
  const Mat x = a.value();
  return unary(a, x.cwiseAbs2(), [x](const Mat& g) { return Mat(2.0 * g.cwiseProduct(x)); });
}

Var sqrt_clamped(const Var& a) {
  Mat y = a.value().cwiseMax(0.0).cwiseSqrt();
  return unary(a, y, [y](const Mat& g) {
    return Mat((y.array() > 0).select(g.array() / (2.0 * y.array()), 0.0).matrix());
  });
}

Var exp(const Var& a) {
  Mat y = a.value().array().exp().matrix();
  return unary(a, y, [y](const Mat& g) { return Mat(g.cwiseProduct(y)); });
}

Var log(const Var& a) {
  const Mat x = a.value();
  return unary(a, x.array().log().matrix(), [x](const Mat& g) { return Mat(g.cwiseQuotient(x)); });
}

Var softplus(const Var& a) {
  const Mat x = a.value();
  // log(1 + e^x) computed without overflow
  Mat y = (x.array().max(0.0) + (-x.array().abs()).exp().log1p()).matrix();
  return unary(a, y, [x](const Mat& g) {
    return Mat((g.array() / (1.0 + (-x.array()).exp())).matrix());
  });
}

Var clamp_min(const Var& a, double floor) {
  const Mat x = a.value();
  return unary(a, x.cwiseMax(floor), [x, floor](const Mat& g) {
    return Mat((x.array() > floor).select(g.array(), 0.0).matrix());
  });
}

Var add_colwise(const Var& a, const Var& v) {
  if (v.cols() != 1 || v.rows() != a.rows()) throw InvalidInput("autodiff add_colwise: shape mismatch");
  Tape& t = tape_of(a);
  const int ia = a.id(), iv = v.id();
  Mat value = a.value().colwise() + v.value().col(0);
  return t.record(std::move(value), {ia, iv}, [&t, ia, iv](const Mat& g) {
    t.accumulate(ia, g);
    if (t.active(iv)) t.adjoint(iv) += g.rowwise().sum();
  });
}

Var colsum_prod(const Var& a, const Var& b) {
  same_shape(a, b, "colsum_prod");
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  Mat value = a.value().cwiseProduct(b.value()).colwise().sum().transpose();
  return t.record(std::move(value), {ia, ib}, [&t, ia, ib](const Mat& g) {
    const auto row = g.col(0).transpose();
    if (t.active(ia)) t.adjoint(ia) += (t.value(ib).array().rowwise() * row.array()).matrix();
    if (t.active(ib)) t.adjoint(ib) += (t.value(ia).array().rowwise() * row.array()).matrix();
  });
}

Var colsqnorm(const Var& a) {
  const Mat x = a.value();
  return unary(a, x.colwise().squaredNorm().transpose(), [x](const Mat& g) {
    return Mat((2.0 * x.array()).rowwise() * g.col(0).transpose().array());
  });
}

Var sum(const Var& a) {
  const Index r = a.rows(), c = a.cols();
  return unary(a, Mat::Constant(1, 1, a.value().sum()),
               [r, c](const Mat& g) { return Mat(Mat::Constant(r, c, g(0, 0))); });
}

Var sqnorm(const Var& a) {
  const Mat x = a.value();
  return unary(a, Mat::Constant(1, 1, x.squaredNorm()), [x](const Mat& g) { return Mat(2.0 * g(0, 0) * x); });
}

Var broadcast(const Var& s, Index rows, Index cols) {
  if (s.rows() != 1 || s.cols() != 1) throw InvalidInput("autodiff broadcast: input is not scalar");
  return unary(s, Mat::Constant(rows, cols, s.scalar()),
               [](const Mat& g) { return Mat(Mat::Constant(1, 1, g.sum())); });
}

Var scale_cols(const Var& a, const Var& v) {
  if (v.cols() != 1 || v.rows() != a.cols()) throw InvalidInput("autodiff scale_cols: shape mismatch");
  Tape& t = tape_of(a);
  const int ia = a.id(), iv = v.id();
  Mat value = a.value() * v.value().col(0).asDiagonal();
  return t.record(std::move(value), {ia, iv}, [&t, ia, iv](const Mat& g) {
    if (t.active(ia)) t.adjoint(ia) += g * t.value(iv).col(0).asDiagonal();
    if (t.active(iv)) t.adjoint(iv) += g.cwiseProduct(t.value(ia)).colwise().sum().transpose();
  });
}

Var replicate_rows(const Var& v, Index k) {
  if (v.cols() != 1) throw InvalidInput("autodiff replicate_rows: input is not a column");
  const Index n = v.rows();
  return unary(v, v.value().replicate(k, 1), [n, k](const Mat& g) {
    return Mat(g.reshaped(n, k).rowwise().sum());
  });
}

Var repeat_cols(const Var& a, Index k) {
  const Index r = a.rows(), c = a.cols();
  Mat value(r, c * k);
  for (Index j = 0; j < c; ++j) value.middleCols(j * k, k) = a.value().col(j).replicate(1, k);
  return unary(a, std::move(value), [r, c, k](const Mat& g) {
    Mat out(r, c);
    for (Index j = 0; j < c; ++j) out.col(j) = g.middleCols(j * k, k).rowwise().sum();
    return out;
  });
}

Var segment(const Var& v, Index offset, Index size) {
  if (v.cols() != 1 || offset < 0 || offset + size > v.rows())
    throw InvalidInput("autodiff segment: out of range");
  const Index n = v.rows();
  return unary(v, v.value().middleRows(offset, size), [n, offset, size](const Mat& g) {
    Mat out = Mat::Zero(n, 1);
    out.middleRows(offset, size) = g;
    return out;
  });
}

Var reshape(const Var& v, Index rows, Index cols) {
  if (v.rows() * v.cols() != rows * cols) throw InvalidInput("autodiff reshape: size mismatch");
  const Index r = v.rows(), c = v.cols();
  return unary(v, v.value().reshaped(rows, cols), [r, c](const Mat& g) { return Mat(g.reshaped(r, c)); });
}

Var hconcat(const Var& a, const Var& b) {
  if (a.rows() != b.rows()) throw InvalidInput("autodiff hconcat: row mismatch");
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  const Index ca = a.cols();
  Mat value(a.rows(), a.cols() + b.cols());
  value << a.value(), b.value();
  return t.record(std::move(value), {ia, ib}, [&t, ia, ib, ca](const Mat& g) {
    t.accumulate(ia, g.leftCols(ca));
    t.accumulate(ib, g.rightCols(g.cols() - ca));
  });
}

Var tri_assemble(const Var& diag, const Var& lower) {
  const Index n = diag.rows();
  if (diag.cols() != 1 || lower.cols() != 1 || lower.rows() != n * (n - 1) / 2)
    throw InvalidInput("autodiff tri_assemble: shape mismatch");
  Tape& t = tape_of(diag);
  const int id = diag.id(), il = lower.id();
  Mat value = Mat::Zero(n, n);
  value.diagonal() = diag.value().col(0);
  Index k = 0;
  for (Index j = 0; j < n; ++j)
    for (Index i = j + 1; i < n; ++i) value(i, j) = lower.value()(k++, 0);
  return t.record(std::move(value), {id, il}, [&t, id, il, n](const Mat& g) {
    if (t.active(id)) t.adjoint(id) += g.diagonal();
    if (t.active(il)) {
      Mat& a = t.adjoint(il);
      Index k = 0;
      for (Index j = 0; j < n; ++j)
        for (Index i = j + 1; i < n; ++i) a(k++, 0) += g(i, j);
    }
  });
}

Var kernel_matrix(KernelFamily family, const Var& x, const Var& y, const Var& variance,
                  const Var& lengthscale, const Var& period) {
  if (x.cols() != 1 || y.cols() != 1) throw InvalidInput("autodiff kernel: inputs must be columns");
  const bool periodic = family == KernelFamily::Periodic;
  KernelSpec<double> spec{family, variance.scalar(), lengthscale.scalar(), periodic ? period.scalar() : 1.0};
  spec.validate();
  // Same-input calls use the symmetric evaluator so values match the plain estimators bit for bit.
  Mat k = x.id() == y.id() ? eval_kernel_matrix(spec, x.value()) : eval_kernel_matrix(spec, x.value(), y.value());
  Tape& t = tape_of(x);
  const int ix = x.id(), iy = y.id(), iv = variance.id(), il = lengthscale.id();
  std::vector<int> inputs{ix, iy, iv, il};
  if (periodic) inputs.push_back(period.id());
  const int ip = periodic ? period.id() : -1;
  return t.record(k, inputs, [&t, ix, iy, iv, il, ip, spec, k](const Mat& g) {
    const Index nx = k.rows(), ny = k.cols();
    const auto xv = t.value(ix).col(0).array();
    const auto yv = t.value(iy).col(0).array();
    const Eigen::ArrayXXd d = xv.replicate(1, ny) - yv.transpose().replicate(nx, 1);
    const Eigen::ArrayXXd gk = g.array() * k.array();
    const double ls = spec.lengthscale;
    Eigen::ArrayXXd dd;  // d k / d(x_i - y_j) divided by k
    Eigen::ArrayXXd dl;  // d k / d lengthscale divided by k
    Eigen::ArrayXXd dp;  // d k / d period divided by k
    if (spec.family == KernelFamily::SquaredExponential) {
      dd = -d / (ls * ls);
      dl = d.square() / (ls * ls * ls);
    } else {
      const double w = std::numbers::pi / spec.period;
      const Eigen::ArrayXXd s = (w * d).sin();
      const Eigen::ArrayXXd c = (w * d).cos();
      dd = -4.0 * w * s * c / (ls * ls);
      dl = 4.0 * s.square() / (ls * ls * ls);
      dp = 4.0 * s * c * w * d / (spec.period * ls * ls);
    }
    const Eigen::ArrayXXd gd = gk * dd;
    if (t.active(ix)) t.adjoint(ix) += gd.rowwise().sum().matrix();
    if (t.active(iy)) t.adjoint(iy) -= gd.colwise().sum().transpose().matrix();
    if (t.active(iv)) t.adjoint(iv)(0, 0) += gk.sum() / spec.variance;
    if (t.active(il)) t.adjoint(il)(0, 0) += (gk * dl).sum();
    if (ip >= 0 && t.active(ip)) t.adjoint(ip)(0, 0) += (gk * dp).sum();
  });
}

Var cholesky(const Var& a, const JitterSchedule& schedule) {
  auto f = chol_psd(a.value(), schedule);
  Tape& t = tape_of(a);
  const int ia = a.id();
  Mat l = std::move(f.lower);
  // The jitter is rel * trace(A) / n, so it moves with A as well.
  const double trace_scale = a.value().trace() / static_cast<double>(a.rows());
  const double jitter_slope = trace_scale > 0 ? f.jitter / trace_scale / static_cast<double>(a.rows()) : 0.0;
  return t.record(l, {ia}, [&t, ia, l, jitter_slope](const Mat& g) {
    // dA-adjoint: L^{-T} sym(Phi(L^T G)) L^{-1}, Phi = lower triangle with halved diagonal.
    Mat p = l.transpose() * g.triangularView<Eigen::Lower>();
    p = p.triangularView<Eigen::Lower>();
    p.diagonal() *= 0.5;
    Mat q = 0.5 * (p + p.transpose());
    const auto lt = l.transpose().triangularView<Eigen::Upper>();
    lt.solveInPlace(q);  // L^{-T} Q
    Mat s = lt.solve(Mat(q.transpose())).transpose();
    s.diagonal().array() += jitter_slope * s.trace();
    t.accumulate(ia, s);
  });
}

Var solve_lower(const Var& l, const Var& b) {
  if (l.rows() != b.rows()) throw InvalidInput("autodiff solve_lower: shape mismatch");
  Tape& t = tape_of(l);
  const int il = l.id(), ib = b.id();
  Mat x = l.value().triangularView<Eigen::Lower>().solve(b.value());
  return t.record(x, {il, ib}, [&t, il, ib, x](const Mat& g) {
    const Mat gb = t.value(il).transpose().triangularView<Eigen::Upper>().solve(g);
    t.accumulate(ib, gb);
    if (t.active(il)) t.adjoint(il) -= Mat((gb * x.transpose()).triangularView<Eigen::Lower>());
  });
}

Var solve_lower_t(const Var& l, const Var& b) {
  if (l.rows() != b.rows()) throw InvalidInput("autodiff solve_lower_t: shape mismatch");
  Tape& t = tape_of(l);
  const int il = l.id(), ib = b.id();
  Mat x = l.value().transpose().triangularView<Eigen::Upper>().solve(b.value());
  return t.record(x, {il, ib}, [&t, il, ib, x](const Mat& g) {
    const Mat gb = t.value(il).triangularView<Eigen::Lower>().solve(g);
    t.accumulate(ib, gb);
    if (t.active(il)) t.adjoint(il) -= Mat((x * gb.transpose()).triangularView<Eigen::Lower>());
  });
}

Var log_diag_sum(const Var& l) {
  const Mat d = l.value().diagonal();
  const Index n = l.rows();
  return unary(l, Mat::Constant(1, 1, d.array().abs().log().sum()), [d, n](const Mat& g) {
    Mat out = Mat::Zero(n, n);
    out.diagonal() = g(0, 0) * d.cwiseInverse();
    return out;
  });
}

Var gaussian_ell(const Var& mean, const Var& var, const Vector<double>& y, const Var& noise_variance,
                 double scale) {
  if (mean.cols() != 1 || mean.rows() != y.size()) throw InvalidInput("autodiff gaussian_ell: shape mismatch");
  const bool has_var = var.tape() != nullptr;
  if (has_var && (var.cols() != 1 || var.rows() != y.size()))
    throw InvalidInput("autodiff gaussian_ell: variance shape mismatch");
  const double s2 = noise_variance.scalar();
  const Eigen::ArrayXd r = y.array() - mean.value().col(0).array();
  Eigen::ArrayXd q = r.square();
  if (has_var) q += var.value().col(0).array();
  const double n = static_cast<double>(y.size());
  const double value =
      scale * (-0.5 * n * std::log(2.0 * std::numbers::pi * s2) - q.sum() / (2.0 * s2));
  Tape& t = tape_of(mean);
  const int im = mean.id(), iv = has_var ? var.id() : -1, is = noise_variance.id();
  std::vector<int> inputs{im, is};
  if (has_var) inputs.push_back(iv);
  return t.record(Mat::Constant(1, 1, value), inputs, [&t, im, iv, is, r, q, s2, n, scale](const Mat& g) {
    const double c = g(0, 0) * scale;
    if (t.active(im)) t.adjoint(im) += (c / s2 * r).matrix();
    if (iv >= 0 && t.active(iv)) t.adjoint(iv).array() -= c / (2.0 * s2);
    if (t.active(is)) t.adjoint(is)(0, 0) += c * (-0.5 * n / s2 + q.sum() / (2.0 * s2 * s2));
  });
}

}  // namespace dgp::ad
