#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "slidenet/neural/tensor.hpp"

namespace slidenet::nn {

namespace detail {

inline void same_tape(Var a, Var b, const char* op) {
  if (a.tape != b.tape || a.tape == nullptr) throw UsageError(std::string(op) + ": operands live on different tapes");
}

inline void shape_error(const char* op, const Mat& a, const Mat& b) {
  throw UsageError(std::string(op) + ": shape mismatch " + dims(a) + " vs " + dims(b));
}

} // namespace detail

inline Var matmul(Var a, Var b) {
  detail::same_tape(a, b, "matmul");
  Tape& t = *a.tape;
  const Mat& A = a.value();
  const Mat& B = b.value();
  if (A.cols() != B.rows()) detail::shape_error("matmul", A, B);
  Mat out(A.rows(), B.cols());
  out.noalias() = A * B;
  return t.push(std::move(out), [a = a.id, b = b.id](Tape& t, std::size_t self) {
    const Mat& g = t.grad(self);
    if (t.needs_grad(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.needs_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
  }, t.needs_grad(a) || t.needs_grad(b));
}

/// x W + b, with `b` a row broadcast over the rows of x.
inline Var linear(Var x, Var w, Var b) {
  detail::same_tape(x, w, "linear");
  detail::same_tape(x, b, "linear");
  Tape& t = *x.tape;
  const Mat& X = x.value();
  const Mat& W = w.value();
  const Mat& B = b.value();
  if (X.cols() != W.rows()) detail::shape_error("linear", X, W);
  if (B.rows() != 1 || B.cols() != W.cols()) detail::shape_error("linear bias", B, W);
  Mat out(X.rows(), W.cols());
  out.noalias() = X * W;
  out.rowwise() += B.row(0);
  return t.push(std::move(out), [x = x.id, w = w.id, b = b.id](Tape& t, std::size_t self) {
    const Mat& g = t.grad(self);
    if (t.needs_grad(x)) t.accumulate(x, g * t.value(w).transpose());
    if (t.needs_grad(w)) t.accumulate(w, t.value(x).transpose() * g);
    if (t.needs_grad(b)) t.accumulate(b, g.colwise().sum());
  }, t.needs_grad(x) || t.needs_grad(w) || t.needs_grad(b));
}

inline Var add(Var a, Var b) {
  detail::same_tape(a, b, "add");
  Tape& t = *a.tape;
  if (a.rows() != b.rows() || a.cols() != b.cols()) detail::shape_error("add", a.value(), b.value());
  return t.push(a.value() + b.value(), [a = a.id, b = b.id](Tape& t, std::size_t self) {
    t.accumulate(a, t.grad(self));
    t.accumulate(b, t.grad(self));
  }, t.needs_grad(a) || t.needs_grad(b));
}

inline Var hadamard(Var a, Var b) {
  detail::same_tape(a, b, "hadamard");
  Tape& t = *a.tape;
  if (a.rows() != b.rows() || a.cols() != b.cols()) detail::shape_error("hadamard", a.value(), b.value());
  return t.push(a.value().cwiseProduct(b.value()), [a = a.id, b = b.id](Tape& t, std::size_t self) {
    const Mat& g = t.grad(self);
    if (t.needs_grad(a)) t.accumulate(a, g.cwiseProduct(t.value(b)));
    if (t.needs_grad(b)) t.accumulate(b, g.cwiseProduct(t.value(a)));
  }, t.needs_grad(a) || t.needs_grad(b));
}

inline Var scale(Var x, double s) {
  Tape& t = *x.tape;
  return t.push(s * x.value(), [x = x.id, s](Tape& t, std::size_t self) { t.accumulate(x, s * t.grad(self)); },
                t.needs_grad(x));
}

/// Multiplies column j of x by s[j].
inline Var scale_cols(Var x, const Mat& s) {
  Tape& t = *x.tape;
  if (s.rows() != 1 || s.cols() != x.cols()) detail::shape_error("scale_cols", x.value(), s);
  Mat out = x.value();
  for (Index r = 0; r < out.rows(); ++r) out.row(r).array() *= s.row(0).array();
  return t.push(std::move(out), [x = x.id, s](Tape& t, std::size_t self) {
    Mat g = t.grad(self);
    for (Index r = 0; r < g.rows(); ++r) g.row(r).array() *= s.row(0).array();
    t.accumulate(x, g);
  }, t.needs_grad(x));
}

inline Var relu(Var x) {
  Tape& t = *x.tape;
  return t.push(x.value().cwiseMax(0.0), [x = x.id](Tape& t, std::size_t self) {
    t.accumulate(x, (t.value(x).array() > 0.0).select(t.grad(self), 0.0));
  }, t.needs_grad(x));
}

inline Var concat_cols(Var a, Var b) {
  detail::same_tape(a, b, "concat_cols");
  Tape& t = *a.tape;
  if (a.rows() != b.rows()) detail::shape_error("concat_cols", a.value(), b.value());
  Mat out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const Index ca = a.cols(), cb = b.cols();
  return t.push(std::move(out), [a = a.id, b = b.id, ca, cb](Tape& t, std::size_t self) {
    const Mat& g = t.grad(self);
    if (t.needs_grad(a)) t.accumulate(a, g.leftCols(ca));
    if (t.needs_grad(b)) t.accumulate(b, g.rightCols(cb));
  }, t.needs_grad(a) || t.needs_grad(b));
}

inline Var slice_cols(Var x, Index start, Index count) {
  Tape& t = *x.tape;
  if (start < 0 || count < 0 || start + count > x.cols()) {
    throw UsageError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for " + dims(x.value()));
  }
  const Index rows = x.rows(), cols = x.cols();
  return t.push(x.value().middleCols(start, count), [x = x.id, start, count, rows, cols](Tape& t, std::size_t self) {
    if (!t.needs_grad(x)) return;
    Mat g = Mat::Zero(rows, cols);
    g.middleCols(start, count) = t.grad(self);
    t.accumulate(x, g);
  }, t.needs_grad(x));
}

/// Row-major reshape; (B*N) x C becomes B x (N*C) for rows = B.
inline Var reshape_rows(Var x, Index rows) {
  Tape& t = *x.tape;
  const Index in_rows = x.rows(), in_cols = x.cols();
  if (rows <= 0 || x.value().size() % rows != 0) {
    throw UsageError("reshape_rows: cannot reshape " + dims(x.value()) + " to " + std::to_string(rows) + " rows");
  }
  const Index cols = x.value().size() / rows;
  Mat out = Eigen::Map<const Mat>(x.value().data(), rows, cols);
  return t.push(std::move(out), [x = x.id, in_rows, in_cols](Tape& t, std::size_t self) {
    const Mat& g = t.grad(self);
    t.accumulate(x, Eigen::Map<const Mat>(g.data(), in_rows, in_cols));
  }, t.needs_grad(x));
}

/// Column-wise max over consecutive groups of `group` rows: (B*group) x C -> B x C.
/// Ties resolve to the first row so gradients are deterministic.
inline Var set_maxpool(Var x, Index group) {
  Tape& t = *x.tape;
  const Mat& X = x.value();
  if (group <= 0 || X.rows() % group != 0) {
    throw UsageError("set_maxpool: " + std::to_string(X.rows()) + " rows are not a multiple of group size " +
                     std::to_string(group));
  }
  const Index batch = X.rows() / group, C = X.cols();
  Mat out(batch, C);
  auto argmax = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(batch * C));
  for (Index b = 0; b < batch; ++b) {
    out.row(b) = X.row(b * group);
    for (Index c = 0; c < C; ++c) (*argmax)[static_cast<std::size_t>(b * C + c)] = b * group;
    for (Index r = b * group + 1; r < (b + 1) * group; ++r) {
      const auto row = X.row(r);
      for (Index c = 0; c < C; ++c) {
        if (row(c) > out(b, c)) {
          out(b, c) = row(c);
          (*argmax)[static_cast<std::size_t>(b * C + c)] = r;
        }
      }
    }
  }
  const Index rows = X.rows();
  return t.push(std::move(out), [x = x.id, argmax, rows, C, batch](Tape& t, std::size_t self) {
    if (!t.needs_grad(x)) return;
    const Mat& g = t.grad(self);
    Mat gx = Mat::Zero(rows, C);
    for (Index b = 0; b < batch; ++b)
      for (Index c = 0; c < C; ++c) gx((*argmax)[static_cast<std::size_t>(b * C + c)], c) += g(b, c);
    t.accumulate(x, gx);
  }, t.needs_grad(x));
}

inline Var sum_all(Var x) {
  Tape& t = *x.tape;
  Mat out(1, 1);
  out(0, 0) = x.value().sum();
  const Index r = x.rows(), c = x.cols();
  return t.push(std::move(out), [x = x.id, r, c](Tape& t, std::size_t self) {
    t.accumulate(x, Mat::Constant(r, c, t.grad(self)(0, 0)));
  }, t.needs_grad(x));
}

inline Var mean_all(Var x) {
  if (x.value().size() == 0) throw UsageError("mean_all: empty tensor");
  return scale(sum_all(x), 1.0 / static_cast<double>(x.value().size()));
}

/// Running statistics of a batch-norm layer.
struct BatchNormStats {
  Mat* mean = nullptr;
  Mat* var = nullptr;
  double momentum = 0.9;
  double eps = 1e-5;
};

/// Normalises each column. Training mode uses batch statistics (biased
/// variance) and folds them into the running averages; evaluation mode uses
/// the running averages, making each row independent of the rest of the batch.
inline Var batchnorm(Var x, Var gamma, Var beta, const BatchNormStats& st, bool train) {
  detail::same_tape(x, gamma, "batchnorm");
  detail::same_tape(x, beta, "batchnorm");
  Tape& t = *x.tape;
  const Mat& X = x.value();
  const Index n = X.rows(), C = X.cols();
  if (gamma.cols() != C || beta.cols() != C || gamma.rows() != 1 || beta.rows() != 1) {
    detail::shape_error("batchnorm", X, gamma.value());
  }
  if (!st.mean || !st.var || st.mean->cols() != C || st.var->cols() != C) {
    throw UsageError("batchnorm: running statistics do not match " + std::to_string(C) + " channels");
  }
  if (train && n < 2) throw UsageError("batchnorm: training mode needs at least 2 rows");

  Eigen::RowVectorXd mean, var;
  if (train) {
    mean = X.colwise().mean();
    var = (X.rowwise() - mean).array().square().colwise().mean();
    *st.mean = st.momentum * *st.mean + (1.0 - st.momentum) * mean;
    *st.var = st.momentum * *st.var + (1.0 - st.momentum) * var;
  } else {
    mean = st.mean->row(0);
    var = st.var->row(0);
  }
  const Eigen::RowVectorXd inv_std = (var.array() + st.eps).rsqrt();
  auto xhat = std::make_shared<Mat>(n, C);
  for (Index r = 0; r < n; ++r) xhat->row(r) = (X.row(r) - mean).cwiseProduct(inv_std);
  Mat out(n, C);
  for (Index r = 0; r < n; ++r) out.row(r) = xhat->row(r).cwiseProduct(gamma.value().row(0)) + beta.value().row(0);

  return t.push(std::move(out), [x = x.id, g = gamma.id, b = beta.id, xhat, inv_std, train](Tape& t, std::size_t self) {
    const Mat& dy = t.grad(self);
    const Index n = dy.rows();
    if (t.needs_grad(g)) t.accumulate(g, dy.cwiseProduct(*xhat).colwise().sum());
    if (t.needs_grad(b)) t.accumulate(b, dy.colwise().sum());
    if (!t.needs_grad(x)) return;
    const Eigen::RowVectorXd gam = t.value(g).row(0);
    Mat dxhat = dy;
    for (Index r = 0; r < n; ++r) dxhat.row(r).array() *= gam.array();
    Mat dx(n, dy.cols());
    if (train) {
      const Eigen::RowVectorXd sum_d = dxhat.colwise().sum();
      const Eigen::RowVectorXd sum_dx = dxhat.cwiseProduct(*xhat).colwise().sum();
      const double inv_n = 1.0 / static_cast<double>(n);
      for (Index r = 0; r < n; ++r) {
        dx.row(r) = (dxhat.row(r) - inv_n * sum_d - inv_n * xhat->row(r).cwiseProduct(sum_dx)).cwiseProduct(inv_std);
      }
    } else {
      for (Index r = 0; r < n; ++r) dx.row(r) = dxhat.row(r).cwiseProduct(inv_std);
    }
    t.accumulate(x, dx);
  }, t.needs_grad(x) || t.needs_grad(gamma) || t.needs_grad(beta));
}

/// Per-row relative error ||p - y|| / ||y|| (n x 1); rows whose target norm is
/// below `floor` use the absolute error ||p - y|| instead.
inline Var relative_error_rows(Var pred, const Mat& target, double floor) {
  Tape& t = *pred.tape;
  const Mat& P = pred.value();
  if (P.rows() != target.rows() || P.cols() != target.cols()) detail::shape_error("relative_error_rows", P, target);
  const Index n = P.rows();
  auto diff = std::make_shared<Mat>(P - target);
  Eigen::VectorXd denom(n);
  Mat out(n, 1);
  for (Index r = 0; r < n; ++r) {
    const double yn = target.row(r).norm();
    denom(r) = yn < floor ? 1.0 : yn;
    out(r, 0) = diff->row(r).norm() / denom(r);
  }
  if (!out.allFinite()) throw NumericError("relative_error_rows: non-finite prediction");
  return t.push(out, [p = pred.id, diff, denom, out](Tape& t, std::size_t self) {
    const Mat& g = t.grad(self);
    Mat gp = Mat::Zero(diff->rows(), diff->cols());
    for (Index r = 0; r < gp.rows(); ++r) {
      const double e = out(r, 0) * denom(r);
      if (e > 0.0) gp.row(r) = (g(r, 0) / (denom(r) * e)) * diff->row(r);
    }
    t.accumulate(p, gp);
  }, t.needs_grad(pred));
}

/// Per-element symmetric relative error |p - y| / (|p| + |y|) for an n x 1
/// column; zero where both magnitudes are below `floor`.
inline Var symmetric_error_rows(Var pred, const Mat& target, double floor) {
  Tape& t = *pred.tape;
  const Mat& P = pred.value();
  if (P.cols() != 1 || target.cols() != 1 || P.rows() != target.rows()) {
    detail::shape_error("symmetric_error_rows", P, target);
  }
  if (!P.allFinite()) throw NumericError("symmetric_error_rows: non-finite prediction");
  const Index n = P.rows();
  Mat out(n, 1), dp(n, 1);
  for (Index r = 0; r < n; ++r) {
    const double p = P(r, 0), y = target(r, 0);
    const double d = std::abs(p) + std::abs(y);
    if (std::abs(p) < floor && std::abs(y) < floor) {
      out(r, 0) = 0.0;
      dp(r, 0) = 0.0;
      continue;
    }
    const double e = p - y;
    const double sgn_e = (e > 0) - (e < 0), sgn_p = (p > 0) - (p < 0);
    out(r, 0) = std::abs(e) / d;
    dp(r, 0) = sgn_e / d - std::abs(e) * sgn_p / (d * d);
  }
  return t.push(std::move(out), [p = pred.id, dp](Tape& t, std::size_t self) {
    t.accumulate(p, t.grad(self).cwiseProduct(dp));
  }, t.needs_grad(pred));
}

} // namespace slidenet::nn
