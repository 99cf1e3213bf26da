#include "cdnet/ops.hpp"

#include <cmath>
#include <numbers>

namespace cdnet::ops {
namespace {

void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw ShapeError(std::string(op) + ": " + detail);
}

void same_shape(const Tape& t, Var a, Var b, const char* op) {
  const Mat& x = t.value(a);
  const Mat& y = t.value(b);
  require(x.rows() == y.rows() && x.cols() == y.cols(), op, shape_str(x) + " vs " + shape_str(y));
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_slope(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_value(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

Mat softmax_of(const Mat& x) {
  Mat y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - m).exp();
    y.row(i) /= y.row(i).sum();
  }
  return y;
}

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
  const Mat& x = t.value(a);
  const Mat& y = t.value(b);
  require(x.cols() == y.rows(), "matmul", shape_str(x) + " * " + shape_str(y));
  return t.push(x * y, {a, b}, [a, b](Tape& tp, int self) {
    const Mat& g = tp.upstream(self);
    if (tp.needs_grad(a)) tp.accumulate(a, g * tp.value(b).transpose());
    if (tp.needs_grad(b)) tp.accumulate(b, tp.value(a).transpose() * g);
  });
}

Var matmul_nt(Tape& t, Var a, Var b) {
  const Mat& x = t.value(a);
  const Mat& y = t.value(b);
  require(x.cols() == y.cols(), "matmul_nt", shape_str(x) + " * " + shape_str(y) + "^T");
  return t.push(x * y.transpose(), {a, b}, [a, b](Tape& tp, int self) {
    const Mat& g = tp.upstream(self);
    if (tp.needs_grad(a)) tp.accumulate(a, g * tp.value(b));
    if (tp.needs_grad(b)) tp.accumulate(b, g.transpose() * tp.value(a));
  });
}

Var transpose(Tape& t, Var a) {
  return t.push(t.value(a).transpose(), {a},
                [a](Tape& tp, int self) { tp.accumulate(a, tp.upstream(self).transpose()); });
}

Var add(Tape& t, Var a, Var b) {
  same_shape(t, a, b, "add");
  return t.push(t.value(a) + t.value(b), {a, b}, [a, b](Tape& tp, int self) {
    tp.accumulate(a, tp.upstream(self));
    tp.accumulate(b, tp.upstream(self));
  });
}

Var sub(Tape& t, Var a, Var b) {
  same_shape(t, a, b, "sub");
  return t.push(t.value(a) - t.value(b), {a, b}, [a, b](Tape& tp, int self) {
    tp.accumulate(a, tp.upstream(self));
    tp.accumulate(b, -tp.upstream(self));
  });
}

Var mul(Tape& t, Var a, Var b) {
  same_shape(t, a, b, "mul");
  return t.push(t.value(a).cwiseProduct(t.value(b)), {a, b}, [a, b](Tape& tp, int self) {
    const Mat& g = tp.upstream(self);
    if (tp.needs_grad(a)) tp.accumulate(a, g.cwiseProduct(tp.value(b)));
    if (tp.needs_grad(b)) tp.accumulate(b, g.cwiseProduct(tp.value(a)));
  });
}

Var scale(Tape& t, Var a, double s) {
  return t.push(t.value(a) * s, {a}, [a, s](Tape& tp, int self) { tp.accumulate(a, tp.upstream(self) * s); });
}

Var add_scalar(Tape& t, Var a, double s) {
  Mat y = t.value(a).array() + s;
  return t.push(std::move(y), {a}, [a](Tape& tp, int self) { tp.accumulate(a, tp.upstream(self)); });
}

Var add_row(Tape& t, Var a, Var row) {
  const Mat& x = t.value(a);
  const Mat& r = t.value(row);
  require(r.rows() == 1 && r.cols() == x.cols(), "add_row", shape_str(x) + " + " + shape_str(r));
  Mat y = x.rowwise() + r.row(0);
  return t.push(std::move(y), {a, row}, [a, row](Tape& tp, int self) {
    const Mat& g = tp.upstream(self);
    tp.accumulate(a, g);
    if (tp.needs_grad(row)) tp.accumulate(row, g.colwise().sum());
  });
}

Var mul_row(Tape& t, Var a, Var row) {
  const Mat& x = t.value(a);
  const Mat& r = t.value(row);
  require(r.rows() == 1 && r.cols() == x.cols(), "mul_row", shape_str(x) + " * " + shape_str(r));
  Mat y = x.array().rowwise() * r.row(0).array();
  return t.push(std::move(y), {a, row}, [a, row](Tape& tp, int self) {
    const Mat& g = tp.upstream(self);
    if (tp.needs_grad(a)) {
      Mat ga = g.array().rowwise() * tp.value(row).row(0).array();
      tp.accumulate(a, ga);
    }
    if (tp.needs_grad(row)) tp.accumulate(row, g.cwiseProduct(tp.value(a)).colwise().sum());
  });
}

Var scale_rows(Tape& t, Var a, Var col) {
  const Mat& x = t.value(a);
  const Mat& c = t.value(col);
  require(c.cols() == 1 && c.rows() == x.rows(), "scale_rows", shape_str(x) + " by " + shape_str(c));
  Mat y = x.array().colwise() * c.col(0).array();
  return t.push(std::move(y), {a, col}, [a, col](Tape& tp, int self) {
    const Mat& g = tp.upstream(self);
    if (tp.needs_grad(a)) {
      Mat ga = g.array().colwise() * tp.value(col).col(0).array();
      tp.accumulate(a, ga);
    }
    if (tp.needs_grad(col)) tp.accumulate(col, g.cwiseProduct(tp.value(a)).rowwise().sum());
  });
}

Var sum(Tape& t, Var a) {
  Mat y(1, 1);
  y(0, 0) = t.value(a).sum();
  return t.push(std::move(y), {a}, [a](Tape& tp, int self) {
    const Mat& x = tp.value(a);
    tp.accumulate(a, Mat::Constant(x.rows(), x.cols(), tp.upstream(self)(0, 0)));
  });
}

Var mean(Tape& t, Var a) {
  const Mat& x = t.value(a);
  require(x.size() > 0, "mean", "empty input");
  return scale(t, sum(t, a), 1.0 / static_cast<double>(x.size()));
}

Var row_sum(Tape& t, Var a) {
  Mat y = t.value(a).rowwise().sum();
  return t.push(std::move(y), {a}, [a](Tape& tp, int self) {
    const Mat& g = tp.upstream(self);
    Mat ga = g.col(0).replicate(1, tp.value(a).cols());
    tp.accumulate(a, ga);
  });
}

Var row_mean(Tape& t, Var a) {
  const Mat& x = t.value(a);
  require(x.cols() > 0, "row_mean", "no columns");
  return scale(t, row_sum(t, a), 1.0 / static_cast<double>(x.cols()));
}

Var col_mean(Tape& t, Var a) {
  const Mat& x = t.value(a);
  require(x.rows() > 0, "col_mean", "no rows");
  const double n = static_cast<double>(x.rows());
  Mat y = x.colwise().sum() / n;
  return t.push(std::move(y), {a}, [a, n](Tape& tp, int self) {
    Mat ga = (tp.upstream(self) / n).replicate(tp.value(a).rows(), 1);
    tp.accumulate(a, ga);
  });
}

Var weighted_sum(Tape& t, Var a, const Mat& w) {
  const Mat& x = t.value(a);
  require(x.rows() == w.rows() && x.cols() == w.cols(), "weighted_sum", shape_str(x) + " vs " + shape_str(w));
  Mat y(1, 1);
  y(0, 0) = x.cwiseProduct(w).sum();
  return t.push(std::move(y), {a}, [a, w](Tape& tp, int self) { tp.accumulate(a, w * tp.upstream(self)(0, 0)); });
}

Var softmax_rows(Tape& t, Var a) {
  return t.push(softmax_of(t.value(a)), {a}, [a](Tape& tp, int self) {
    const Mat& y = tp.value(Var{self});
    const Mat& g = tp.upstream(self);
    Mat dot = g.cwiseProduct(y).rowwise().sum();
    Mat ga = y.array() * (g.array().colwise() - dot.col(0).array());
    tp.accumulate(a, ga);
  });
}

Var log_softmax_rows(Tape& t, Var a) {
  const Mat& x = t.value(a);
  Mat y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    const double lse = m + std::log((x.row(i).array() - m).exp().sum());
    y.row(i) = x.row(i).array() - lse;
  }
  return t.push(std::move(y), {a}, [a](Tape& tp, int self) {
    const Mat& y = tp.value(Var{self});
    const Mat& g = tp.upstream(self);
    Mat gs = g.rowwise().sum();
    Mat ga = g.array() - y.array().exp().colwise() * gs.col(0).array();
    tp.accumulate(a, ga);
  });
}

Var gelu(Tape& t, Var a) {
  Mat y = t.value(a).unaryExpr([](double v) { return gelu_value(v); });
  return t.push(std::move(y), {a}, [a](Tape& tp, int self) {
    Mat d = tp.value(a).unaryExpr([](double v) { return gelu_slope(v); });
    tp.accumulate(a, tp.upstream(self).cwiseProduct(d));
  });
}

Var sigmoid(Tape& t, Var a) {
  Mat y = t.value(a).unaryExpr([](double v) { return sigmoid_value(v); });
  return t.push(std::move(y), {a}, [a](Tape& tp, int self) {
    const Mat& y = tp.value(Var{self});
    Mat d = y.array() * (1.0 - y.array());
    tp.accumulate(a, tp.upstream(self).cwiseProduct(d));
  });
}

Var softplus(Tape& t, Var a) {
  Mat y = t.value(a).unaryExpr([](double v) { return softplus_value(v); });
  return t.push(std::move(y), {a}, [a](Tape& tp, int self) {
    Mat d = tp.value(a).unaryExpr([](double v) { return sigmoid_value(v); });
    tp.accumulate(a, tp.upstream(self).cwiseProduct(d));
  });
}

Var log(Tape& t, Var a) {
  const Mat& x = t.value(a);
  if ((x.array() <= 0.0).any()) throw ValueError("log: non-positive input");
  Mat y = x.array().log();
  return t.push(std::move(y), {a}, [a](Tape& tp, int self) {
    Mat ga = tp.upstream(self).array() / tp.value(a).array();
    tp.accumulate(a, ga);
  });
}

Var clamp(Tape& t, Var a, double lo, double hi) {
  Mat y = t.value(a).cwiseMax(lo).cwiseMin(hi);
  return t.push(std::move(y), {a}, [a, lo, hi](Tape& tp, int self) {
    const Mat& x = tp.value(a);
    Mat ga = tp.upstream(self);
    for (Eigen::Index i = 0; i < ga.size(); ++i) {
      if (x.data()[i] < lo || x.data()[i] > hi) ga.data()[i] = 0.0;
    }
    tp.accumulate(a, ga);
  });
}

Var l2_normalize_rows(Tape& t, Var a) {
  const Mat& x = t.value(a);
  Vec norms = x.rowwise().norm();
  if ((norms.array() <= 0.0).any()) throw ValueError("l2_normalize_rows: zero row");
  Mat y = x.array().colwise() / norms.array();
  return t.push(std::move(y), {a}, [a, norms](Tape& tp, int self) {
    const Mat& y = tp.value(Var{self});
    const Mat& g = tp.upstream(self);
    Vec dot = g.cwiseProduct(y).rowwise().sum();
    Mat ga = (g.array() - y.array().colwise() * dot.array()).colwise() / norms.array();
    tp.accumulate(a, ga);
  });
}

Var layer_norm_rows(Tape& t, Var a, double eps) {
  const Mat& x = t.value(a);
  require(x.cols() > 0, "layer_norm_rows", "no columns");
  Vec mu = x.rowwise().mean();
  Mat centered = x.colwise() - mu;
  Vec inv = ((centered.array().square().rowwise().sum() / static_cast<double>(x.cols())) + eps).rsqrt();
  Mat y = centered.array().colwise() * inv.array();
  return t.push(std::move(y), {a}, [a, inv](Tape& tp, int self) {
    const Mat& y = tp.value(Var{self});
    const Mat& g = tp.upstream(self);
    const double n = static_cast<double>(y.cols());
    Vec gm = g.rowwise().sum() / n;
    Vec gy = g.cwiseProduct(y).rowwise().sum() / n;
    Mat ga = ((g.colwise() - gm).array() - y.array().colwise() * gy.array()).colwise() * inv.array();
    tp.accumulate(a, ga);
  });
}

Var concat_rows(Tape& t, Var a, Var b) {
  const Mat& x = t.value(a);
  const Mat& y = t.value(b);
  require(x.cols() == y.cols(), "concat_rows", shape_str(x) + " ++ " + shape_str(y));
  Mat out(x.rows() + y.rows(), x.cols());
  out << x, y;
  const auto n = x.rows();
  return t.push(std::move(out), {a, b}, [a, b, n](Tape& tp, int self) {
    const Mat& g = tp.upstream(self);
    if (tp.needs_grad(a)) tp.accumulate(a, g.topRows(n));
    if (tp.needs_grad(b)) tp.accumulate(b, g.bottomRows(g.rows() - n));
  });
}

Var concat_rows(Tape& t, const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows", "no inputs");
  const auto cols = t.value(parts[0]).cols();
  Eigen::Index rows = 0;
  for (Var p : parts) {
    require(t.value(p).cols() == cols, "concat_rows", "column count mismatch");
    rows += t.value(p).rows();
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleRows(at, t.value(p).rows()) = t.value(p);
    at += t.value(p).rows();
  }
  auto bw = [parts](Tape& tp, int self) {
    const Mat& g = tp.upstream(self);
    Eigen::Index off = 0;
    for (Var p : parts) {
      const auto r = tp.value(p).rows();
      if (tp.needs_grad(p)) tp.accumulate(p, g.middleRows(off, r));
      off += r;
    }
  };
  return t.push(std::move(out), std::span<const Var>(parts), std::move(bw));
}

Var concat_cols(Tape& t, const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols", "no inputs");
  const auto rows = t.value(parts[0]).rows();
  Eigen::Index cols = 0;
  for (Var p : parts) {
    require(t.value(p).rows() == rows, "concat_cols", "row count mismatch");
    cols += t.value(p).cols();
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleCols(at, t.value(p).cols()) = t.value(p);
    at += t.value(p).cols();
  }
  auto bw = [parts](Tape& tp, int self) {
    const Mat& g = tp.upstream(self);
    Eigen::Index off = 0;
    for (Var p : parts) {
      const auto c = tp.value(p).cols();
      if (tp.needs_grad(p)) tp.accumulate(p, g.middleCols(off, c));
      off += c;
    }
  };
  return t.push(std::move(out), std::span<const Var>(parts), std::move(bw));
}

Var slice_rows(Tape& t, Var a, int begin, int count) {
  const Mat& x = t.value(a);
  require(begin >= 0 && count >= 0 && begin + count <= x.rows(), "slice_rows", "range out of bounds");
  return t.push(x.middleRows(begin, count), {a}, [a, begin](Tape& tp, int self) {
    const Mat& x = tp.value(a);
    Mat ga = Mat::Zero(x.rows(), x.cols());
    const Mat& g = tp.upstream(self);
    ga.middleRows(begin, g.rows()) = g;
    tp.accumulate(a, ga);
  });
}

Var slice_cols(Tape& t, Var a, int begin, int count) {
  const Mat& x = t.value(a);
  require(begin >= 0 && count >= 0 && begin + count <= x.cols(), "slice_cols", "range out of bounds");
  return t.push(x.middleCols(begin, count), {a}, [a, begin](Tape& tp, int self) {
    const Mat& x = tp.value(a);
    Mat ga = Mat::Zero(x.rows(), x.cols());
    const Mat& g = tp.upstream(self);
    ga.middleCols(begin, g.cols()) = g;
    tp.accumulate(a, ga);
  });
}

Var gather_rows(Tape& t, Var a, const std::vector<int>& rows) {
  const Mat& x = t.value(a);
  Mat out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < x.rows(), "gather_rows", "row index out of bounds");
    out.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
  }
  return t.push(std::move(out), {a}, [a, rows](Tape& tp, int self) {
    const Mat& x = tp.value(a);
    const Mat& g = tp.upstream(self);
    Mat ga = Mat::Zero(x.rows(), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) ga.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
    tp.accumulate(a, ga);
  });
}

Var element(Tape& t, Var a, int r, int c) {
  const Mat& x = t.value(a);
  require(r >= 0 && r < x.rows() && c >= 0 && c < x.cols(), "element", "index out of bounds");
  Mat y(1, 1);
  y(0, 0) = x(r, c);
  return t.push(std::move(y), {a}, [a, r, c](Tape& tp, int self) {
    const Mat& x = tp.value(a);
    Mat ga = Mat::Zero(x.rows(), x.cols());
    ga(r, c) = tp.upstream(self)(0, 0);
    tp.accumulate(a, ga);
  });
}

Var conv1d(Tape& t, Var x, Var weight, int kernel, Var bias) {
  const Mat& in = t.value(x);
  const Mat& w = t.value(weight);
  require(kernel >= 1, "conv1d", "kernel must be >= 1");
  const int channels = static_cast<int>(in.cols());
  require(w.rows() == static_cast<Eigen::Index>(kernel) * channels, "conv1d",
          "weight " + shape_str(w) + " for kernel " + std::to_string(kernel) + " over " + std::to_string(channels) +
              " channels");
  const int len = static_cast<int>(in.rows());
  const int half = kernel / 2;
  Mat out = Mat::Zero(len, w.cols());
  for (int j = 0; j < kernel; ++j) {
    const int shift = j - half;
    const int lo = std::max(0, -shift);
    const int hi = std::min(len, len - shift);
    if (hi <= lo) continue;
    out.middleRows(lo, hi - lo).noalias() += in.middleRows(lo + shift, hi - lo) * w.middleRows(j * channels, channels);
  }
  if (bias.valid()) {
    const Mat& b = t.value(bias);
    require(b.rows() == 1 && b.cols() == w.cols(), "conv1d", "bias " + shape_str(b));
    out.rowwise() += b.row(0);
  }
  auto bw = [x, weight, kernel, bias, channels, len, half](Tape& tp, int self) {
    const Mat& g = tp.upstream(self);
    const Mat& in = tp.value(x);
    const Mat& w = tp.value(weight);
    Mat gx = Mat::Zero(in.rows(), in.cols());
    Mat gw = Mat::Zero(w.rows(), w.cols());
    for (int j = 0; j < kernel; ++j) {
      const int shift = j - half;
      const int lo = std::max(0, -shift);
      const int hi = std::min(len, len - shift);
      if (hi <= lo) continue;
      gx.middleRows(lo + shift, hi - lo).noalias() += g.middleRows(lo, hi - lo) * w.middleRows(j * channels, channels).transpose();
      gw.middleRows(j * channels, channels).noalias() += in.middleRows(lo + shift, hi - lo).transpose() * g.middleRows(lo, hi - lo);
    }
    tp.accumulate(x, gx);
    tp.accumulate(weight, gw);
    if (bias.valid()) tp.accumulate(bias, g.colwise().sum());
  };
  if (bias.valid()) return t.push(std::move(out), {x, weight, bias}, std::move(bw));
  return t.push(std::move(out), {x, weight}, std::move(bw));
}

Var avg_pool_rows(Tape& t, Var x, int r) {
  const Mat& in = t.value(x);
  require(r >= 1, "avg_pool_rows", "window must be >= 1");
  const int len = static_cast<int>(in.rows());
  const int windows = (len + r - 1) / r;
  Mat out(windows, in.cols());
  for (int m = 0; m < windows; ++m) {
    const int n = std::min(r, len - m * r);
    out.row(m) = in.middleRows(m * r, n).colwise().sum() / static_cast<double>(n);
  }
  return t.push(std::move(out), {x}, [x, r, len, windows](Tape& tp, int self) {
    const Mat& g = tp.upstream(self);
    Mat gx(len, g.cols());
    for (int m = 0; m < windows; ++m) {
      const int n = std::min(r, len - m * r);
      gx.middleRows(m * r, n) = g.row(m).replicate(n, 1) / static_cast<double>(n);
    }
    tp.accumulate(x, gx);
  });
}

Var interp_rows(Tape& t, Var x, Var positions) {
  const Mat& in = t.value(x);
  const Mat& pos = t.value(positions);
  require(pos.cols() == 1, "interp_rows", "positions must be a column, got " + shape_str(pos));
  const int len = static_cast<int>(in.rows());
  require(len > 0, "interp_rows", "empty input");
  Mat out(pos.rows(), in.cols());
  for (Eigen::Index m = 0; m < pos.rows(); ++m) {
    const double p = pos(m, 0);
    if (!(p >= 0.0 && p <= len - 1)) throw ValueError("interp_rows: position out of range");
    const int lo = static_cast<int>(std::floor(p));
    const double frac = p - lo;
    if (lo + 1 < len) {
      out.row(m) = (1.0 - frac) * in.row(lo) + frac * in.row(lo + 1);
    } else {
      out.row(m) = in.row(lo);
    }
  }
  return t.push(std::move(out), {x, positions}, [x, positions, len](Tape& tp, int self) {
    const Mat& g = tp.upstream(self);
    const Mat& in = tp.value(x);
    const Mat& pos = tp.value(positions);
    Mat gx = Mat::Zero(in.rows(), in.cols());
    Mat gp = Mat::Zero(pos.rows(), 1);
    for (Eigen::Index m = 0; m < pos.rows(); ++m) {
      const double p = pos(m, 0);
      const int lo = static_cast<int>(std::floor(p));
      const double frac = p - lo;
      if (lo + 1 < len) {
        gx.row(lo) += (1.0 - frac) * g.row(m);
        gx.row(lo + 1) += frac * g.row(m);
        gp(m, 0) = g.row(m).dot(in.row(lo + 1) - in.row(lo));
      } else {
        gx.row(lo) += g.row(m);
        gp(m, 0) = -g.row(m).dot(in.row(lo));
      }
    }
    if (tp.needs_grad(x)) tp.accumulate(x, gx);
    if (tp.needs_grad(positions)) tp.accumulate(positions, gp);
  });
}

Mat attention_weights(const Mat& q, const Mat& k, int heads, int head) {
  require(q.cols() == k.cols() && heads > 0 && q.cols() % heads == 0, "attention_weights", "bad shapes");
  const auto dh = q.cols() / heads;
  const double s = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat logits = (q.middleCols(head * dh, dh) * k.middleCols(head * dh, dh).transpose()) * s;
  return softmax_of(logits);
}

Var attention(Tape& t, Var q, Var k, Var v, int heads) {
  const Mat& qm = t.value(q);
  const Mat& km = t.value(k);
  const Mat& vm = t.value(v);
  require(heads > 0, "attention", "heads must be positive");
  require(qm.cols() == km.cols() && km.cols() == vm.cols(), "attention",
          shape_str(qm) + ", " + shape_str(km) + ", " + shape_str(vm));
  require(km.rows() == vm.rows(), "attention", "key/value row mismatch");
  require(qm.cols() % heads == 0, "attention", "model dim not divisible by heads");
  require(km.rows() > 0, "attention", "no keys");
  const auto dh = qm.cols() / heads;
  const double s = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat out(qm.rows(), qm.cols());
  std::vector<Mat> probs(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    probs[h] = softmax_of((qm.middleCols(h * dh, dh) * km.middleCols(h * dh, dh).transpose()) * s);
    out.middleCols(h * dh, dh).noalias() = probs[h] * vm.middleCols(h * dh, dh);
  }
  return t.push(std::move(out), {q, k, v}, [q, k, v, heads, dh, s, probs = std::move(probs)](Tape& tp, int self) {
    const Mat& g = tp.upstream(self);
    const Mat& qm = tp.value(q);
    const Mat& km = tp.value(k);
    const Mat& vm = tp.value(v);
    Mat gq = Mat::Zero(qm.rows(), qm.cols());
    Mat gk = Mat::Zero(km.rows(), km.cols());
    Mat gv = Mat::Zero(vm.rows(), vm.cols());
    for (int h = 0; h < heads; ++h) {
      const Mat& p = probs[h];
      const auto gh = g.middleCols(h * dh, dh);
      gv.middleCols(h * dh, dh).noalias() = p.transpose() * gh;
      Mat gp = gh * vm.middleCols(h * dh, dh).transpose();
      Mat dot = gp.cwiseProduct(p).rowwise().sum();
      Mat gs = (p.array() * (gp.array().colwise() - dot.col(0).array())) * s;
      gq.middleCols(h * dh, dh).noalias() = gs * km.middleCols(h * dh, dh);
      gk.middleCols(h * dh, dh).noalias() = gs.transpose() * qm.middleCols(h * dh, dh);
    }
    if (tp.needs_grad(q)) tp.accumulate(q, gq);
    if (tp.needs_grad(k)) tp.accumulate(k, gk);
    if (tp.needs_grad(v)) tp.accumulate(v, gv);
  });
}

}  // namespace cdnet::ops
