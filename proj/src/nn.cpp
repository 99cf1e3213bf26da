#include "cdnet/nn.hpp"

#include <algorithm>
#include <cmath>

namespace cdnet::nn {

void init_linear(ParamStore& store, const std::string& prefix, int in, int out, bool bias, std::mt19937_64& rng) {
  store.set(prefix + ".weight", scaled_uniform(in, out, in, rng));
  if (bias) store.set(prefix + ".bias", Mat::Zero(1, out));
}

void init_mha(ParamStore& store, const std::string& prefix, int dim, std::mt19937_64& rng) {
  for (const char* part : {".q", ".k", ".v", ".o"}) init_linear(store, prefix + part, dim, dim, true, rng);
}

void init_conv(ParamStore& store, const std::string& prefix, int in, int out, int kernel, bool bias,
               std::mt19937_64& rng) {
  store.set(prefix + ".weight", scaled_uniform(kernel * in, out, kernel * in, rng));
  if (bias) store.set(prefix + ".bias", Mat::Zero(1, out));
}

LinearParams bind_linear(Binding& b, const std::string& prefix, bool bias) {
  LinearParams p;
  p.weight = b(prefix + ".weight");
  if (bias) p.bias = b(prefix + ".bias");
  return p;
}

MHAParams bind_mha(Binding& b, const std::string& prefix, int heads) {
  MHAParams p;
  p.query = bind_linear(b, prefix + ".q", true);
  p.key = bind_linear(b, prefix + ".k", true);
  p.value = bind_linear(b, prefix + ".v", true);
  p.output = bind_linear(b, prefix + ".o", true);
  p.heads = heads;
  return p;
}

ConvParams bind_conv(Binding& b, const std::string& prefix, int kernel, bool bias) {
  ConvParams p;
  p.weight = b(prefix + ".weight");
  if (bias) p.bias = b(prefix + ".bias");
  p.kernel = kernel;
  return p;
}

Var linear(Tape& t, Var x, const LinearParams& p) {
  Var y = ops::matmul(t, x, p.weight);
  if (p.bias.valid()) y = ops::add_row(t, y, p.bias);
  return y;
}

Var mha(Tape& t, Var q, Var k, Var v, const MHAParams& p) {
  const auto dim = t.value(q).cols();
  if (t.value(k).cols() != dim || t.value(v).cols() != dim) {
    throw ShapeError("mha: query/key/value widths differ");
  }
  if (t.value(k).rows() != t.value(v).rows()) throw ShapeError("mha: key/value row counts differ");
  if (p.heads <= 0 || dim % p.heads != 0) throw ShapeError("mha: model dim not divisible by head count");
  Var qp = linear(t, q, p.query);
  Var kp = linear(t, k, p.key);
  Var vp = linear(t, v, p.value);
  return linear(t, ops::attention(t, qp, kp, vp, p.heads), p.output);
}

Var weighted_pool(Tape& t, Var x, const LinearParams& score) {
  if (t.value(x).rows() == 0) throw ShapeError("weighted_pool: no tokens");
  Var logits = ops::transpose(t, linear(t, x, score));  // 1 x L
  Var weights = ops::softmax_rows(t, logits);
  return ops::matmul(t, weights, x);
}

Var conv1d(Tape& t, Var x, const ConvParams& p) { return ops::conv1d(t, x, p.weight, p.kernel, p.bias); }

Var cosine_matrix(Tape& t, Var a, Var b) {
  return ops::matmul_nt(t, ops::l2_normalize_rows(t, a), ops::l2_normalize_rows(t, b));
}

double cosine_sim(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw ShapeError("cosine_sim: length mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw ValueError("cosine_sim: zero vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

Var drop_path(Tape& t, Var x, double rate, bool training, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ValueError("drop_path: rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  return ops::scale(t, x, keep(rng) ? 1.0 / (1.0 - rate) : 0.0);
}

Mat sinusoidal_positions(int rows, int dim) {
  Mat pe(rows, dim);
  for (int pos = 0; pos < rows; ++pos) {
    for (int i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / dim);
      pe(pos, i) = (i % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
    }
  }
  return pe;
}

}  // namespace cdnet::nn
