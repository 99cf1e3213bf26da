#pragma once

// Differentiable building blocks composed by the model: linear maps,
// multi-head attention, weighted pooling, temporal convolution, cosine
// similarity and drop path.

#include "cdnet/ops.hpp"
#include "cdnet/params.hpp"

#include <random>
#include <string>

namespace cdnet::nn {

// y = x W (+ b), W is in x out.
struct LinearParams {
  Var weight;
  Var bias;  // invalid when omitted
};

struct MHAParams {
  LinearParams query;
  LinearParams key;
  LinearParams value;
  LinearParams output;
  int heads = 1;
};

struct ConvParams {
  Var weight;  // (kernel * in) x out
  Var bias;    // invalid when omitted
  int kernel = 1;
};

void init_linear(ParamStore& store, const std::string& prefix, int in, int out, bool bias, std::mt19937_64& rng);
void init_mha(ParamStore& store, const std::string& prefix, int dim, std::mt19937_64& rng);
void init_conv(ParamStore& store, const std::string& prefix, int in, int out, int kernel, bool bias,
               std::mt19937_64& rng);

LinearParams bind_linear(Binding& b, const std::string& prefix, bool bias);
MHAParams bind_mha(Binding& b, const std::string& prefix, int heads);
ConvParams bind_conv(Binding& b, const std::string& prefix, int kernel, bool bias);

Var linear(Tape& t, Var x, const LinearParams& p);

// Projects q, k, v, runs per-head scaled dot-product attention (softmax
// over key rows, 1/sqrt(d/h) scaling), concatenates heads and applies the
// output projection.
Var mha(Tape& t, Var q, Var k, Var v, const MHAParams& p);

// softmax over rows of score(x), then the weighted sum of rows: 1 x d.
Var weighted_pool(Tape& t, Var x, const LinearParams& score);

Var conv1d(Tape& t, Var x, const ConvParams& p);

// Pairwise cosine similarities between rows of a and rows of b.
Var cosine_matrix(Tape& t, Var a, Var b);
double cosine_sim(const Vec& a, const Vec& b);

// Stochastic depth on a residual branch: the whole branch is dropped with
// probability `rate` and rescaled by 1/(1-rate) otherwise. Identity when
// not training or rate == 0.
Var drop_path(Tape& t, Var x, double rate, bool training, std::mt19937_64& rng);

// Fixed sinusoidal position table, rows x dim.
Mat sinusoidal_positions(int rows, int dim);

}  // namespace cdnet::nn
