#pragma once

// Differentiable operations recorded on a Tape. Every op validates shapes
// and throws ShapeError on mismatch.

#include "cdnet/tensor.hpp"

#include <vector>

namespace cdnet::ops {

Var matmul(Tape& t, Var a, Var b);
// a * b^T
Var matmul_nt(Tape& t, Var a, Var b);
Var transpose(Tape& t, Var a);

Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
Var add_scalar(Tape& t, Var a, double s);

// Broadcast a 1 x c row over every row of a.
Var add_row(Tape& t, Var a, Var row);
Var mul_row(Tape& t, Var a, Var row);
// Row i of a scaled by col(i, 0); col is rows x 1.
Var scale_rows(Tape& t, Var a, Var col);

Var sum(Tape& t, Var a);
Var mean(Tape& t, Var a);
Var row_sum(Tape& t, Var a);   // rows x 1
Var row_mean(Tape& t, Var a);  // rows x 1
Var col_mean(Tape& t, Var a);  // 1 x cols
// Sum of a ⊙ w for a constant weight matrix.
Var weighted_sum(Tape& t, Var a, const Mat& w);

Var softmax_rows(Tape& t, Var a);
Var log_softmax_rows(Tape& t, Var a);
Var gelu(Tape& t, Var a);
Var sigmoid(Tape& t, Var a);
Var softplus(Tape& t, Var a);
Var log(Tape& t, Var a);
Var clamp(Tape& t, Var a, double lo, double hi);

// Each row scaled to unit L2 norm; a zero row is a ValueError.
Var l2_normalize_rows(Tape& t, Var a);
// Per-row standardization (no affine part).
Var layer_norm_rows(Tape& t, Var a, double eps = 1e-5);

Var concat_rows(Tape& t, Var a, Var b);
Var concat_rows(Tape& t, const std::vector<Var>& parts);
Var concat_cols(Tape& t, const std::vector<Var>& parts);
Var slice_rows(Tape& t, Var a, int begin, int count);
Var slice_cols(Tape& t, Var a, int begin, int count);
Var gather_rows(Tape& t, Var a, const std::vector<int>& rows);
Var element(Tape& t, Var a, int r, int c);

// Temporal convolution over rows with zero "same" padding.
// weight is (k * in) x out with tap j occupying rows [j*in, (j+1)*in); tap j
// reads input row t + j - k/2. bias is 1 x out or an invalid Var.
Var conv1d(Tape& t, Var x, Var weight, int kernel, Var bias);

// Mean over consecutive windows of `r` rows; the last window may be short.
Var avg_pool_rows(Tape& t, Var x, int r);

// Linear-interpolation sampling along rows: out[m] = Σ_s max(0, 1-|p_m-s|) x[s].
// positions is m x 1 in row-index coordinates and must lie in [0, rows-1].
Var interp_rows(Tape& t, Var x, Var positions);

// Scaled dot-product attention with `heads` column blocks. q is n x d,
// k and v are m x d. Returns n x d (heads concatenated).
Var attention(Tape& t, Var q, Var k, Var v, int heads);

// Row-stochastic attention weights of one head (no tape); used by
// diagnostics and tests.
Mat attention_weights(const Mat& q, const Mat& k, int heads, int head);

}  // namespace cdnet::ops
