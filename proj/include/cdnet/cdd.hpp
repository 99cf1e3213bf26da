#pragma once

// Context-aware dynamic denoising: query-conditioned temporal offsets on a
// down-sampled reference grid, linear-interpolation re-sampling of the
// projected clips, and attention with the re-sampled tokens as keys/values.

#include "cdnet/corpus.hpp"
#include "cdnet/nn.hpp"

#include <random>
#include <span>
#include <string>
#include <vector>

namespace cdnet::cdd {

// Reference points at the centers of consecutive r-clip windows. When r
// does not divide T the last window is short and its center is the mean of
// the indices it covers.
struct ReferenceGrid {
  int clips = 0;
  int factor = 1;
  std::vector<double> index;       // clip-index coordinates, strictly increasing
  std::vector<double> normalized;  // 2 * index / (T - 1) - 1
  int size() const { return static_cast<int>(index.size()); }
  Mat index_column() const;
};

ReferenceGrid make_grid(int clips, int factor);

struct OffsetNetParams {
  nn::ConvParams temporal;  // kernel l, d -> d, with bias
  nn::ConvParams point;     // 1x1, d -> 1, no bias
};

struct CDDParams {
  nn::LinearParams query_proj;  // W_q
  nn::MHAParams attention;      // key/value projections are W_k / W_v
  OffsetNetParams offsets;
  int factor = 4;
};

// The final 1x1 offset layer starts at zero, so a fresh module samples
// exactly at the reference points.
void init_cdd(ParamStore& store, const std::string& prefix, int dim, int kernel, std::mt19937_64& rng);
CDDParams bind_cdd(Binding& b, const std::string& prefix, int heads, int kernel, int factor);

// conv_l(V^{q'} ⊙ Q^g) averaged over each r-window (together a stride-r
// linear map), then GELU and the bias-free 1x1 conv. Offsets are in
// clip-index units, one per reference point.
Var compute_offsets(Tape& t, Var projected, Var global_query, const ReferenceGrid& grid, const OffsetNetParams& p);

// clamp(p + Δp, 0, T-1) as a column.
Var sample_positions(Tape& t, const ReferenceGrid& grid, Var offsets);

// x̃[m] = Σ_t max(0, 1 - |pos_m - t|) V^{q'}[t].
Var interpolate_sample(Tape& t, Var projected, Var positions);

// MHA with clips as queries and sampled tokens as keys/values.
Var denoised_attention(Tape& t, Var clips, Var sampled, const nn::MHAParams& p);

struct CDDOutput {
  Var output;     // T x d
  Var offsets;    // T^r x 1
  Var positions;  // T^r x 1, clamped sampling positions
};

// V^f = V^q + drop_path(denoised_attention(V^q, σ(V^q W_q; p + Δp))).
CDDOutput cdd_forward(Tape& t, Var clips, Var global_query, const CDDParams& p, double drop_path_rate, bool training,
                      std::mt19937_64& rng);

// Fraction of positions inside the half-open moment [start, end).
double hit_fraction(std::span<const double> positions, const MomentSpan& moment);

struct OffsetDiagnostics {
  std::vector<double> reference;  // grid points
  std::vector<double> sampled;    // grid points + offsets, clamped
  std::vector<double> offsets;
  MomentSpan moment;
};

struct HitRates {
  double with_offsets = 0.0;
  double baseline = 0.0;
  std::size_t samples = 0;
};

// Mean per-sample hit fraction with and without the learned offsets.
HitRates offset_hit_rate(std::span<const OffsetDiagnostics> diagnostics);

}  // namespace cdnet::cdd
