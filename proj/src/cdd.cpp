#include "cdnet/cdd.hpp"

namespace cdnet::cdd {

Mat ReferenceGrid::index_column() const {
  Mat col(size(), 1);
  for (int m = 0; m < size(); ++m) col(m, 0) = index[m];
  return col;
}

ReferenceGrid make_grid(int clips, int factor) {
  if (factor < 1) throw ValueError("make_grid: down-sample factor must be >= 1");
  if (clips < factor) throw ValueError("make_grid: factor exceeds clip count");
  ReferenceGrid g;
  g.clips = clips;
  g.factor = factor;
  for (int begin = 0; begin < clips; begin += factor) {
    const int last = std::min(clips, begin + factor) - 1;
    g.index.push_back(0.5 * (begin + last));
  }
  for (double p : g.index) g.normalized.push_back(clips > 1 ? 2.0 * p / (clips - 1) - 1.0 : 0.0);
  return g;
}

void init_cdd(ParamStore& store, const std::string& prefix, int dim, int kernel, std::mt19937_64& rng) {
  if (kernel < 1 || kernel % 2 == 0) throw ValueError("offset kernel size must be odd and positive");
  nn::init_linear(store, prefix + ".wq", dim, dim, false, rng);
  nn::init_mha(store, prefix + ".attn", dim, rng);
  nn::init_conv(store, prefix + ".offset.temporal", dim, dim, kernel, true, rng);
  store.set(prefix + ".offset.point.weight", Mat::Zero(dim, 1));
}

CDDParams bind_cdd(Binding& b, const std::string& prefix, int heads, int kernel, int factor) {
  CDDParams p;
  p.query_proj = nn::bind_linear(b, prefix + ".wq", false);
  p.attention = nn::bind_mha(b, prefix + ".attn", heads);
  p.offsets.temporal = nn::bind_conv(b, prefix + ".offset.temporal", kernel, true);
  p.offsets.point = nn::bind_conv(b, prefix + ".offset.point", 1, false);
  p.factor = factor;
  return p;
}

Var compute_offsets(Tape& t, Var projected, Var global_query, const ReferenceGrid& grid, const OffsetNetParams& p) {
  if (t.value(projected).rows() != grid.clips) throw ShapeError("compute_offsets: grid built for a different T");
  if (p.point.bias.valid()) throw ValueError("compute_offsets: the 1x1 offset layer must not have a bias");
  Var gated = ops::mul_row(t, projected, global_query);
  Var local = ops::avg_pool_rows(t, nn::conv1d(t, gated, p.temporal), grid.factor);
  return nn::conv1d(t, ops::gelu(t, local), p.point);
}

Var sample_positions(Tape& t, const ReferenceGrid& grid, Var offsets) {
  if (t.value(offsets).rows() != grid.size() || t.value(offsets).cols() != 1) {
    throw ShapeError("sample_positions: one offset per reference point expected");
  }
  Var shifted = ops::add(t, t.constant(grid.index_column()), offsets);
  return ops::clamp(t, shifted, 0.0, static_cast<double>(grid.clips - 1));
}

Var interpolate_sample(Tape& t, Var projected, Var positions) { return ops::interp_rows(t, projected, positions); }

Var denoised_attention(Tape& t, Var clips, Var sampled, const nn::MHAParams& p) {
  return nn::mha(t, clips, sampled, sampled, p);
}

CDDOutput cdd_forward(Tape& t, Var clips, Var global_query, const CDDParams& p, double drop_path_rate, bool training,
                      std::mt19937_64& rng) {
  const int clips_n = static_cast<int>(t.value(clips).rows());
  const ReferenceGrid grid = make_grid(clips_n, p.factor);
  CDDOutput out;
  Var projected = nn::linear(t, clips, p.query_proj);
  out.offsets = compute_offsets(t, projected, global_query, grid, p.offsets);
  out.positions = sample_positions(t, grid, out.offsets);
  Var sampled = interpolate_sample(t, projected, out.positions);
  Var attended = denoised_attention(t, clips, sampled, p.attention);
  out.output = ops::add(t, clips, nn::drop_path(t, attended, drop_path_rate, training, rng));
  return out;
}

double hit_fraction(std::span<const double> positions, const MomentSpan& moment) {
  if (positions.empty()) throw ValueError("hit_fraction: no positions");
  std::size_t hits = 0;
  for (double p : positions) hits += (p >= moment.start && p < moment.end) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(positions.size());
}

HitRates offset_hit_rate(std::span<const OffsetDiagnostics> diagnostics) {
  if (diagnostics.empty()) throw ValueError("offset_hit_rate: no samples");
  HitRates r;
  for (const auto& d : diagnostics) {
    r.with_offsets += hit_fraction(d.sampled, d.moment);
    r.baseline += hit_fraction(d.reference, d.moment);
  }
  r.samples = diagnostics.size();
  r.with_offsets /= static_cast<double>(r.samples);
  r.baseline /= static_cast<double>(r.samples);
  return r;
}

}  // namespace cdnet::cdd
