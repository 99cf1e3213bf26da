#include "cdnet/qsd.hpp"

namespace cdnet::qsd {
namespace {

void require_batch(std::span<const GuidanceVars> batch, const char* op) {
  if (batch.empty()) throw ValueError(std::string(op) + ": empty batch");
}

void require_temperature(double temperature) {
  if (!(temperature > 0.0)) throw ValueError("contrastive temperature must be positive");
}

// -(1/B) Σ_i log softmax([S(v_i^p, a_i), S(v_ij^n, a_i)...])[0] where a_i is
// picked by `anchor`.
template <typename Anchor>
Var in_sample_contrastive(Tape& t, std::span<const GuidanceVars> batch, double temperature, Anchor anchor,
                          const char* op) {
  require_batch(batch, op);
  require_temperature(temperature);
  std::vector<Var> terms;
  terms.reserve(batch.size());
  for (const GuidanceVars& g : batch) {
    if (t.value(g.negatives).rows() < 1) throw ValueError(std::string(op) + ": sample without negatives");
    const Var a = anchor(g);
    Var pos = nn::cosine_matrix(t, a, g.positive);   // 1 x 1
    Var neg = nn::cosine_matrix(t, a, g.negatives);  // 1 x N
    Var logits = ops::scale(t, ops::concat_cols(t, {pos, neg}), 1.0 / temperature);
    terms.push_back(ops::element(t, ops::log_softmax_rows(t, logits), 0, 0));
  }
  Var total = ops::sum(t, ops::concat_rows(t, terms));
  return ops::scale(t, total, -1.0 / static_cast<double>(batch.size()));
}

}  // namespace

void LossWeights::validate() const {
  if (inter < 0.0 || intra < 0.0 || token < 0.0) throw ValueError("guidance loss weights must be >= 0");
}

Var intra_contrastive_loss(Tape& t, std::span<const GuidanceVars> batch, double temperature) {
  return in_sample_contrastive(t, batch, temperature, [](const GuidanceVars& g) { return g.global_query; },
                               "intra_contrastive_loss");
}

Var token_level_loss(Tape& t, std::span<const GuidanceVars> batch, double temperature) {
  return in_sample_contrastive(t, batch, temperature, [](const GuidanceVars& g) { return g.text_token; },
                               "token_level_loss");
}

Var inter_contrastive_loss(Tape& t, std::span<const GuidanceVars> batch, double temperature) {
  require_batch(batch, "inter_contrastive_loss");
  require_temperature(temperature);
  std::vector<Var> positives;
  std::vector<Var> queries;
  for (const GuidanceVars& g : batch) {
    positives.push_back(g.positive);
    queries.push_back(g.global_query);
  }
  const auto n = static_cast<Eigen::Index>(batch.size());
  Var sim = nn::cosine_matrix(t, ops::concat_rows(t, positives), ops::concat_rows(t, queries));  // B x B
  Var logp = ops::log_softmax_rows(t, ops::scale(t, sim, 1.0 / temperature));
  Var diag = ops::weighted_sum(t, logp, Mat::Identity(n, n));
  return ops::scale(t, diag, -1.0 / static_cast<double>(n));
}

Var guidance_loss(Tape& t, std::span<const GuidanceVars> batch, const LossWeights& w, double temperature) {
  w.validate();
  Var total = ops::add(t, ops::scale(t, inter_contrastive_loss(t, batch, temperature), w.inter),
                       ops::scale(t, intra_contrastive_loss(t, batch, temperature), w.intra));
  return ops::add(t, total, ops::scale(t, token_level_loss(t, batch, temperature), w.token));
}

std::vector<GuidanceVars> bind_guidance(Tape& t, const GuidanceBatch& batch, bool trainable) {
  std::vector<GuidanceVars> out;
  out.reserve(batch.size());
  auto node = [&](const Mat& m) { return trainable ? t.leaf(m) : t.constant(m); };
  for (const GuidanceSample& s : batch) {
    if (s.positive_index < 0 || s.positive_index >= s.guided_text.rows()) {
      throw ValueError("guidance sample: positive index outside guided text");
    }
    GuidanceVars g;
    g.positive = node(s.positive);
    g.negatives = node(s.negatives);
    g.global_query = node(s.global_query);
    g.text_token = node(s.guided_text.row(s.positive_index));
    out.push_back(g);
  }
  return out;
}

double intra_contrastive_loss(const GuidanceBatch& batch, double temperature) {
  Tape t;
  auto vars = bind_guidance(t, batch, false);
  return t.scalar(intra_contrastive_loss(t, vars, temperature));
}

double inter_contrastive_loss(const GuidanceBatch& batch, double temperature) {
  Tape t;
  auto vars = bind_guidance(t, batch, false);
  return t.scalar(inter_contrastive_loss(t, vars, temperature));
}

double token_level_loss(const GuidanceBatch& batch, double temperature) {
  Tape t;
  auto vars = bind_guidance(t, batch, false);
  return t.scalar(token_level_loss(t, vars, temperature));
}

GuidanceComponents guidance_components(const GuidanceBatch& batch, double temperature) {
  return {inter_contrastive_loss(batch, temperature), intra_contrastive_loss(batch, temperature),
          token_level_loss(batch, temperature)};
}

double guidance_loss(const GuidanceBatch& batch, const LossWeights& w, double temperature) {
  Tape t;
  auto vars = bind_guidance(t, batch, false);
  return t.scalar(guidance_loss(t, vars, w, temperature));
}

void init_qsd(ParamStore& store, const std::string& prefix, int dim, std::mt19937_64& rng) {
  nn::init_linear(store, prefix + ".pool", dim, 1, true, rng);
  nn::init_mha(store, prefix + ".text_cross", dim, rng);
  nn::init_mha(store, prefix + ".context.self", dim, rng);
  nn::init_mha(store, prefix + ".context.cross", dim, rng);
}

QSDParams bind_qsd(Binding& b, const std::string& prefix, int heads) {
  QSDParams p;
  p.pool = nn::bind_linear(b, prefix + ".pool", true);
  p.text_cross = nn::bind_mha(b, prefix + ".text_cross", heads);
  p.context.self_attn = nn::bind_mha(b, prefix + ".context.self", heads);
  p.context.cross_attn = nn::bind_mha(b, prefix + ".context.cross", heads);
  return p;
}

Var video_guided_text(Tape& t, Var video, Var text, const nn::MHAParams& p) {
  if (t.value(video).rows() == 0) return t.constant(Mat(0, t.value(video).cols()));
  return nn::mha(t, video, text, text, p);
}

Var context_encode(Tape& t, Var video, Var text, const ContextEncoderParams& p, double drop_path_rate, bool training,
                   std::mt19937_64& rng) {
  if (t.value(video).cols() != t.value(text).cols()) throw ShapeError("context_encode: width mismatch");
  Var normed = ops::layer_norm_rows(t, video);
  Var x = ops::add(t, video, nn::drop_path(t, nn::mha(t, normed, normed, normed, p.self_attn), drop_path_rate,
                                           training, rng));
  Var cross = nn::mha(t, ops::layer_norm_rows(t, x), text, text, p.cross_attn);
  return ops::add(t, x, nn::drop_path(t, cross, drop_path_rate, training, rng));
}

Var relevance_scores(Tape& t, Var clips, Var global_query, Var guided_text) {
  const auto rows = t.value(clips).rows();
  if (t.value(guided_text).rows() != rows) throw ShapeError("relevance_scores: guided text must have one row per clip");
  if (t.value(global_query).rows() != 1) throw ShapeError("relevance_scores: global query must be a single row");
  Var global = nn::cosine_matrix(t, clips, global_query);                       // T x 1
  Var local = ops::row_mean(t, nn::cosine_matrix(t, clips, guided_text));       // T x 1
  return ops::add(t, global, local);
}

Var disentangle(Tape& t, Var clips, Var relevance) { return ops::scale_rows(t, clips, relevance); }

}  // namespace cdnet::qsd
