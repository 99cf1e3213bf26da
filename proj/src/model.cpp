#include "cdnet/model.hpp"

namespace cdnet {

void ModelConfig::validate() const {
  if (video_dim < 1 || query_dim < 1) throw ConfigError("input feature dims must be positive");
  if (dim < 1 || heads < 1 || dim % heads != 0) throw ConfigError("dim must be a positive multiple of heads");
  if (blocks < 0) throw ConfigError("blocks must be >= 0");
  if (factor < 1) throw ConfigError("down-sample factor r must be >= 1");
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("offset kernel size l must be odd");
  if (drop_path < 0.0 || drop_path >= 1.0) throw ConfigError("drop_path must be in [0, 1)");
}

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ParamStore store;
  nn::init_linear(store, "input.video", cfg.video_dim, cfg.dim, true, rng);
  nn::init_linear(store, "input.text", cfg.query_dim, cfg.dim, true, rng);
  qsd::init_qsd(store, "qsd", cfg.dim, rng);
  cdd::init_cdd(store, "cdd", cfg.dim, cfg.kernel, rng);
  grounding::init_localizer(store, "loc", cfg.dim, cfg.blocks, rng);
  grounding::init_head(store, "head.conf", cfg.dim, 1, rng);
  grounding::init_head(store, "head.bound", cfg.dim, 2, rng);
  return store;
}

std::size_t expected_param_count(const ModelConfig& cfg) {
  const std::size_t d = static_cast<std::size_t>(cfg.dim);
  const std::size_t mha = 4 * (d * d + d);
  const std::size_t l = static_cast<std::size_t>(cfg.kernel);
  std::size_t n = 0;
  n += cfg.video_dim * d + d + cfg.query_dim * d + d;       // input projections
  n += (d + 1) + 3 * mha;                                   // pool, text cross, context self/cross
  n += d * d + mha + (l * d * d + d) + d;                   // W_q, attention, offset net
  n += 2 * d + cfg.blocks * (mha + (2 * d * d + 2 * d) + (2 * d * d + d));
  auto head = [&](std::size_t out) { return 2 * (3 * d * d + d) + (d * out + out); };
  n += head(1) + head(2);
  return n;
}

std::vector<bool> moment_mask(const CorpusSample& sample) {
  std::vector<bool> mask(static_cast<std::size_t>(sample.video.rows()), false);
  for (int t = sample.moment.start; t < sample.moment.end; ++t) mask[static_cast<std::size_t>(t)] = true;
  return mask;
}

ForwardResult forward(Tape& t, Binding& params, const ModelConfig& cfg, const CorpusSample& sample, bool training,
                      std::mt19937_64& rng) {
  if (sample.video.cols() != cfg.video_dim || sample.query.cols() != cfg.query_dim) {
    throw ShapeError("forward: sample feature dims do not match the model config");
  }
  ForwardResult r;
  r.video = nn::linear(t, t.constant(sample.video), nn::bind_linear(params, "input.video", true));
  r.text = nn::linear(t, t.constant(sample.query), nn::bind_linear(params, "input.text", true));

  const qsd::QSDParams q = qsd::bind_qsd(params, "qsd", cfg.heads);
  r.global_query = nn::weighted_pool(t, r.text, q.pool);
  r.guided_text = qsd::video_guided_text(t, r.video, r.text, q.text_cross);
  r.context = qsd::context_encode(t, r.video, r.text, q.context, cfg.drop_path, training, rng);
  r.relevance = qsd::relevance_scores(t, r.context, r.global_query, r.guided_text);
  r.disentangled = cfg.flags.relevance_mul ? qsd::disentangle(t, r.context, r.relevance) : r.context;

  if (cfg.flags.cdd) {
    const cdd::CDDParams c = cdd::bind_cdd(params, "cdd", cfg.heads, cfg.kernel, cfg.factor);
    r.cdd = cdd::cdd_forward(t, r.disentangled, r.global_query, c, cfg.drop_path, training, rng);
    r.denoised = r.cdd->output;
  } else {
    r.denoised = r.disentangled;
  }

  const auto loc = grounding::localize(t, r.denoised, r.text, grounding::bind_localizer(params, "loc", cfg.heads, cfg.blocks),
                                       cfg.drop_path, training, rng);
  r.confidence = grounding::confidence_head(t, loc.clips, grounding::bind_head(params, "head.conf"));
  r.boundary = grounding::boundary_head(t, loc.clips, grounding::bind_head(params, "head.bound"));
  return r;
}

SampleLoss sample_loss(Tape& t, const ForwardResult& fwd, const CorpusSample& sample, int positive_clip,
                       const ModelConfig& cfg, const LossConfig& loss) {
  if (!sample.moment.contains(positive_clip)) throw ValueError("sample_loss: positive clip outside the moment");
  SampleLoss out;
  Var focal = grounding::focal_loss(t, fwd.confidence, moment_mask(sample), loss.gamma, loss.focal_weight);
  Var boundary = grounding::boundary_loss(t, fwd.boundary, sample.moment, loss.l1_weight, loss.iou_weight).value;
  out.focal = t.scalar(focal);
  out.boundary = t.scalar(boundary);
  Var local = ops::add(t, focal, boundary);

  out.positive = ops::gather_rows(t, fwd.video, {positive_clip});
  std::vector<int> outside;
  for (int c = 0; c < sample.video.rows(); ++c) {
    if (!sample.moment.contains(c)) outside.push_back(c);
  }
  if (!outside.empty() && (cfg.flags.intra || cfg.flags.token)) {
    qsd::GuidanceVars g{out.positive, ops::gather_rows(t, fwd.video, outside), fwd.global_query,
                        ops::gather_rows(t, fwd.guided_text, {positive_clip})};
    const std::span<const qsd::GuidanceVars> one(&g, 1);
    if (cfg.flags.intra && loss.guidance.intra > 0.0) {
      Var term = ops::scale(t, qsd::intra_contrastive_loss(t, one, loss.temperature), loss.guidance.intra);
      out.guidance += t.scalar(term);
      local = ops::add(t, local, term);
    }
    if (cfg.flags.token && loss.guidance.token > 0.0) {
      Var term = ops::scale(t, qsd::token_level_loss(t, one, loss.temperature), loss.guidance.token);
      out.guidance += t.scalar(term);
      local = ops::add(t, local, term);
    }
  }
  out.local = local;
  return out;
}

}  // namespace cdnet
