#include "cdnet/grounding.hpp"

#include <algorithm>
#include <cmath>

namespace cdnet::grounding {
namespace {

void require_positives(const Mat& conf, const std::vector<bool>& positives) {
  if (conf.cols() != 1) throw ShapeError("focal_loss: confidence must be a column");
  if (static_cast<std::size_t>(conf.rows()) != positives.size()) {
    throw ShapeError("focal_loss: mask length differs from clip count");
  }
}

struct GiouParts {
  double value = 0.0;
  double d_start = 0.0;  // d gIoU / d pred.start
  double d_end = 0.0;    // d gIoU / d pred.end
};

// gIoU of pred against gt with its derivative w.r.t. the predicted edges.
// Piecewise; derivatives are one-sided at the kinks.
GiouParts giou_with_grad(const Span& pred, const Span& gt) {
  const double lo = std::max(pred.start, gt.start);
  const double hi = std::min(pred.end, gt.end);
  const double inter = std::max(0.0, hi - lo);
  const double uni = pred.length() + gt.length() - inter;
  const double hull = std::max(pred.end, gt.end) - std::min(pred.start, gt.start);
  GiouParts out;
  if (uni <= 0.0 || hull <= 0.0) return out;
  out.value = inter / uni - (hull - uni) / hull;

  const bool overlapping = hi > lo;
  const double di_de = (overlapping && pred.end < gt.end) ? 1.0 : 0.0;
  const double di_ds = (overlapping && pred.start > gt.start) ? -1.0 : 0.0;
  const double du_de = 1.0 - di_de;
  const double du_ds = -1.0 - di_ds;
  const double dc_de = pred.end > gt.end ? 1.0 : 0.0;
  const double dc_ds = pred.start < gt.start ? -1.0 : 0.0;
  // gIoU = I/U - 1 + U/C
  auto d = [&](double di, double du, double dc) {
    return di / uni - inter * du / (uni * uni) + du / hull - uni * dc / (hull * hull);
  };
  out.d_end = d(di_de, du_de, dc_de);
  out.d_start = d(di_ds, du_ds, dc_ds);
  return out;
}

double smooth_l1_grad(double x) { return std::abs(x) < 1.0 ? x : (x > 0 ? 1.0 : -1.0); }

}  // namespace

void init_localizer(ParamStore& store, const std::string& prefix, int dim, int blocks, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 0.02);
  Mat modality(2, dim);
  for (Eigen::Index i = 0; i < modality.size(); ++i) modality.data()[i] = n(rng);
  store.set(prefix + ".modality", std::move(modality));
  for (int b = 0; b < blocks; ++b) {
    const std::string p = prefix + ".block" + std::to_string(b);
    nn::init_mha(store, p + ".attn", dim, rng);
    nn::init_linear(store, p + ".ffn_in", dim, 2 * dim, true, rng);
    nn::init_linear(store, p + ".ffn_out", 2 * dim, dim, true, rng);
  }
}

LocalizerParams bind_localizer(Binding& b, const std::string& prefix, int heads, int blocks) {
  LocalizerParams p;
  p.modality = b(prefix + ".modality");
  for (int i = 0; i < blocks; ++i) {
    const std::string q = prefix + ".block" + std::to_string(i);
    p.blocks.push_back({nn::bind_mha(b, q + ".attn", heads), nn::bind_linear(b, q + ".ffn_in", true),
                        nn::bind_linear(b, q + ".ffn_out", true)});
  }
  return p;
}

void init_head(ParamStore& store, const std::string& prefix, int dim, int outputs, std::mt19937_64& rng) {
  nn::init_conv(store, prefix + ".conv0", dim, dim, 3, true, rng);
  nn::init_conv(store, prefix + ".conv1", dim, dim, 3, true, rng);
  nn::init_conv(store, prefix + ".conv2", dim, outputs, 1, true, rng);
}

HeadParams bind_head(Binding& b, const std::string& prefix) {
  HeadParams p;
  p.layers[0] = nn::bind_conv(b, prefix + ".conv0", 3, true);
  p.layers[1] = nn::bind_conv(b, prefix + ".conv1", 3, true);
  p.layers[2] = nn::bind_conv(b, prefix + ".conv2", 1, true);
  return p;
}

LocalizerOutput localize(Tape& t, Var clips, Var text, const LocalizerParams& p, double drop_path_rate, bool training,
                         std::mt19937_64& rng) {
  const int n_clips = static_cast<int>(t.value(clips).rows());
  const int n_text = static_cast<int>(t.value(text).rows());
  const int dim = static_cast<int>(t.value(clips).cols());
  if (t.value(text).cols() != dim) throw ShapeError("localize: clip/text width mismatch");
  if (t.value(p.modality).rows() != 2 || t.value(p.modality).cols() != dim) {
    throw ShapeError("localize: modality embedding must be 2 x d");
  }

  Var clip_tokens = ops::add_row(t, clips, ops::slice_rows(t, p.modality, 0, 1));
  clip_tokens = ops::add(t, clip_tokens, t.constant(nn::sinusoidal_positions(n_clips, dim)));
  Var text_tokens = ops::add_row(t, text, ops::slice_rows(t, p.modality, 1, 1));
  text_tokens = ops::add(t, text_tokens, t.constant(nn::sinusoidal_positions(n_text, dim)));
  Var x = ops::concat_rows(t, clip_tokens, text_tokens);

  for (const EncoderBlockParams& block : p.blocks) {
    Var normed = ops::layer_norm_rows(t, x);
    Var attn = nn::mha(t, normed, normed, normed, block.attn);
    x = ops::add(t, x, nn::drop_path(t, attn, drop_path_rate, training, rng));
    Var hidden = ops::gelu(t, nn::linear(t, ops::layer_norm_rows(t, x), block.ffn_in));
    x = ops::add(t, x, nn::drop_path(t, nn::linear(t, hidden, block.ffn_out), drop_path_rate, training, rng));
  }
  return {ops::slice_rows(t, x, 0, n_clips), ops::slice_rows(t, x, n_clips, n_text)};
}

namespace {
Var head_trunk(Tape& t, Var clips, const HeadParams& p) {
  Var h = ops::gelu(t, nn::conv1d(t, clips, p.layers[0]));
  h = ops::gelu(t, nn::conv1d(t, h, p.layers[1]));
  return nn::conv1d(t, h, p.layers[2]);
}
}  // namespace

Var confidence_head(Tape& t, Var clips, const HeadParams& p) { return ops::sigmoid(t, head_trunk(t, clips, p)); }

Var boundary_head(Tape& t, Var clips, const HeadParams& p) { return ops::softplus(t, head_trunk(t, clips, p)); }

Var focal_loss(Tape& t, Var confidence, const std::vector<bool>& positives, double gamma, double weight) {
  const Mat& conf = t.value(confidence);
  require_positives(conf, positives);
  if (gamma < 0.0) throw ValueError("focal_loss: gamma must be >= 0");
  const auto n = conf.rows();
  if (n == 0) throw ShapeError("focal_loss: no clips");
  Mat out(1, 1);
  Mat grad(n, 1);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double p = std::clamp(conf(i, 0), kProbClamp, 1.0 - kProbClamp);
    const bool pos = positives[static_cast<std::size_t>(i)];
    const double pt = pos ? p : 1.0 - p;
    const double mod = std::pow(1.0 - pt, gamma);
    total += -weight * mod * std::log(pt);
    // d/dpt of -(1-pt)^γ log pt
    const double dpt = (gamma == 0.0 ? 0.0 : gamma * std::pow(1.0 - pt, gamma - 1.0) * std::log(pt)) - mod / pt;
    const bool clamped = conf(i, 0) < kProbClamp || conf(i, 0) > 1.0 - kProbClamp;
    grad(i, 0) = clamped ? 0.0 : weight * dpt * (pos ? 1.0 : -1.0) / static_cast<double>(n);
  }
  out(0, 0) = total / static_cast<double>(n);
  return t.push(std::move(out), {confidence}, [confidence, grad](Tape& tp, int self) {
    tp.accumulate(confidence, grad * tp.upstream(self)(0, 0));
  });
}

double focal_loss(std::span<const double> confidence, const std::vector<bool>& positives, double gamma,
                  double weight) {
  Tape t;
  Mat c(static_cast<Eigen::Index>(confidence.size()), 1);
  for (std::size_t i = 0; i < confidence.size(); ++i) c(static_cast<Eigen::Index>(i), 0) = confidence[i];
  return t.scalar(focal_loss(t, t.constant(c), positives, gamma, weight));
}

double span_iou(const Span& a, const Span& b) {
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = a.length() + b.length() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double giou(const Span& a, const Span& b) { return giou_with_grad(a, b).value; }

double smooth_l1(double x) { return std::abs(x) < 1.0 ? 0.5 * x * x : std::abs(x) - 0.5; }

BoundaryLoss boundary_loss(Tape& t, Var offsets, const MomentSpan& gt, double l1_weight, double iou_weight) {
  const Mat& off = t.value(offsets);
  if (off.cols() != 2) throw ShapeError("boundary_loss: offsets must be T x 2");
  if (gt.end > off.rows()) throw ShapeError("boundary_loss: moment exceeds clip count");
  BoundaryLoss result;
  const int positives = gt.length();
  Mat grad = Mat::Zero(off.rows(), 2);
  Mat out = Mat::Zero(1, 1);
  if (positives <= 0) {
    result.no_positives = true;
  } else {
    const Span truth{static_cast<double>(gt.start), static_cast<double>(gt.end)};
    double total = 0.0;
    for (int clip = gt.start; clip < gt.end; ++clip) {
      const double target_l = clip - gt.start;
      const double target_r = gt.end - clip;
      const double dl = off(clip, 0) - target_l;
      const double dr = off(clip, 1) - target_r;
      const Span pred{clip - off(clip, 0), clip + off(clip, 1)};
      const GiouParts g = giou_with_grad(pred, truth);
      total += l1_weight * 0.5 * (smooth_l1(dl) + smooth_l1(dr)) + iou_weight * (1.0 - g.value);
      // start = clip - left, end = clip + right
      grad(clip, 0) = (l1_weight * 0.5 * smooth_l1_grad(dl) + iou_weight * g.d_start) / positives;
      grad(clip, 1) = (l1_weight * 0.5 * smooth_l1_grad(dr) - iou_weight * g.d_end) / positives;
    }
    out(0, 0) = total / positives;
  }
  result.value = t.push(std::move(out), {offsets}, [offsets, grad](Tape& tp, int self) {
    tp.accumulate(offsets, grad * tp.upstream(self)(0, 0));
  });
  return result;
}

double boundary_loss(const Mat& offsets, const MomentSpan& gt, double l1_weight, double iou_weight) {
  Tape t;
  return t.scalar(boundary_loss(t, t.constant(offsets), gt, l1_weight, iou_weight).value);
}

void rank_spans(std::vector<DecodedSpan>& spans) {
  std::stable_sort(spans.begin(), spans.end(), [](const DecodedSpan& a, const DecodedSpan& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.start != b.start) return a.start < b.start;
    return a.end < b.end;
  });
}

std::vector<DecodedSpan> decode_spans(std::span<const ClipPrediction> preds, int clips) {
  std::vector<DecodedSpan> out;
  out.reserve(preds.size());
  for (const ClipPrediction& p : preds) {
    const double start = std::clamp(p.clip - p.left, 0.0, static_cast<double>(clips));
    const double end = std::clamp(p.clip + p.right, 0.0, static_cast<double>(clips));
    if (end > start) out.push_back({start, end, p.confidence});
  }
  rank_spans(out);
  return out;
}

std::vector<DecodedSpan> nms(std::span<const DecodedSpan> ranked, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ValueError("nms: threshold must be in [0, 1]");
  std::vector<DecodedSpan> kept;
  for (const DecodedSpan& s : ranked) {
    bool suppressed = false;
    for (const DecodedSpan& k : kept) {
      if (span_iou({s.start, s.end}, {k.start, k.end}) > threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(s);
  }
  return kept;
}

}  // namespace cdnet::grounding
