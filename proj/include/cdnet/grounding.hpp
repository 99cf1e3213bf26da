#pragma once

// Localizer over concatenated clip/text tokens, the confidence and boundary
// heads, their losses, and span decoding with temporal NMS.

#include "cdnet/corpus.hpp"
#include "cdnet/nn.hpp"

#include <random>
#include <span>
#include <string>
#include <vector>

namespace cdnet::grounding {

struct EncoderBlockParams {
  nn::MHAParams attn;
  nn::LinearParams ffn_in;
  nn::LinearParams ffn_out;
};

struct LocalizerParams {
  Var modality;  // 2 x d: row 0 clips, row 1 text
  std::vector<EncoderBlockParams> blocks;
};

// Three temporal conv layers: k=3, k=3, then 1x1 to `outputs` channels.
struct HeadParams {
  nn::ConvParams layers[3];
};

void init_localizer(ParamStore& store, const std::string& prefix, int dim, int blocks, std::mt19937_64& rng);
LocalizerParams bind_localizer(Binding& b, const std::string& prefix, int heads, int blocks);
void init_head(ParamStore& store, const std::string& prefix, int dim, int outputs, std::mt19937_64& rng);
HeadParams bind_head(Binding& b, const std::string& prefix);

struct LocalizerOutput {
  Var clips;  // T x d
  Var text;   // L x d
};

// Concatenates clip and text rows, adds modality and sinusoidal position
// embeddings (positions restart at 0 for the text rows), runs the pre-norm
// encoder blocks and splits the result back.
LocalizerOutput localize(Tape& t, Var clips, Var text, const LocalizerParams& p, double drop_path_rate, bool training,
                         std::mt19937_64& rng);

// Per-clip confidence in (0, 1): T x 1.
Var confidence_head(Tape& t, Var clips, const HeadParams& p);
// Per-clip non-negative (left, right) offsets: T x 2.
Var boundary_head(Tape& t, Var clips, const HeadParams& p);

inline constexpr double kProbClamp = 1e-7;

// mean_t -λ (1 - p_t)^γ log p_t with p_t = p̂ on positives, 1 - p̂ otherwise.
// p̂ is clamped to [1e-7, 1 - 1e-7]. confidence is T x 1.
Var focal_loss(Tape& t, Var confidence, const std::vector<bool>& positives, double gamma, double weight);
double focal_loss(std::span<const double> confidence, const std::vector<bool>& positives, double gamma,
                  double weight);

struct Span {
  double start = 0.0;
  double end = 0.0;
  double length() const { return end - start; }
};

double span_iou(const Span& a, const Span& b);
// Generalized IoU: IoU - (hull - union) / hull.
double giou(const Span& a, const Span& b);
double smooth_l1(double x);

struct BoundaryLoss {
  Var value;
  bool no_positives = false;  // set when there were no positive clips (loss 0)
};

// Averaged over positive clips: λ_L1 * mean SmoothL1(d̂_t - d_t) over the two
// sides + λ_iou * (1 - gIoU([t - d̂_l, t + d̂_r], [start, end])), with
// d_t = (t - start, end - t). offsets is T x 2.
BoundaryLoss boundary_loss(Tape& t, Var offsets, const MomentSpan& gt, double l1_weight, double iou_weight);
double boundary_loss(const Mat& offsets, const MomentSpan& gt, double l1_weight, double iou_weight);

// Overall objective: guidance + focal + boundary (the weights live inside
// each component).
inline double total_loss(double guidance, double focal, double boundary) { return guidance + focal + boundary; }

struct ClipPrediction {
  int clip = 0;
  double confidence = 0.0;
  double left = 0.0;
  double right = 0.0;
};

struct DecodedSpan {
  double start = 0.0;
  double end = 0.0;
  double score = 0.0;
  bool operator==(const DecodedSpan&) const = default;
};

// Sorts by score descending; ties go to the lower start, then the lower
// end, then input order.
void rank_spans(std::vector<DecodedSpan>& spans);

// One span [t - left, t + right] per clip clamped to [0, clips]; empty
// spans are dropped. Ranked with rank_spans.
std::vector<DecodedSpan> decode_spans(std::span<const ClipPrediction> preds, int clips);

// Greedy suppression of spans whose IoU with an already kept span exceeds
// the threshold. Input must be ranked; output keeps the input order.
std::vector<DecodedSpan> nms(std::span<const DecodedSpan> ranked, double threshold);

}  // namespace cdnet::grounding
