#pragma once

// Query-guided semantic disentanglement: the dual contrastive guidance
// losses, the language-guided context encoder and the per-clip relevance
// scores that reweight clip features.

#include "cdnet/nn.hpp"

#include <random>
#include <span>
#include <string>
#include <vector>

namespace cdnet::qsd {

// One sample's contribution to the guidance losses.
struct GuidanceSample {
  Mat positive;      // 1 x d, a clip from inside the moment
  Mat negatives;     // N x d, clips outside the moment
  Mat global_query;  // 1 x d
  Mat guided_text;   // T x d, video-guided text tokens
  int positive_index = 0;  // clip index of `positive`
};
using GuidanceBatch = std::vector<GuidanceSample>;

// The same quantities as tape nodes. text_token is the guided-text row at
// the positive clip's index.
struct GuidanceVars {
  Var positive;
  Var negatives;
  Var global_query;
  Var text_token;
};

struct LossWeights {
  double inter = 0.1;
  double intra = 0.1;
  double token = 0.1;
  void validate() const;
};

struct GuidanceComponents {
  double inter = 0.0;
  double intra = 0.0;
  double token = 0.0;
};

// -(1/B) Σ_i log softmax over {S(v_i^p, Q_i^g), S(v_ij^n, Q_i^g)} at the positive.
Var intra_contrastive_loss(Tape& t, std::span<const GuidanceVars> batch, double temperature = 1.0);
// -(1/B) Σ_i log softmax over {S(v_i^p, Q_j^g)}_j at j = i.
Var inter_contrastive_loss(Tape& t, std::span<const GuidanceVars> batch, double temperature = 1.0);
// intra form with Q_i^g replaced by the time-aligned guided text token.
Var token_level_loss(Tape& t, std::span<const GuidanceVars> batch, double temperature = 1.0);
Var guidance_loss(Tape& t, std::span<const GuidanceVars> batch, const LossWeights& w, double temperature = 1.0);

// Constant-input conveniences.
std::vector<GuidanceVars> bind_guidance(Tape& t, const GuidanceBatch& batch, bool trainable);
double intra_contrastive_loss(const GuidanceBatch& batch, double temperature = 1.0);
double inter_contrastive_loss(const GuidanceBatch& batch, double temperature = 1.0);
double token_level_loss(const GuidanceBatch& batch, double temperature = 1.0);
GuidanceComponents guidance_components(const GuidanceBatch& batch, double temperature = 1.0);
double guidance_loss(const GuidanceBatch& batch, const LossWeights& w, double temperature = 1.0);

struct ContextEncoderParams {
  nn::MHAParams self_attn;
  nn::MHAParams cross_attn;
};

struct QSDParams {
  nn::LinearParams pool;       // d -> 1 token scores for Q^g
  nn::MHAParams text_cross;    // video queries over text tokens
  ContextEncoderParams context;
};

void init_qsd(ParamStore& store, const std::string& prefix, int dim, std::mt19937_64& rng);
QSDParams bind_qsd(Binding& b, const std::string& prefix, int heads);

// MHA with clips as queries and text tokens as keys/values: T x d.
Var video_guided_text(Tape& t, Var video, Var text, const nn::MHAParams& p);

// Self-attention over clips then clip-to-text cross-attention, each pre-norm
// with a residual connection and drop path on the branch.
Var context_encode(Tape& t, Var video, Var text, const ContextEncoderParams& p, double drop_path_rate, bool training,
                   std::mt19937_64& rng);

// D_i = S(v_i, Q^g) + (1/T) Σ_j S(v_i, w̃_j); returns T x 1.
Var relevance_scores(Tape& t, Var clips, Var global_query, Var guided_text);

// Row i of clips scaled by D_i.
Var disentangle(Tape& t, Var clips, Var relevance);

}  // namespace cdnet::qsd
