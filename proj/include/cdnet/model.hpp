#pragma once

// The full retrieval network: input projections, QSD, CDD, localizer and
// heads, plus the per-sample loss terms.

#include "cdnet/cdd.hpp"
#include "cdnet/corpus.hpp"
#include "cdnet/grounding.hpp"
#include "cdnet/qsd.hpp"

#include <optional>
#include <random>

namespace cdnet {

// Table-4 style switches. Each one is independent.
struct AblationFlags {
  bool intra = true;
  bool inter = true;
  bool token = true;
  bool relevance_mul = true;
  bool cdd = true;

  bool operator==(const AblationFlags&) const = default;
};

struct ModelConfig {
  int video_dim = 32;
  int query_dim = 32;
  int dim = 64;
  int heads = 4;
  int blocks = 2;
  int factor = 4;  // r
  int kernel = 3;  // l
  double drop_path = 0.1;
  AblationFlags flags;

  void validate() const;
};

struct LossConfig {
  qsd::LossWeights guidance;  // λ_inter, λ_intra, λ_l
  double temperature = 0.2;
  double gamma = 2.0;
  double focal_weight = 1.0;  // λ_f
  double l1_weight = 1.0;     // λ_L1
  double iou_weight = 1.0;    // λ_iou
};

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed);

// Parameter count derived from the layer shapes.
std::size_t expected_param_count(const ModelConfig& cfg);

struct ForwardResult {
  Var video;         // V^d
  Var text;          // Q^d
  Var global_query;  // Q^g
  Var guided_text;   // Q̃^l
  Var context;       // V^m
  Var relevance;     // D, T x 1
  Var disentangled;  // V^q
  Var denoised;      // V^f
  std::optional<cdd::CDDOutput> cdd;
  Var confidence;    // T x 1
  Var boundary;      // T x 2
};

ForwardResult forward(Tape& t, Binding& params, const ModelConfig& cfg, const CorpusSample& sample, bool training,
                      std::mt19937_64& rng);

struct SampleLoss {
  Var local;             // focal + boundary + weighted intra/token terms
  Var positive;          // v^p row (1 x d) for the batch-coupled inter loss
  double guidance = 0.0; // weighted intra + token value
  double focal = 0.0;
  double boundary = 0.0;
};

// Per-sample loss terms. positive_clip must lie inside the moment.
SampleLoss sample_loss(Tape& t, const ForwardResult& fwd, const CorpusSample& sample, int positive_clip,
                       const ModelConfig& cfg, const LossConfig& loss);

std::vector<bool> moment_mask(const CorpusSample& sample);

}  // namespace cdnet
