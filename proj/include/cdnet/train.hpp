#pragma once

// Run configuration, training loop, inference, checkpoints and the
// ablation / r-sweep / offset reports built on top of them.

#include "cdnet/metrics.hpp"
#include "cdnet/model.hpp"
#include "cdnet/optim.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace cdnet {

struct RunConfig {
  std::string corpus;
  int val_samples = 100;  // taken from the end of the corpus
  ModelConfig model;
  LossConfig loss;
  double lr = 3e-3;
  int epochs = 60;
  int batch_size = 32;
  double nms_threshold = 0.7;
  double grad_clip = 0.0;  // global norm, 0 disables
  int max_spans = 10;
  std::uint64_t seed = 7;

  void validate() const;
  // Accepts the flat key names listed by keys(); throws ConfigError.
  void set(const std::string& key, const std::string& value);
  static const std::vector<std::string>& keys();

  nlohmann::ordered_json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

// Flat `key = value` lines, '#' comments. Unknown keys are errors.
std::map<std::string, std::string> read_kv_file(const std::filesystem::path& path);
void apply_kv(RunConfig& cfg, const std::map<std::string, std::string>& kv);

struct Split {
  std::vector<CorpusSample> train;
  std::vector<CorpusSample> val;
};
Split split_corpus(std::vector<CorpusSample> samples, int val_samples);

// Copies the corpus feature dims into the model config.
void adopt_corpus_dims(RunConfig& cfg, const std::vector<CorpusSample>& samples);

struct Checkpoint {
  ParamStore params;
  RunConfig config;
  int epoch = 0;
  double val_map = 0.0;
  std::uint64_t rng_seed = 0;  // every training stream is derived from it
};

// Container layout, all integers little-endian:
//   "CDNETCK1" | u32 version | u64 manifest bytes | manifest JSON | data
// The manifest lists {name, rows, cols, offset} with offsets in float64
// elements from the start of the data block; data is row-major float64.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct LossComponents {
  double inter = 0.0;
  double intra = 0.0;
  double token = 0.0;
  double guidance = 0.0;  // weighted L^d
  double focal = 0.0;     // L^f
  double boundary = 0.0;  // L^b
  double total = 0.0;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;  // mean batch objective during the epoch
  LossComponents val_loss;
  metrics::MetricReport val_metrics;
  cdd::HitRates hits;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  static std::string csv_header();
  std::string csv() const;
};

struct TrainResult {
  Checkpoint best;
  Checkpoint last;
  TrainLog log;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using EpochCallback = std::function<void(const EpochLog&)>;

TrainResult train(const RunConfig& cfg, const Split& data, Exec exec = Exec::kParallel, const EpochCallback& on_epoch = {});

// One optimization step; returns the batch objective. Exposed for tests.
struct StepResult {
  double loss = 0.0;
  GradMap grads;
};
StepResult batch_gradients(const ParamStore& params, const RunConfig& cfg, std::span<const CorpusSample* const> batch,
                           std::span<const std::uint64_t> sample_seeds, Exec exec);

struct Inference {
  std::vector<grounding::DecodedSpan> spans;  // ranked, after NMS
  std::vector<double> saliency;               // relevance D per clip
  std::vector<double> confidence;
  std::optional<cdd::OffsetDiagnostics> offsets;
  qsd::GuidanceSample guidance;  // positive = moment center clip
  double focal = 0.0;
  double boundary = 0.0;
};

Inference infer(const ParamStore& params, const RunConfig& cfg, const CorpusSample& sample);
std::vector<Inference> infer_all(const ParamStore& params, const RunConfig& cfg, std::span<const CorpusSample> samples,
                                 Exec exec = Exec::kParallel);

struct Evaluation {
  metrics::MetricReport report;
  LossComponents loss;
  cdd::HitRates hits;
};
Evaluation evaluate(const ParamStore& params, const RunConfig& cfg, std::span<const CorpusSample> samples,
                    Exec exec = Exec::kParallel);

// One JSON object per line: {sample_id, spans: [{start, end, score}], saliency, confidence}.
std::string prediction_line(const std::string& sample_id, const Inference& inf);

// offset_report rows: sample, reference, offset, sampled, in-moment flags.
std::string offset_csv(std::span<const CorpusSample> samples, std::span<const Inference> inf);

struct AblationRow {
  std::string variant;
  AblationFlags flags;
  std::uint64_t seed = 0;
  metrics::MetricReport report;
};
struct NamedFlags {
  std::string name;
  AblationFlags flags;
};
// full, no-cdd, no-qsd (all switches off).
std::vector<NamedFlags> default_ablation_sets();
std::vector<AblationRow> ablate(const RunConfig& cfg, const Split& data, std::span<const NamedFlags> sets,
                                std::span<const std::uint64_t> seeds, Exec exec = Exec::kParallel);
std::string ablation_csv(std::span<const AblationRow> rows);

struct SweepRow {
  int factor = 0;
  metrics::MetricReport report;
  cdd::HitRates hits;
};
std::vector<SweepRow> sweep_r(const RunConfig& cfg, const Split& data, std::span<const int> factors,
                              Exec exec = Exec::kParallel);
std::string sweep_csv(std::span<const SweepRow> rows);

}  // namespace cdnet
