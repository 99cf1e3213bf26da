#pragma once

// Synthetic video/query feature corpus with planted moments.
//
// Every sample draws a random "concept" made of a few orthonormal latent
// components. Query tokens are noisy images of single components; clips in
// the moment embed the whole concept, distractor clips at most half of its
// components, and background clips embed noise orthogonal to the concept.
// All feature rows are unit-normalized after noise is added.

#include "cdnet/parallel.hpp"
#include "cdnet/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace cdnet {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Half-open clip interval [start, end).
struct MomentSpan {
  int start = 0;
  int end = 1;
  int length() const { return end - start; }
  bool contains(int clip) const { return clip >= start && clip < end; }
  bool operator==(const MomentSpan&) const = default;
};

bool spans_overlap(const MomentSpan& a, const MomentSpan& b);

inline constexpr int kMaxGrade = 4;

struct SaliencyLabels {
  std::vector<int> scores;  // one grade in [0, kMaxGrade] per clip
  bool operator==(const SaliencyLabels&) const = default;
};

struct CorpusSample {
  std::string sample_id;
  Mat video;  // T x d_v
  Mat query;  // L x d_q
  MomentSpan moment;
  SaliencyLabels saliency;
  std::vector<MomentSpan> distractors;
  bool operator==(const CorpusSample&) const = default;
};

struct CorpusConfig {
  int clips = 32;         // T
  int tokens = 8;         // L
  int video_dim = 32;     // d_v
  int query_dim = 32;     // d_q
  int num_samples = 600;
  int num_distractors = 2;
  double noise_sigma = 0.05;
  std::uint64_t seed = 7;

  void validate() const;
};

// Number of latent concept components for a config.
int concept_parts(const CorpusConfig& cfg);

// The sample at `index` of the corpus described by cfg. Depends only on
// (cfg, index).
CorpusSample generate_sample(const CorpusConfig& cfg, std::int64_t index);

std::vector<CorpusSample> generate_corpus(const CorpusConfig& cfg, Exec exec = Exec::kParallel);

std::string sample_to_json_line(const CorpusSample& s);
CorpusSample sample_from_json_line(const std::string& line, std::size_t line_no);

void write_corpus(const std::filesystem::path& path, const std::vector<CorpusSample>& samples);
std::vector<CorpusSample> read_corpus(const std::filesystem::path& path);

}  // namespace cdnet
