#pragma once

// Moment retrieval (R@k@IoU, mAP@IoU) and highlight detection (mAP, HIT@1)
// metrics over one ground-truth moment per sample.

#include "cdnet/corpus.hpp"
#include "cdnet/grounding.hpp"
#include "cdnet/parallel.hpp"

#include <json.hpp>

#include <span>
#include <string>
#include <vector>

namespace cdnet::metrics {

using grounding::DecodedSpan;

struct EvalRecord {
  std::string sample_id;
  std::vector<DecodedSpan> spans;  // ranked, best first
  MomentSpan moment;
  std::vector<double> saliency;    // predicted per-clip saliency
  SaliencyLabels labels;
};

struct MetricReport {
  double r1_03 = 0.0, r1_05 = 0.0, r1_07 = 0.0;
  double r5_03 = 0.0, r5_05 = 0.0, r5_07 = 0.0;
  double map_05 = 0.0, map_075 = 0.0, map_avg = 0.0;
  double hd_map = 0.0, hit_at_1 = 0.0;
  std::size_t samples = 0;
  std::size_t hd_skipped = 0;

  nlohmann::ordered_json to_json() const;
  static std::string csv_header();
  std::string csv_row() const;
  bool operator==(const MetricReport&) const = default;
};

// 0.5, 0.55, ..., 0.95
std::vector<double> map_thresholds();

double temporal_iou(const DecodedSpan& a, const MomentSpan& b);

double recall_at_k(std::span<const EvalRecord> records, int k, double iou_threshold);

// Detection AP of one sample's ranked spans against its single moment:
// greedy matching in rank order, precision envelope summed over recall
// steps.
double average_precision(const EvalRecord& record, double iou_threshold);

// Per-threshold mean of per-sample AP, then averaged over thresholds.
double mean_ap(std::span<const EvalRecord> records, std::span<const double> iou_thresholds);

struct HighlightScores {
  double map = 0.0;
  double hit_at_1 = 0.0;
  std::size_t skipped = 0;  // samples without any max-grade clip
};

// Positives are clips at the maximum grade. Ranking by predicted saliency
// (ties by clip index).
double saliency_ap(std::span<const double> scores, const SaliencyLabels& labels);
HighlightScores hd_metrics(std::span<const EvalRecord> records);

MetricReport evaluate_records(std::span<const EvalRecord> records, Exec exec = Exec::kParallel);

}  // namespace cdnet::metrics
