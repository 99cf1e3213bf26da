#include "cdnet/metrics.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace cdnet::metrics {
namespace {

bool hit(const DecodedSpan& s, const MomentSpan& gt, double threshold) { return temporal_iou(s, gt) >= threshold; }

}  // namespace

std::vector<double> map_thresholds() {
  std::vector<double> out;
  for (int i = 0; i < 10; ++i) out.push_back(0.5 + 0.05 * i);
  return out;
}

double temporal_iou(const DecodedSpan& a, const MomentSpan& b) {
  if (!(a.end > a.start)) throw ValueError("temporal_iou: empty predicted interval");
  if (b.end <= b.start) throw ValueError("temporal_iou: empty ground-truth interval");
  return grounding::span_iou({a.start, a.end}, {static_cast<double>(b.start), static_cast<double>(b.end)});
}

double recall_at_k(std::span<const EvalRecord> records, int k, double iou_threshold) {
  if (k < 1) throw ValueError("recall_at_k: k must be >= 1");
  if (records.empty()) return 0.0;
  std::size_t found = 0;
  for (const EvalRecord& r : records) {
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(k), r.spans.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (hit(r.spans[i], r.moment, iou_threshold)) {
        ++found;
        break;
      }
    }
  }
  return static_cast<double>(found) / static_cast<double>(records.size());
}

double average_precision(const EvalRecord& record, double iou_threshold) {
  const std::size_t n = record.spans.size();
  if (n == 0) return 0.0;
  // One ground truth: the first span that reaches the threshold is the only
  // true positive; later matches are duplicates.
  std::vector<double> precision(n), recall(n);
  bool matched = false;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!matched && hit(record.spans[i], record.moment, iou_threshold)) {
      matched = true;
      ++tp;
    }
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp);
  }
  // Monotone precision envelope, summed over recall increments.
  for (std::size_t i = n - 1; i > 0; --i) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

double mean_ap(std::span<const EvalRecord> records, std::span<const double> iou_thresholds) {
  if (records.empty()) throw ValueError("mean_ap: no records");
  if (iou_thresholds.empty()) throw ValueError("mean_ap: no thresholds");
  double total = 0.0;
  for (double thr : iou_thresholds) {
    double per = 0.0;
    for (const EvalRecord& r : records) per += average_precision(r, thr);
    total += per / static_cast<double>(records.size());
  }
  return total / static_cast<double>(iou_thresholds.size());
}

double saliency_ap(std::span<const double> scores, const SaliencyLabels& labels) {
  if (scores.size() != labels.scores.size()) throw ShapeError("saliency_ap: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t positives = 0;
  double sum_precision = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (labels.scores[order[rank]] == kMaxGrade) {
      ++positives;
      sum_precision += static_cast<double>(positives) / static_cast<double>(rank + 1);
    }
  }
  if (positives == 0) throw ValueError("saliency_ap: no positive clip");
  return sum_precision / static_cast<double>(positives);
}

HighlightScores hd_metrics(std::span<const EvalRecord> records) {
  HighlightScores out;
  std::size_t used = 0;
  for (const EvalRecord& r : records) {
    const auto& grades = r.labels.scores;
    if (std::find(grades.begin(), grades.end(), kMaxGrade) == grades.end()) {
      ++out.skipped;
      continue;
    }
    if (r.saliency.size() != grades.size()) throw ShapeError("hd_metrics: saliency length mismatch");
    out.map += saliency_ap(r.saliency, r.labels);
    const auto top = std::max_element(r.saliency.begin(), r.saliency.end()) - r.saliency.begin();
    out.hit_at_1 += grades[static_cast<std::size_t>(top)] == kMaxGrade ? 1.0 : 0.0;
    ++used;
  }
  if (used > 0) {
    out.map /= static_cast<double>(used);
    out.hit_at_1 /= static_cast<double>(used);
  }
  return out;
}

MetricReport evaluate_records(std::span<const EvalRecord> records, Exec exec) {
  MetricReport m;
  m.samples = records.size();
  if (records.empty()) return m;
  // Recall and AP terms are per record; compute them in parallel and reduce
  // in record order.
  const auto thresholds = map_thresholds();
  struct Terms {
    double r1[3] = {0, 0, 0};
    double r5[3] = {0, 0, 0};
    std::vector<double> ap;
  };
  std::vector<Terms> terms(records.size());
  const double levels[3] = {0.3, 0.5, 0.7};
  for_each_index(static_cast<std::int64_t>(records.size()), exec, [&](std::int64_t i) {
    const EvalRecord& r = records[static_cast<std::size_t>(i)];
    Terms& t = terms[static_cast<std::size_t>(i)];
    for (int l = 0; l < 3; ++l) {
      t.r1[l] = recall_at_k(std::span(&r, 1), 1, levels[l]);
      t.r5[l] = recall_at_k(std::span(&r, 1), 5, levels[l]);
    }
    for (double thr : thresholds) t.ap.push_back(average_precision(r, thr));
  });
  const double n = static_cast<double>(records.size());
  double r1[3] = {0, 0, 0}, r5[3] = {0, 0, 0};
  std::vector<double> ap(thresholds.size(), 0.0);
  for (const Terms& t : terms) {
    for (int l = 0; l < 3; ++l) {
      r1[l] += t.r1[l];
      r5[l] += t.r5[l];
    }
    for (std::size_t k = 0; k < ap.size(); ++k) ap[k] += t.ap[k];
  }
  m.r1_03 = r1[0] / n, m.r1_05 = r1[1] / n, m.r1_07 = r1[2] / n;
  m.r5_03 = r5[0] / n, m.r5_05 = r5[1] / n, m.r5_07 = r5[2] / n;
  for (double& a : ap) a /= n;
  m.map_05 = ap[0];
  m.map_075 = ap[5];
  m.map_avg = std::accumulate(ap.begin(), ap.end(), 0.0) / static_cast<double>(ap.size());
  const HighlightScores hd = hd_metrics(records);
  m.hd_map = hd.map;
  m.hit_at_1 = hd.hit_at_1;
  m.hd_skipped = hd.skipped;
  return m;
}

nlohmann::ordered_json MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["r1@0.3"] = r1_03;
  j["r1@0.5"] = r1_05;
  j["r1@0.7"] = r1_07;
  j["r5@0.3"] = r5_03;
  j["r5@0.5"] = r5_05;
  j["r5@0.7"] = r5_07;
  j["map@0.5"] = map_05;
  j["map@0.75"] = map_075;
  j["map_avg"] = map_avg;
  j["hd_map"] = hd_map;
  j["hit@1"] = hit_at_1;
  j["samples"] = samples;
  j["hd_skipped"] = hd_skipped;
  return j;
}

std::string MetricReport::csv_header() {
  return "r1@0.3,r1@0.5,r1@0.7,r5@0.3,r5@0.5,r5@0.7,map@0.5,map@0.75,map_avg,hd_map,hit@1";
}

std::string MetricReport::csv_row() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6);
  const double v[] = {r1_03, r1_05, r1_07, r5_03, r5_05, r5_07, map_05, map_075, map_avg, hd_map, hit_at_1};
  for (std::size_t i = 0; i < std::size(v); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

}  // namespace cdnet::metrics
