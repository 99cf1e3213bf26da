#include "oracles.hpp"

#include "cdnet/metrics.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace cdnet;
using namespace cdnet::metrics;

namespace {

EvalRecord record(MomentSpan gt, std::vector<DecodedSpan> spans) {
  EvalRecord r;
  r.moment = gt;
  r.spans = std::move(spans);
  const int T = 16;
  r.labels.scores.assign(T, 0);
  r.saliency.assign(T, 0.0);
  for (int c = gt.start; c < gt.end; ++c) {
    r.labels.scores[static_cast<std::size_t>(c)] = kMaxGrade;
    r.saliency[static_cast<std::size_t>(c)] = 1.0;
  }
  return r;
}

std::vector<EvalRecord> random_records(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<EvalRecord> out;
  for (int i = 0; i < n; ++i) {
    const int start = static_cast<int>(u(rng) * 10);
    const MomentSpan gt{start, start + 1 + static_cast<int>(u(rng) * 5)};
    std::vector<DecodedSpan> spans;
    for (int k = 0; k < 8; ++k) {
      const double s = gt.start + (u(rng) - 0.5) * 4;
      spans.push_back({s, s + 0.5 + u(rng) * 6, u(rng)});
    }
    grounding::rank_spans(spans);
    EvalRecord r = record(gt, spans);
    for (auto& v : r.saliency) v = u(rng);
    out.push_back(r);
  }
  return out;
}

}  // namespace

TEST_CASE("temporal IoU") {
  CHECK(temporal_iou({2, 5, 1}, {2, 5}) == 1.0);
  CHECK(temporal_iou({0, 2, 1}, {1, 3}) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(temporal_iou({0, 1, 1}, {2, 3}) == 0.0);
  CHECK_THROWS_AS(temporal_iou({2, 2, 1}, {1, 3}), ValueError);
  CHECK_THROWS_AS(temporal_iou({0, 2, 1}, {3, 3}), ValueError);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 8.0);
  for (int i = 0; i < 50; ++i) {
    const double s = u(rng);
    const DecodedSpan a{s, s + 0.2 + u(rng), 1};
    const int gs = static_cast<int>(u(rng));
    const MomentSpan b{gs, gs + 1 + static_cast<int>(u(rng) / 2)};
    // Discretized overlap at 1e-7 resolution.
    const double step = 1e-7;
    const double lo = std::min(a.start, static_cast<double>(b.start)), hi = std::max(a.end, static_cast<double>(b.end));
    const double inter = std::max(0.0, std::min(a.end, static_cast<double>(b.end)) - std::max(a.start, static_cast<double>(b.start)));
    const double uni = (a.end - a.start) + b.length() - inter;
    CHECK(std::abs(temporal_iou(a, b) - std::round(inter / step) / std::round(uni / step)) < 1e-6);
    CHECK(hi >= lo);
    CHECK(std::abs(temporal_iou(a, b) - oracle::iou(a.start, a.end, b.start, b.end)) < 1e-12);
  }
}

TEST_CASE("recall@k: perfect, disjoint, hand-counted records") {
  const MomentSpan gt{4, 8};
  CHECK(recall_at_k(std::vector<EvalRecord>{record(gt, {{4, 8, 0.9}})}, 1, 0.7) == 1.0);
  CHECK(recall_at_k(std::vector<EvalRecord>{record(gt, {{0, 2, 0.9}, {10, 12, 0.5}})}, 5, 0.3) == 0.0);
  // Ten records; hits at R1@0.5: rank-1 IoU >= 0.5 in records 0, 2, 5, 7 and 9.
  std::vector<EvalRecord> recs;
  recs.push_back(record(gt, {{4, 8, 0.9}}));                    // IoU 1
  recs.push_back(record(gt, {{0, 3, 0.9}, {4, 8, 0.8}}));       // rank 2 hit
  recs.push_back(record(gt, {{4, 6, 0.9}}));                    // IoU 0.5
  recs.push_back(record(gt, {{5, 6, 0.9}}));                    // IoU 0.25
  recs.push_back(record(gt, {}));                               // no predictions
  recs.push_back(record(gt, {{3, 8, 0.9}}));                    // IoU 0.8
  recs.push_back(record(gt, {{8, 12, 0.9}}));                   // IoU 0
  recs.push_back(record(gt, {{4, 9, 0.9}}));                    // IoU 0.8
  recs.push_back(record(gt, {{2, 6, 0.9}, {1, 2, 0.1}}));       // IoU 1/3
  recs.push_back(record(gt, {{4, 7.5, 0.9}}));                  // IoU 0.875
  CHECK(recall_at_k(recs, 1, 0.5) == doctest::Approx(0.5));
  CHECK(recall_at_k(recs, 5, 0.5) == doctest::Approx(0.6));
  CHECK(recall_at_k(recs, 1, 0.3) == doctest::Approx(0.6));
  CHECK(recall_at_k(recs, 1, 0.7) == doctest::Approx(0.4));
  CHECK_THROWS_AS(recall_at_k(recs, 0, 0.5), ValueError);
}

TEST_CASE("mean AP: single hit, rank two, brute-force oracle") {
  const MomentSpan gt{4, 8};
  const std::vector<double> th{0.5};
  CHECK(mean_ap(std::vector<EvalRecord>{record(gt, {{4, 8, 0.9}})}, th) == 1.0);
  CHECK(mean_ap(std::vector<EvalRecord>{record(gt, {{10, 12, 0.9}, {4, 8, 0.5}})}, th) == 0.5);
  std::mt19937_64 rng(2);
  const auto recs = random_records(rng, 25);
  const auto grid = map_thresholds();
  CHECK(grid.size() == 10);
  CHECK(grid.front() == doctest::Approx(0.5));
  CHECK(grid.back() == doctest::Approx(0.95));
  // Oracle: enumerate every rank cutoff, precision at the cutoffs where recall rises.
  double want = 0;
  for (double t : grid) {
    double per = 0;
    for (const auto& r : recs) {
      double ap = 0, prev_recall = 0;
      for (std::size_t cut = 1; cut <= r.spans.size(); ++cut) {
        int tp = 0;
        bool matched = false;
        for (std::size_t i = 0; i < cut; ++i) {
          const bool hit = !matched && oracle::iou(r.spans[i].start, r.spans[i].end, r.moment.start, r.moment.end) >= t;
          if (hit) matched = true;
          tp += hit;
        }
        const double recall = tp;  // one ground truth
        const double precision = static_cast<double>(tp) / static_cast<double>(cut);
        if (recall > prev_recall) ap += (recall - prev_recall) * precision;
        prev_recall = recall;
      }
      per += ap;
    }
    want += per / static_cast<double>(recs.size());
  }
  want /= static_cast<double>(grid.size());
  CHECK(std::abs(mean_ap(recs, grid) - want) < 1e-12);
  // Record permutation invariance.
  auto shuffled = recs;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  CHECK(std::abs(mean_ap(shuffled, grid) - mean_ap(recs, grid)) < 1e-12);
  CHECK_THROWS_AS(mean_ap(std::vector<EvalRecord>{}, grid), ValueError);
}

TEST_CASE("highlight metrics") {
  EvalRecord r = record({1, 2}, {});
  r.labels.scores = {0, 4, 2, 3};
  r.saliency = {0.0, 4.0, 2.0, 3.0};
  auto hd = hd_metrics(std::vector<EvalRecord>{r});
  CHECK(hd.hit_at_1 == 1.0);
  CHECK(hd.map == 1.0);
  r.saliency = {4.0, 1.0, 3.0, 2.0};  // reversed: the positive is ranked last
  CHECK(saliency_ap(r.saliency, r.labels) == doctest::Approx(0.25));
  hd = hd_metrics(std::vector<EvalRecord>{r});
  CHECK(hd.hit_at_1 == 0.0);

  EvalRecord none = r;
  none.labels.scores = {0, 1, 2, 3};
  hd = hd_metrics(std::vector<EvalRecord>{r, none});
  CHECK(hd.skipped == 1);
  CHECK(hd.map == doctest::Approx(0.25));

  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> grade(0, 4), score(0, 3);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> s(12);
    SaliencyLabels l;
    l.scores.resize(12);
    for (int c = 0; c < 12; ++c) {
      s[static_cast<std::size_t>(c)] = score(rng);
      l.scores[static_cast<std::size_t>(c)] = grade(rng);
    }
    l.scores[static_cast<std::size_t>(i % 12)] = kMaxGrade;
    CHECK(std::abs(saliency_ap(s, l) - oracle::saliency_ap(s, l.scores)) < 1e-12);
  }
}

TEST_CASE("report invariants: bounds, R1 <= R5, monotone thresholds, rank invariance") {
  std::mt19937_64 rng(4);
  const auto recs = random_records(rng, 40);
  const MetricReport rep = evaluate_records(recs, Exec::kSerial);
  CHECK(rep == evaluate_records(recs, Exec::kParallel));
  for (double v : {rep.r1_03, rep.r1_05, rep.r1_07, rep.r5_03, rep.r5_05, rep.r5_07, rep.map_05, rep.map_075, rep.map_avg,
                   rep.hd_map, rep.hit_at_1}) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(rep.r1_03 <= rep.r5_03);
  CHECK(rep.r1_05 <= rep.r5_05);
  CHECK(rep.r1_07 <= rep.r5_07);
  CHECK(rep.r1_03 >= rep.r1_05);
  CHECK(rep.r1_05 >= rep.r1_07);
  CHECK(rep.samples == 40);

  auto transformed = recs;
  for (auto& r : transformed) {
    for (auto& s : r.spans) s.score = std::exp(3.0 * s.score) - 7.0;
    for (auto& v : r.saliency) v = 2.0 * v * v * v + 1.0;
  }
  CHECK(evaluate_records(transformed) == rep);
  CHECK(rep.to_json().size() == 13);
  CHECK(MetricReport::csv_header().find("map_avg") != std::string::npos);
}
