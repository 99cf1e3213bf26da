#include "oracles.hpp"

#include "cdnet/grounding.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace cdnet;
using namespace cdnet::grounding;
using oracle::random_mat;

namespace {

nn::MHAParams random_mha(Tape& t, int d, int heads, std::mt19937_64& rng) {
  auto lin = [&] { return nn::LinearParams{t.constant(random_mat(d, d, rng, 0.5)), t.constant(random_mat(1, d, rng, 0.05))}; };
  return {lin(), lin(), lin(), lin(), heads};
}

LocalizerParams random_localizer(Tape& t, int d, int blocks, std::mt19937_64& rng) {
  LocalizerParams p;
  p.modality = t.constant(random_mat(2, d, rng, 0.1));
  for (int b = 0; b < blocks; ++b) {
    p.blocks.push_back({random_mha(t, d, 2, rng),
                        {t.constant(random_mat(d, 2 * d, rng, 0.3)), t.constant(random_mat(1, 2 * d, rng, 0.05))},
                        {t.constant(random_mat(2 * d, d, rng, 0.3)), t.constant(random_mat(1, d, rng, 0.05))}});
  }
  return p;
}

}  // namespace

TEST_CASE("localizer: empty stack, tiny input, composed oracle") {
  std::mt19937_64 rng(1);
  std::mt19937_64 dp(0);
  Tape t;
  const int d = 8;
  const Mat v = random_mat(5, d, rng), q = random_mat(3, d, rng);
  {
    const auto p = random_localizer(t, d, 0, rng);
    const auto out = localize(t, t.constant(v), t.constant(q), p, 0.0, false, dp);
    const Mat mod = t.value(p.modality);
    const Mat want_v = (v.rowwise() + mod.row(0)) + nn::sinusoidal_positions(5, d);
    const Mat want_q = (q.rowwise() + mod.row(1)) + nn::sinusoidal_positions(3, d);
    CHECK((t.value(out.clips) - want_v).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((t.value(out.text) - want_q).cwiseAbs().maxCoeff() < 1e-15);
  }
  const auto p = random_localizer(t, d, 2, rng);
  const auto tiny = localize(t, t.constant(random_mat(1, d, rng)), t.constant(random_mat(1, d, rng)), p, 0.1, false, dp);
  CHECK(t.value(tiny.clips).allFinite());
  CHECK(t.value(tiny.text).rows() == 1);

  const auto out = localize(t, t.constant(v), t.constant(q), p, 0.0, false, dp);
  const Mat mod = t.value(p.modality);
  Mat x(8, d);
  x << (v.rowwise() + mod.row(0)) + nn::sinusoidal_positions(5, d), (q.rowwise() + mod.row(1)) + nn::sinusoidal_positions(3, d);
  auto ln = [](const Mat& m) {
    Mat o(m.rows(), m.cols());
    for (int i = 0; i < m.rows(); ++i) {
      const double mu = m.row(i).mean();
      const double var = (m.row(i).array() - mu).square().mean();
      o.row(i) = (m.row(i).array() - mu) / std::sqrt(var + 1e-5);
    }
    return o;
  };
  auto lin = [&](const Mat& m, const nn::LinearParams& l) { return Mat((m * t.value(l.weight)).rowwise() + t.value(l.bias).row(0)); };
  auto gelu = [](const Mat& m) { return Mat(m.unaryExpr([](double z) { return 0.5 * z * (1.0 + std::erf(z / std::sqrt(2.0))); })); };
  for (const auto& b : p.blocks) {
    const Mat n = ln(x);
    x += lin(oracle::attention(lin(n, b.attn.query), lin(n, b.attn.key), lin(n, b.attn.value), 2), b.attn.output);
    x += lin(gelu(lin(ln(x), b.ffn_in)), b.ffn_out);
  }
  CHECK((t.value(out.clips) - x.topRows(5)).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((t.value(out.text) - x.bottomRows(3)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("heads: ranges and shapes") {
  std::mt19937_64 rng(2);
  Tape t;
  HeadParams conf, bound;
  for (int i = 0; i < 2; ++i) {
    conf.layers[i] = {t.constant(random_mat(24, 8, rng, 0.3)), t.constant(random_mat(1, 8, rng)), 3};
    bound.layers[i] = conf.layers[i];
  }
  conf.layers[2] = {t.constant(random_mat(8, 1, rng, 0.5)), t.constant(random_mat(1, 1, rng)), 1};
  bound.layers[2] = {t.constant(random_mat(8, 2, rng, 0.5)), t.constant(random_mat(1, 2, rng)), 1};
  const Mat x = random_mat(10, 8, rng);
  const Mat c = t.value(confidence_head(t, t.constant(x), conf));
  const Mat b = t.value(boundary_head(t, t.constant(x), bound));
  CHECK(c.rows() == 10);
  CHECK(c.cols() == 1);
  CHECK(c.minCoeff() > 0.0);
  CHECK(c.maxCoeff() < 1.0);
  CHECK(b.cols() == 2);
  CHECK(b.minCoeff() >= 0.0);
}

TEST_CASE("focal loss: confident positive, gamma 0, oracle, monotonicity") {
  CHECK(focal_loss(std::vector<double>{1.0 - 1e-9}, {true}, 2.0, 1.0) < 1e-12);
  const std::vector<double> half(6, 0.5);
  const std::vector<bool> mask{true, false, false, true, true, false};
  CHECK(focal_loss(half, mask, 0.0, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(focal_loss(half, mask, 0.0, 0.4) == doctest::Approx(0.4 * std::log(2.0)).epsilon(1e-14));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> conf(9);
  std::vector<bool> pos(9);
  for (int i = 0; i < 9; ++i) {
    conf[static_cast<std::size_t>(i)] = u(rng);
    pos[static_cast<std::size_t>(i)] = u(rng) < 0.5;
  }
  CHECK(std::abs(focal_loss(conf, pos, 2.0, 1.0) - oracle::focal(conf, pos, 2.0, 1.0)) < 1e-12);
  CHECK(focal_loss(conf, std::vector<bool>(9, false), 2.0, 1.0) >= 0.0);
  double prev_pos = INFINITY, prev_neg = -INFINITY;
  for (double p = 0.05; p < 1.0; p += 0.05) {
    const double lp = focal_loss(std::vector<double>{p}, {true}, 2.0, 1.0);
    const double ln = focal_loss(std::vector<double>{p}, {false}, 2.0, 1.0);
    CHECK(lp < prev_pos);
    CHECK(ln > prev_neg);
    CHECK(lp >= 0.0);
    prev_pos = lp;
    prev_neg = ln;
  }
  CHECK_THROWS_AS(focal_loss(conf, std::vector<bool>(3, false), 2.0, 1.0), ShapeError);
}

TEST_CASE("gIoU and boundary loss") {
  CHECK(1.0 - giou({0, 1}, {2, 3}) == doctest::Approx(4.0 / 3.0).epsilon(1e-15));
  CHECK(giou({0, 1}, {2, 3}) == doctest::Approx(-1.0 / 3.0));
  CHECK(giou({1, 4}, {1, 4}) == 1.0);
  CHECK(giou({1, 2}, {0, 5}) == doctest::Approx(span_iou({1, 2}, {0, 5})).epsilon(1e-15));
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int i = 0; i < 200; ++i) {
    const double s1 = u(rng), s2 = u(rng);
    const Span a{s1, s1 + 0.1 + u(rng)}, b{s2, s2 + 0.1 + u(rng)};
    const double g = giou(a, b);
    CHECK(g > -1.0);
    CHECK(g <= 1.0);
  }

  const MomentSpan gt{2, 6};
  Mat perfect = Mat::Zero(8, 2);
  for (int c = gt.start; c < gt.end; ++c) perfect.row(c) << c - gt.start, gt.end - c;
  CHECK(boundary_loss(perfect, gt, 1.0, 1.0) == 0.0);
  const Mat off = random_mat(8, 2, rng, 2.0).cwiseAbs();
  CHECK(std::abs(boundary_loss(off, gt, 0.7, 1.3) - oracle::boundary_loss(off, gt, 0.7, 1.3)) < 1e-12);

  Tape t;
  const auto none = grounding::boundary_loss(t, t.constant(off), MomentSpan{3, 3}, 1.0, 1.0);
  CHECK(none.no_positives);
  CHECK(t.scalar(none.value) == 0.0);
  CHECK_THROWS_AS(grounding::boundary_loss(t, t.constant(off), MomentSpan{2, 12}, 1.0, 1.0), ShapeError);
}

TEST_CASE("total loss is the sum of its parts") {
  CHECK(total_loss(0, 0, 0) == 0.0);
  CHECK(total_loss(0.5, 0.2, 0.3) == doctest::Approx(1.0).epsilon(1e-15));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  const double a = u(rng), b = u(rng), c = u(rng);
  CHECK(total_loss(a, b, c) == a + b + c);
}

TEST_CASE("span decoding") {
  const std::vector<ClipPrediction> one{{5, 0.9, 2.0, 3.0}};
  const auto d = decode_spans(one, 32);
  REQUIRE(d.size() == 1);
  CHECK(d[0] == DecodedSpan{3.0, 8.0, 0.9});
  CHECK(decode_spans(std::vector<ClipPrediction>{{5, 0.9, 0.0, 0.0}}, 32).empty());
  const auto clamped = decode_spans(std::vector<ClipPrediction>{{1, 0.5, 4.0, 40.0}}, 10);
  CHECK(clamped[0] == DecodedSpan{0.0, 10.0, 0.5});

  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<ClipPrediction> preds;
  for (int c = 0; c < 20; ++c) preds.push_back({c, std::round(u(rng) * 4) / 4, u(rng) * 3, u(rng) * 3});
  const auto ranked = decode_spans(preds, 20);
  CHECK(ranked.size() == 20);
  for (std::size_t i = 1; i < ranked.size(); ++i) {
    const auto& a = ranked[i - 1];
    const auto& b = ranked[i];
    CHECK((a.score > b.score || (a.score == b.score && (a.start < b.start || (a.start == b.start && a.end <= b.end)))));
  }
}

TEST_CASE("NMS") {
  const std::vector<DecodedSpan> same{{1, 4, 0.9}, {1, 4, 0.8}};
  CHECK(nms(same, 0.7).size() == 1);
  const std::vector<DecodedSpan> disjoint{{0, 2, 0.9}, {3, 5, 0.8}};
  CHECK(nms(disjoint, 0.7).size() == 2);
  CHECK_THROWS_AS(nms(disjoint, 1.5), ValueError);
  CHECK_THROWS_AS(nms(disjoint, -0.1), ValueError);

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<DecodedSpan> spans;
    for (int i = 0; i < 20; ++i) {
      const double s = u(rng) * 20;
      spans.push_back({s, s + 0.5 + u(rng) * 6, std::round(u(rng) * 5) / 5});
    }
    rank_spans(spans);
    const auto kept = nms(spans, 0.7);
    CHECK(kept == oracle::nms(spans, 0.7));
    for (std::size_t i = 0; i < kept.size(); ++i) {
      CHECK(std::find(spans.begin(), spans.end(), kept[i]) != spans.end());
      for (std::size_t j = i + 1; j < kept.size(); ++j)
        CHECK(span_iou({kept[i].start, kept[i].end}, {kept[j].start, kept[j].end}) <= 0.7);
    }
    // Permuting equal-score ties before ranking does not change the result.
    std::vector<DecodedSpan> shuffled = spans;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    rank_spans(shuffled);
    CHECK(nms(shuffled, 0.7) == kept);
  }
}

TEST_CASE("perfect predictions decode to the ground truth") {
  const MomentSpan gt{7, 13};
  std::vector<ClipPrediction> preds;
  for (int c = 0; c < 32; ++c) {
    if (gt.contains(c)) {
      preds.push_back({c, 0.99, static_cast<double>(c - gt.start), static_cast<double>(gt.end - c)});
    } else {
      preds.push_back({c, 0.01, 0.5, 0.5});
    }
  }
  const auto kept = nms(decode_spans(preds, 32), 0.7);
  REQUIRE(!kept.empty());
  CHECK(kept[0].start == gt.start);
  CHECK(kept[0].end == gt.end);
}
