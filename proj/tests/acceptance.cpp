// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails.

#include "suites.hpp"

#include "cdnet/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

using namespace cdnet;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s  %s  %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  failures += ok ? 0 : 1;
}

std::string worst(const std::vector<suites::CheckResult>& rs, bool& all_ok, int& instances) {
  all_ok = true;
  instances = 0;
  const suites::CheckResult* w = nullptr;
  for (const auto& r : rs) {
    all_ok = all_ok && r.ok();
    instances += r.instances;
    if (!r.ok()) std::printf("      %s max error %.3g > %.3g\n", r.name.c_str(), r.max_error, r.tolerance);
    if (w == nullptr || r.max_error / r.tolerance > w->max_error / w->tolerance) w = &r;
  }
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu checks, %d instances, worst %s %.3g (tol %.0e)", rs.size(), instances,
                w ? w->name.c_str() : "-", w ? w->max_error : 0.0, w ? w->tolerance : 0.0);
  return buf;
}

void oracle_equivalence() {
  const auto t0 = Clock::now();
  const auto rs = suites::oracle_equivalence(100, 2024);
  const double secs = seconds_since(t0);
  bool ok = false;
  int n = 0;
  const std::string detail = worst(rs, ok, n);
  bool enough = true;
  for (const auto& r : rs) enough = enough && r.instances >= 100;
  report(ok && enough && secs < 60.0, "oracle-equivalence", detail + ", " + std::to_string(secs) + " s");
}

void gradient_suite() {
  const auto t0 = Clock::now();
  const auto rs = suites::gradient_suite(2024);
  const double secs = seconds_since(t0);
  bool ok = false;
  int n = 0;
  const std::string detail = worst(rs, ok, n);
  report(ok && secs < 120.0, "gradient-suite", detail + ", " + std::to_string(secs) + " s");
}

void closed_form() {
  bool ok = false;
  int n = 0;
  const std::string detail = worst(suites::closed_form_values(), ok, n);
  report(ok, "closed-form-values", detail);
}

// Grid centers of full windows are r*k + (r-1)/2; count those in [start, end).
double analytic_overlap(int T, int r, const MomentSpan& m) {
  const double half = 0.5 * (r - 1);
  const int windows = T / r;
  const int first = std::max(0, static_cast<int>(std::ceil((m.start - half) / r)));
  const int last = std::min(windows, static_cast<int>(std::ceil((m.end - half) / r)));
  return static_cast<double>(std::max(0, last - first)) / windows;
}

void zero_offset(const RunConfig& cfg, const Split& data) {
  const ParamStore params = init_params(cfg.model, cfg.seed);
  const int T = static_cast<int>(data.val.front().video.rows());
  const int r = cfg.model.factor;

  bool identical = true;
  for (const auto& s : data.val) {
    Tape t;
    Binding b(t, params, false);
    std::mt19937_64 rng(0);
    const ForwardResult fwd = forward(t, b, cfg.model, s, false, rng);
    const cdd::CDDParams p = cdd::bind_cdd(b, "cdd", cfg.model.heads, cfg.model.kernel, r);
    const auto grid = cdd::make_grid(T, r);
    Var projected = nn::linear(t, fwd.disentangled, p.query_proj);
    Var sampled = cdd::interpolate_sample(t, projected, t.constant(grid.index_column()));
    Var strided = ops::add(t, fwd.disentangled, cdd::denoised_attention(t, fwd.disentangled, sampled, p.attention));
    identical = identical && t.value(fwd.denoised) == t.value(strided);
  }

  const auto inf = infer_all(params, cfg, data.val);
  std::vector<cdd::OffsetDiagnostics> diags;
  double analytic = 0.0;
  for (std::size_t i = 0; i < inf.size(); ++i) {
    diags.push_back(*inf[i].offsets);
    analytic += analytic_overlap(T, r, data.val[i].moment);
  }
  analytic /= static_cast<double>(inf.size());
  const auto hits = cdd::offset_hit_rate(diags);
  const double gap = std::abs(hits.baseline - analytic);
  char buf[256];
  std::snprintf(buf, sizeof buf, "CDD output %s strided baseline on %zu samples; baseline hit %.6f analytic %.6f |diff| %.1e",
                identical ? "==" : "!=", data.val.size(), hits.baseline, analytic, gap);
  report(identical && gap <= 1e-9 && hits.with_offsets == hits.baseline, "zero-offset-equivalence", buf);
}

struct EndToEnd {
  TrainResult result;
  Evaluation eval;
  double seconds = 0.0;
};

EndToEnd end_to_end(const RunConfig& cfg, const Split& data) {
  EndToEnd e;
  const auto t0 = Clock::now();
  e.result = train(cfg, data);
  e.seconds = seconds_since(t0);
  e.eval = evaluate(e.result.best.params, cfg, data.val);
  const auto& m = e.eval.report;
  char buf[256];
  std::snprintf(buf, sizeof buf, "best epoch %d of %d: R1@0.5 %.3f HIT@1 %.3f mAP %.4f, %.0f s", e.result.best.epoch,
                cfg.epochs, m.r1_05, m.hit_at_1, m.map_avg, e.seconds);
  report(m.r1_05 >= 0.9 && m.hit_at_1 >= 0.9 && cfg.epochs <= 60 && e.seconds < 900.0, "end-to-end", buf);
  return e;
}

void offset_trend(const EndToEnd& e) {
  const auto& h = e.eval.hits;
  const double gain = h.with_offsets - h.baseline;
  const double relative = h.baseline > 0.0 ? gain / h.baseline : 0.0;
  char buf[256];
  std::snprintf(buf, sizeof buf, "hit rate %.4f vs zero-offset %.4f (gain %+.2f pts, %+.1f%% relative; reference 18.3%%)",
                h.with_offsets, h.baseline, 100.0 * gain, 100.0 * relative);
  report(h.with_offsets > h.baseline, "offset-learning-trend", buf);
}

void ablation(const RunConfig& cfg, const Split& data) {
  const std::vector<std::uint64_t> seeds{7, 8, 9};
  const auto sets = default_ablation_sets();
  const auto rows = ablate(cfg, data, sets, seeds);
  int satisfied = 0;
  std::string detail;
  for (std::uint64_t seed : seeds) {
    double full = 0, no_cdd = 0, no_qsd = 0;
    for (const auto& row : rows) {
      if (row.seed != seed) continue;
      if (row.variant == "full") full = row.report.map_avg;
      if (row.variant == "no-cdd") no_cdd = row.report.map_avg;
      if (row.variant == "no-qsd") no_qsd = row.report.map_avg;
    }
    const bool ok = full > no_cdd && no_cdd > no_qsd && full - no_qsd >= 0.02;
    satisfied += ok ? 1 : 0;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%sseed %llu %.4f/%.4f/%.4f%s", detail.empty() ? "" : "; ",
                  static_cast<unsigned long long>(seed), full, no_cdd, no_qsd, ok ? "" : " x");
    detail += buf;
  }
  report(2 * satisfied > static_cast<int>(seeds.size()), "ablation-trend",
         "mAP full/no-cdd/no-qsd " + detail + " (" + std::to_string(satisfied) + "/3 ordered)");
}

void determinism(const RunConfig& base, const Split& data, const EndToEnd& e) {
  RunConfig cfg = base;
  cfg.epochs = 3;
  const auto a = train(cfg, data, Exec::kParallel);
  const auto b = train(cfg, data, Exec::kSerial);
  const auto ja = evaluate(a.best.params, cfg, data.val).report.to_json().dump();
  const auto jb = evaluate(b.best.params, cfg, data.val).report.to_json().dump();
  const bool repeat = ja == jb && a.log.csv() == b.log.csv() && a.best.params == b.best.params;

  const auto path = std::filesystem::temp_directory_path() / "cdnet_acceptance.ckpt";
  save_checkpoint(path, e.result.best);
  const Checkpoint ck = load_checkpoint(path);
  std::filesystem::remove(path);
  const Evaluation again = evaluate(ck.params, ck.config, data.val);
  const bool round_trip = ck.params == e.result.best.params &&
                          again.report.to_json().dump() == e.eval.report.to_json().dump() &&
                          again.loss.total == e.eval.loss.total && again.hits.with_offsets == e.eval.hits.with_offsets;
  report(repeat && round_trip, "determinism-and-persistence",
         std::string("repeat runs ") + (repeat ? "identical" : "differ") + ", checkpoint round trip " +
             (round_trip ? "exact" : "differs"));
}

}  // namespace

int main() {
  try {
    oracle_equivalence();
    gradient_suite();
    closed_form();

    CorpusConfig cc;  // pinned: T=32, 600 samples, seed 7
    auto samples = generate_corpus(cc);
    RunConfig cfg;  // pinned: d=64, 60 epochs, seed 7
    adopt_corpus_dims(cfg, samples);
    const Split data = split_corpus(std::move(samples), cfg.val_samples);
    std::printf("      pinned config: T=%d d=%d train %zu val %zu seed %llu\n", cc.clips, cfg.model.dim, data.train.size(),
                data.val.size(), static_cast<unsigned long long>(cfg.seed));

    zero_offset(cfg, data);
    const EndToEnd e = end_to_end(cfg, data);
    offset_trend(e);
    determinism(cfg, data, e);
    ablation(cfg, data);
  } catch (const std::exception& ex) {
    std::printf("FAIL  acceptance aborted: %s\n", ex.what());
    return 1;
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
