#include "oracles.hpp"

#include "cdnet/train.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace cdnet;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("cdnet_test_" + name);
}

// A small but complete setup: T=16, d=16, 48 train / 16 val samples.
struct Small {
  RunConfig cfg;
  Split data;
};

Small small_setup(double noise = 0.05, int epochs = 2) {
  CorpusConfig cc;
  cc.clips = 16;
  cc.tokens = 4;
  cc.video_dim = 12;
  cc.query_dim = 12;
  cc.num_samples = 64;
  cc.noise_sigma = noise;
  Small s;
  auto samples = generate_corpus(cc);
  adopt_corpus_dims(s.cfg, samples);
  s.cfg.val_samples = 16;
  s.cfg.model.dim = 16;
  s.cfg.model.heads = 2;
  s.cfg.model.blocks = 1;
  s.cfg.batch_size = 8;
  s.cfg.epochs = epochs;
  s.data = split_corpus(std::move(samples), s.cfg.val_samples);
  return s;
}

}  // namespace

TEST_CASE("config: keys, flags, booleans, json round trip") {
  RunConfig cfg;
  CHECK(cfg.model.dim == 64);
  CHECK(cfg.model.heads == 4);
  CHECK(cfg.model.blocks == 2);
  CHECK(cfg.model.factor == 4);
  CHECK(cfg.batch_size == 32);
  CHECK(cfg.nms_threshold == 0.7);
  CHECK(cfg.loss.gamma == 2.0);
  CHECK(cfg.loss.guidance.inter == 0.1);
  for (const auto& key : RunConfig::keys()) CHECK(cfg.to_json().contains(key));
  CHECK(cfg.to_json().size() == RunConfig::keys().size());

  cfg.set("dim", "32");
  cfg.set("r", "2");
  cfg.set("cdd", "off");
  cfg.set("intra", "0");
  cfg.set("token", "yes");
  cfg.set("lambda_inter", "0.25");
  cfg.set("seed", "99");
  CHECK(cfg.model.dim == 32);
  CHECK(cfg.model.factor == 2);
  CHECK(!cfg.model.flags.cdd);
  CHECK(!cfg.model.flags.intra);
  CHECK(cfg.model.flags.token);
  CHECK(cfg.loss.guidance.inter == 0.25);
  CHECK(cfg.seed == 99);
  const RunConfig back = RunConfig::from_json(nlohmann::json::parse(cfg.to_json().dump()));
  CHECK(back.to_json() == cfg.to_json());

  CHECK_THROWS_AS(cfg.set("nonsense", "1"), ConfigError);
  CHECK_THROWS_AS(cfg.set("dim", "3x"), ConfigError);
  CHECK_THROWS_AS(cfg.set("cdd", "maybe"), ConfigError);
  RunConfig bad;
  bad.lr = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = {};
  bad.loss.guidance.intra = -0.1;
  CHECK_THROWS(bad.validate());
  bad = {};
  bad.model.dim = 30;  // not divisible by 4 heads
  CHECK_THROWS(bad.validate());
}

TEST_CASE("config file: comments, overrides, malformed lines") {
  const auto p = temp_path("cfg.txt");
  {
    std::ofstream out(p);
    out << "# toy run\n  epochs = 5   # inline comment\nlr=0.01\n\nrelevance_mul = false\n";
  }
  RunConfig cfg;
  apply_kv(cfg, read_kv_file(p));
  CHECK(cfg.epochs == 5);
  CHECK(cfg.lr == 0.01);
  CHECK(!cfg.model.flags.relevance_mul);
  cfg.set("epochs", "7");  // flags are applied after the file
  CHECK(cfg.epochs == 7);
  {
    std::ofstream out(p);
    out << "epochs = 5\nthis line is broken\n";
  }
  try {
    read_kv_file(p);
    FAIL("malformed config accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  CHECK_THROWS_AS(read_kv_file(temp_path("absent.txt")), ConfigError);
  std::filesystem::remove(p);
}

TEST_CASE("parameter count matches the closed form") {
  ModelConfig cfg;
  cfg.video_dim = 32;
  cfg.query_dim = 32;
  // d=64, h=4, N=2, l=3, worked out layer by layer:
  //   inputs 2*(32*64+64)=4224; qsd 65+3*16640=49985; cdd 4096+16640+12352+64=33152;
  //   localizer 128+2*(16640+8320+8256)=66560; heads 24769+24834.
  const std::size_t hand = 4224 + 49985 + 33152 + 66560 + 24769 + 24834;
  CHECK(init_params(cfg, 1).scalar_count() == hand);
  CHECK(expected_param_count(cfg) == hand);
  cfg.dim = 32;
  cfg.blocks = 3;
  cfg.kernel = 5;
  CHECK(init_params(cfg, 1).scalar_count() == expected_param_count(cfg));
  CHECK(init_params(cfg, 5) == init_params(cfg, 5));
  CHECK(!(init_params(cfg, 5) == init_params(cfg, 6)));
}

TEST_CASE("serial and parallel batch gradients are identical") {
  auto s = small_setup();
  const ParamStore params = init_params(s.cfg.model, 3);
  std::vector<const CorpusSample*> batch;
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < 8; ++i) {
    batch.push_back(&s.data.train[i]);
    seeds.push_back(100 + i);
  }
  const StepResult a = batch_gradients(params, s.cfg, batch, seeds, Exec::kSerial);
  const StepResult b = batch_gradients(params, s.cfg, batch, seeds, Exec::kParallel);
  CHECK(a.loss == b.loss);
  REQUIRE(a.grads.size() == b.grads.size());
  for (const auto& [name, g] : a.grads) CHECK(g == b.grads.at(name));
  CHECK(a.grads.size() == params.size());

  const auto ia = infer_all(params, s.cfg, s.data.val, Exec::kSerial);
  const auto ib = infer_all(params, s.cfg, s.data.val, Exec::kParallel);
  for (std::size_t i = 0; i < ia.size(); ++i) {
    CHECK(ia[i].spans == ib[i].spans);
    CHECK(ia[i].saliency == ib[i].saliency);
  }
  CHECK(evaluate(params, s.cfg, s.data.val, Exec::kSerial).report == evaluate(params, s.cfg, s.data.val, Exec::kParallel).report);
}

TEST_CASE("relevance_mul off is multiplication by ones") {
  auto s = small_setup();
  RunConfig cfg = s.cfg;
  cfg.model.flags.relevance_mul = false;
  const ParamStore params = init_params(cfg.model, 4);
  Tape t;
  Binding b(t, params, false);
  std::mt19937_64 rng(0);
  const auto f = forward(t, b, cfg.model, s.data.val[0], false, rng);
  const Mat ones_scaled = t.value(qsd::disentangle(t, f.context, t.constant(Mat::Ones(16, 1))));
  CHECK(t.value(f.disentangled) == ones_scaled);
  cfg.model.flags.relevance_mul = true;
  const auto g = forward(t, b, cfg.model, s.data.val[0], false, rng);
  CHECK(t.value(g.disentangled) == t.value(qsd::disentangle(t, g.context, g.relevance)));
}

TEST_CASE("epochs = 0 returns the initialization with an empty log") {
  auto s = small_setup(0.05, 0);
  const TrainResult r = train(s.cfg, s.data);
  CHECK(r.log.epochs.empty());
  CHECK(r.best.params == init_params(s.cfg.model, s.cfg.seed));
  CHECK(r.last.params == r.best.params);
  CHECK(r.best.epoch == 0);
}

TEST_CASE("lr = 0 keeps parameters and validation losses constant") {
  auto s = small_setup(0.05, 3);
  s.cfg.lr = 0.0;
  const TrainResult r = train(s.cfg, s.data);
  REQUIRE(r.log.epochs.size() == 3);
  CHECK(r.last.params == init_params(s.cfg.model, s.cfg.seed));
  for (const auto& e : r.log.epochs) {
    CHECK(e.val_loss.total == r.log.epochs[0].val_loss.total);
    CHECK(e.val_metrics == r.log.epochs[0].val_metrics);
  }
  CHECK(r.log.epochs[0].epoch == 1);
  CHECK(r.log.epochs[2].epoch == 3);
}

TEST_CASE("training is deterministic and checkpoints round-trip exactly") {
  auto s = small_setup(0.05, 2);
  const TrainResult a = train(s.cfg, s.data, Exec::kParallel);
  const TrainResult b = train(s.cfg, s.data, Exec::kSerial);
  CHECK(a.log.csv() == b.log.csv());
  CHECK(a.best.params == b.best.params);
  const auto before = evaluate(a.best.params, s.cfg, s.data.val);

  const auto p = temp_path("round.ckpt");
  save_checkpoint(p, a.best);
  const Checkpoint ck = load_checkpoint(p);
  CHECK(ck.params == a.best.params);
  CHECK(ck.epoch == a.best.epoch);
  CHECK(ck.val_map == a.best.val_map);
  CHECK(ck.rng_seed == a.best.rng_seed);
  CHECK(ck.config.to_json() == a.best.config.to_json());
  const auto after = evaluate(ck.params, ck.config, s.data.val);
  CHECK(after.report == before.report);
  CHECK(after.report.to_json().dump() == before.report.to_json().dump());
  CHECK(after.loss.total == before.loss.total);

  {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << "garbage";
  }
  CHECK_THROWS(load_checkpoint(p));
  std::filesystem::remove(p);
  CHECK_THROWS(load_checkpoint(temp_path("absent.ckpt")));
}

TEST_CASE("training a noiseless corpus separates moment relevance from background") {
  auto s = small_setup(0.0, 6);
  s.cfg.lr = 3e-3;
  const TrainResult r = train(s.cfg, s.data);
  double moment = 0, background = 0;
  int nm = 0, nb = 0;
  for (const auto& sample : s.data.val) {
    const Inference inf = infer(r.last.params, s.cfg, sample);
    for (int c = 0; c < 16; ++c) {
      if (sample.moment.contains(c)) {
        moment += inf.saliency[static_cast<std::size_t>(c)];
        ++nm;
      } else if (sample.saliency.scores[static_cast<std::size_t>(c)] == 0) {
        background += inf.saliency[static_cast<std::size_t>(c)];
        ++nb;
      }
    }
  }
  CHECK(moment / nm > background / nb);
}

TEST_CASE("prediction lines and offset CSV") {
  auto s = small_setup();
  const ParamStore params = init_params(s.cfg.model, 2);
  const auto inf = infer_all(params, s.cfg, s.data.val);
  const auto j = nlohmann::json::parse(prediction_line(s.data.val[0].sample_id, inf[0]));
  CHECK(j.at("sample_id") == s.data.val[0].sample_id);
  CHECK(j.at("saliency").size() == 16);
  CHECK(j.at("spans").size() <= static_cast<std::size_t>(s.cfg.max_spans));
  for (const auto& span : j.at("spans")) CHECK(span.at("end").get<double>() > span.at("start").get<double>());
  const std::string csv = offset_csv(s.data.val, inf);
  CHECK(csv.rfind("sample_id,point,reference,offset,sampled,moment_start,moment_end,reference_hit,sampled_hit", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 16 * 4);
}

TEST_CASE("Adam and gradient clipping") {
  ParamStore p;
  p.set("w", Mat::Constant(1, 2, 1.0));
  GradMap g{{"w", Mat::Constant(1, 2, 3.0)}};
  Adam adam(0.1);
  adam.step(p, g);
  // First bias-corrected step moves each coordinate by lr * sign(g).
  CHECK(p.at("w")(0, 0) == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(global_norm(g) == doctest::Approx(std::sqrt(18.0)));
  clip_global_norm(g, 1.0);
  CHECK(global_norm(g) == doctest::Approx(1.0));
  GradMap h = g;
  clip_global_norm(h, 0.0);
  CHECK(h == g);
}

TEST_CASE("split and dims") {
  CorpusConfig cc;
  cc.num_samples = 10;
  auto samples = generate_corpus(cc);
  const auto ids = samples;
  const Split s = split_corpus(samples, 3);
  CHECK(s.train.size() == 7);
  CHECK(s.val.front().sample_id == ids[7].sample_id);
  CHECK_THROWS_AS(split_corpus(ids, 10), ConfigError);
  RunConfig cfg;
  CHECK_THROWS_AS(adopt_corpus_dims(cfg, {}), ConfigError);
}
