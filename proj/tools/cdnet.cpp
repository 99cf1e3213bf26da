// Command-line front end: corpus generation, training, evaluation and the
// report subcommands. Every output lands under the output directory
// (--output-dir, else $CDNET_OUTPUT_DIR, else ./runs).

#include "cdnet/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace cdnet;
using nlohmann::ordered_json;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kData = 3, kDiverged = 4 };

struct Failure : std::runtime_error {
  Failure(int code, std::string kind, const std::string& what) : std::runtime_error(what), code(code), kind(std::move(kind)) {}
  int code;
  std::string kind;
};

int report_error(int code, const std::string& kind, const std::string& message) {
  ordered_json j;
  j["error"] = kind;
  j["message"] = message;
  j["exit_code"] = code;
  std::cerr << j.dump() << std::endl;
  return code;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Failure(kData, "io_error", "cannot write " + path.string());
}

std::vector<std::uint64_t> parse_seeds(const std::string& list) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    RunConfig probe;
    probe.set("seed", item);
    out.push_back(probe.seed);
  }
  if (out.empty()) throw ConfigError("empty seed list");
  return out;
}

std::vector<int> parse_ints(const std::string& list) {
  std::vector<int> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    RunConfig probe;
    probe.set("r", item);
    out.push_back(probe.model.factor);
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

struct Common {
  std::string config_file;
  std::string output_dir;
  bool serial = false;
  std::map<std::string, std::string> overrides;

  Exec exec() const { return serial ? Exec::kSerial : Exec::kParallel; }

  fs::path out_dir() const {
    fs::path dir = output_dir;
    if (dir.empty()) {
      const char* env = std::getenv("CDNET_OUTPUT_DIR");
      dir = env && *env ? fs::path(env) : fs::path("runs");
    }
    fs::create_directories(dir);
    return dir;
  }

  RunConfig config(RunConfig base = {}) const {
    if (!config_file.empty()) apply_kv(base, read_kv_file(config_file));
    apply_kv(base, overrides);
    return base;
  }
};

// Registers one --key option per RunConfig field.
void add_run_options(CLI::App* cmd, Common& c) {
  for (const auto& key : RunConfig::keys()) {
    cmd->add_option_function<std::string>("--" + key, [&c, key](const std::string& v) { c.overrides[key] = v; },
                                          "override config key '" + key + "'");
  }
}

std::vector<CorpusSample> load_corpus(const std::string& path) {
  if (path.empty()) throw ConfigError("no corpus given (--corpus or 'corpus = ...' in the config)");
  try {
    return read_corpus(path);
  } catch (const ParseError& e) {
    throw Failure(kData, "corpus_parse_error", path + ":" + std::to_string(e.line()) + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw Failure(kData, "corpus_unreadable", e.what());
  }
}

Split load_split(RunConfig& cfg) {
  auto samples = load_corpus(cfg.corpus);
  adopt_corpus_dims(cfg, samples);
  return split_corpus(std::move(samples), cfg.val_samples);
}

Checkpoint load_ck(const std::string& path) {
  if (path.empty()) throw ConfigError("--checkpoint is required");
  try {
    return load_checkpoint(path);
  } catch (const std::exception& e) {
    throw Failure(kData, "checkpoint_unreadable", e.what());
  }
}

// Samples a checkpoint is evaluated on: the validation tail by default.
std::vector<CorpusSample> eval_samples(RunConfig& cfg, const std::string& split) {
  auto samples = load_corpus(cfg.corpus);
  adopt_corpus_dims(cfg, samples);
  if (split == "all") return samples;
  Split s = split_corpus(std::move(samples), cfg.val_samples);
  if (split == "train") return s.train;
  if (split == "val") return s.val;
  throw ConfigError("--split must be one of val, train, all");
}

void print_json(const ordered_json& j) { std::cout << j.dump(2) << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cdnet: synthetic video moment retrieval trainer"};
  app.require_subcommand(1);
  Common c;
  app.add_option("--output-dir", c.output_dir, "output directory (default $CDNET_OUTPUT_DIR or ./runs)");
  app.add_option("--config", c.config_file, "flat key = value config file; flags override it");
  app.add_flag("--serial", c.serial, "run the serial reference kernels instead of OpenMP");

  CorpusConfig corpus_cfg;
  std::string corpus_out = "corpus.jsonl";
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus as JSONL");
  gen->add_option("--clips", corpus_cfg.clips, "clips per video (T)");
  gen->add_option("--tokens", corpus_cfg.tokens, "query tokens (L)");
  gen->add_option("--video-dim", corpus_cfg.video_dim);
  gen->add_option("--query-dim", corpus_cfg.query_dim);
  gen->add_option("--samples", corpus_cfg.num_samples);
  gen->add_option("--distractors", corpus_cfg.num_distractors);
  gen->add_option("--noise", corpus_cfg.noise_sigma);
  gen->add_option("--seed", corpus_cfg.seed);
  gen->add_option("--out", corpus_out, "file name inside the output directory, or an absolute path");

  auto* train_cmd = app.add_subcommand("train", "train and keep the best-by-mAP checkpoint");
  add_run_options(train_cmd, c);

  std::string checkpoint, split = "val", pred_out = "predictions.jsonl";
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  auto* predict_cmd = app.add_subcommand("predict", "write ranked spans and saliency per sample");
  auto* offset_cmd = app.add_subcommand("offset-report", "per-point CDD offsets and hit rates");
  for (auto* cmd : {eval_cmd, predict_cmd, offset_cmd}) {
    cmd->add_option("--checkpoint", checkpoint)->required();
    cmd->add_option("--split", split, "val (default), train or all");
    cmd->add_option_function<std::string>("--corpus", [&c](const std::string& v) { c.overrides["corpus"] = v; },
                                          "corpus path (defaults to the one used for training)");
    cmd->add_option_function<std::string>("--nms_threshold", [&c](const std::string& v) { c.overrides["nms_threshold"] = v; });
  }
  predict_cmd->add_option("--out", pred_out);

  std::string seeds = "7,8,9", factors = "1,2,4,8";
  auto* ablate_cmd = app.add_subcommand("ablate", "retrain per ablation variant and seed");
  add_run_options(ablate_cmd, c);
  ablate_cmd->add_option("--seeds", seeds, "comma separated training seeds");
  auto* sweep_cmd = app.add_subcommand("sweep-r", "retrain across CDD down-sample factors");
  add_run_options(sweep_cmd, c);
  sweep_cmd->add_option("--factors", factors, "comma separated r values");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error(kUsage, "usage_error", e.what());
  }

  try {
    if (*gen) {
      const fs::path dir = c.out_dir();
      const fs::path out = fs::path(corpus_out).is_absolute() ? fs::path(corpus_out) : dir / corpus_out;
      const auto samples = generate_corpus(corpus_cfg, c.exec());
      write_corpus(out, samples);
      print_json({{"corpus", out.string()}, {"samples", samples.size()}});
      return kOk;
    }

    if (*train_cmd) {
      RunConfig cfg = c.config();
      const Split data = load_split(cfg);
      const fs::path dir = c.out_dir();
      const TrainResult r = train(cfg, data, c.exec(), [](const EpochLog& e) {
        std::cerr << "epoch " << e.epoch << " loss " << e.train_loss << " val mAP " << e.val_metrics.map_avg << " R1@0.5 "
                  << e.val_metrics.r1_05 << " HIT@1 " << e.val_metrics.hit_at_1 << std::endl;
      });
      save_checkpoint(dir / "best.ckpt", r.best);
      save_checkpoint(dir / "last.ckpt", r.last);
      write_text(dir / "best.ckpt.json", cfg.to_json().dump(2) + "\n");
      write_text(dir / "train_log.csv", r.log.csv());
      const Evaluation ev = evaluate(r.best.params, cfg, data.val, c.exec());
      ordered_json j;
      j["best_epoch"] = r.best.epoch;
      j["metrics"] = ev.report.to_json();
      j["hit_rate"] = ev.hits.with_offsets;
      j["hit_rate_baseline"] = ev.hits.baseline;
      write_text(dir / "metrics.json", j.dump(2) + "\n");
      print_json(j);
      return kOk;
    }

    if (*eval_cmd || *predict_cmd || *offset_cmd) {
      const Checkpoint ck = load_ck(checkpoint);
      RunConfig cfg = ck.config;
      apply_kv(cfg, c.overrides);
      const auto samples = eval_samples(cfg, split);
      const fs::path dir = c.out_dir();
      if (*eval_cmd) {
        const Evaluation ev = evaluate(ck.params, cfg, samples, c.exec());
        ordered_json j;
        j["metrics"] = ev.report.to_json();
        j["loss"] = {{"guidance", ev.loss.guidance}, {"focal", ev.loss.focal}, {"boundary", ev.loss.boundary},
                     {"total", ev.loss.total}};
        write_text(dir / "eval_metrics.json", j.dump(2) + "\n");
        print_json(j);
        return kOk;
      }
      const auto inf = infer_all(ck.params, cfg, samples, c.exec());
      if (*predict_cmd) {
        std::string text;
        for (std::size_t i = 0; i < samples.size(); ++i) text += prediction_line(samples[i].sample_id, inf[i]) + "\n";
        const fs::path out = fs::path(pred_out).is_absolute() ? fs::path(pred_out) : dir / pred_out;
        write_text(out, text);
        print_json({{"predictions", out.string()}, {"samples", samples.size()}});
        return kOk;
      }
      if (!cfg.model.flags.cdd) throw ConfigError("checkpoint was trained without CDD; no offsets to report");
      write_text(dir / "offsets.csv", offset_csv(samples, inf));
      std::vector<cdd::OffsetDiagnostics> diags;
      for (const auto& i : inf) diags.push_back(*i.offsets);
      const auto hits = cdd::offset_hit_rate(diags);
      ordered_json j;
      j["samples"] = hits.samples;
      j["hit_rate"] = hits.with_offsets;
      j["hit_rate_baseline"] = hits.baseline;
      j["absolute_gain"] = hits.with_offsets - hits.baseline;
      j["relative_gain"] = hits.baseline > 0 ? hits.with_offsets / hits.baseline - 1.0 : 0.0;
      j["reference_gain"] = 0.183;
      write_text(dir / "offset_report.json", j.dump(2) + "\n");
      print_json(j);
      return kOk;
    }

    if (*ablate_cmd) {
      RunConfig cfg = c.config();
      const Split data = load_split(cfg);
      const auto seed_list = parse_seeds(seeds);
      const auto sets = default_ablation_sets();
      const auto rows = ablate(cfg, data, sets, seed_list, c.exec());
      const fs::path dir = c.out_dir();
      write_text(dir / "ablation.csv", ablation_csv(rows));
      ordered_json j = ordered_json::array();
      for (const auto& r : rows) j.push_back({{"variant", r.variant}, {"seed", r.seed}, {"metrics", r.report.to_json()}});
      write_text(dir / "ablation.json", j.dump(2) + "\n");
      print_json(j);
      return kOk;
    }

    if (*sweep_cmd) {
      RunConfig cfg = c.config();
      const Split data = load_split(cfg);
      const auto rows = sweep_r(cfg, data, parse_ints(factors), c.exec());
      const fs::path dir = c.out_dir();
      write_text(dir / "sweep_r.csv", sweep_csv(rows));
      std::cout << sweep_csv(rows);
      return kOk;
    }
  } catch (const Failure& e) {
    return report_error(e.code, e.kind, e.what());
  } catch (const ConfigError& e) {
    return report_error(kUsage, "config_error", e.what());
  } catch (const DivergenceError& e) {
    return report_error(kDiverged, "diverged", e.what());
  } catch (const std::exception& e) {
    return report_error(kFailure, "internal_error", e.what());
  }
  return kFailure;
}
