#include "cdnet/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <memory>
#include <numeric>
#include <sstream>

namespace cdnet {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c) { return splitmix(splitmix(splitmix(a) ^ b) ^ c); }

constexpr std::uint64_t kShuffleStream = 0x5f0ff1eULL;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  return out;
}

long long parse_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError("'" + key + "' expects an integer, got '" + v + "'");
  return out;
}

int parse_small(const std::string& key, const std::string& v) {
  const long long x = parse_int(key, v);
  if (x < -(1LL << 30) || x > (1LL << 30)) throw ConfigError("'" + key + "' out of range");
  return static_cast<int>(x);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw ConfigError("'" + key + "' expects a boolean, got '" + v + "'");
}

std::string fmt(double x) {
  std::ostringstream o;
  o << std::setprecision(10) << x;
  return o.str();
}

std::vector<double> values(const Mat& m) { return std::vector<double>(m.data(), m.data() + m.size()); }

int center_clip(const MomentSpan& m) { return m.start + m.length() / 2; }

bool inter_active(const RunConfig& cfg) { return cfg.model.flags.inter && cfg.loss.guidance.inter > 0.0; }

// Sums per-sample gradient maps in index order.
GradMap reduce(std::vector<GradMap>& parts) {
  GradMap out;
  for (auto& part : parts) {
    for (auto& [name, g] : part) {
      auto it = out.find(name);
      if (it == out.end()) {
        out.emplace(name, std::move(g));
      } else {
        it->second += g;
      }
    }
  }
  return out;
}

struct SampleSlot {
  Tape tape;
  std::unique_ptr<Binding> binding;
  ForwardResult fwd;
  SampleLoss loss;
};

}  // namespace

// ---------------------------------------------------------------- config

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = {
      "corpus",       "val_samples", "video_dim",  "query_dim",     "dim",        "heads",         "blocks",
      "r",            "l",           "drop_path",  "gamma",         "lambda_inter", "lambda_intra", "lambda_l",
      "lambda_f",     "lambda_l1",   "lambda_iou", "temperature",   "lr",         "epochs",        "batch_size",
      "nms_threshold", "grad_clip",  "max_spans",  "seed",          "intra",      "inter",         "token",
      "relevance_mul", "cdd"};
  return k;
}

void RunConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "corpus") corpus = v;
  else if (key == "val_samples") val_samples = parse_small(key, v);
  else if (key == "video_dim") model.video_dim = parse_small(key, v);
  else if (key == "query_dim") model.query_dim = parse_small(key, v);
  else if (key == "dim") model.dim = parse_small(key, v);
  else if (key == "heads") model.heads = parse_small(key, v);
  else if (key == "blocks") model.blocks = parse_small(key, v);
  else if (key == "r") model.factor = parse_small(key, v);
  else if (key == "l") model.kernel = parse_small(key, v);
  else if (key == "drop_path") model.drop_path = parse_double(key, v);
  else if (key == "gamma") loss.gamma = parse_double(key, v);
  else if (key == "lambda_inter") loss.guidance.inter = parse_double(key, v);
  else if (key == "lambda_intra") loss.guidance.intra = parse_double(key, v);
  else if (key == "lambda_l") loss.guidance.token = parse_double(key, v);
  else if (key == "lambda_f") loss.focal_weight = parse_double(key, v);
  else if (key == "lambda_l1") loss.l1_weight = parse_double(key, v);
  else if (key == "lambda_iou") loss.iou_weight = parse_double(key, v);
  else if (key == "temperature") loss.temperature = parse_double(key, v);
  else if (key == "lr") lr = parse_double(key, v);
  else if (key == "epochs") epochs = parse_small(key, v);
  else if (key == "batch_size") batch_size = parse_small(key, v);
  else if (key == "nms_threshold") nms_threshold = parse_double(key, v);
  else if (key == "grad_clip") grad_clip = parse_double(key, v);
  else if (key == "max_spans") max_spans = parse_small(key, v);
  else if (key == "seed") {
    const long long s = parse_int(key, v);
    if (s < 0) throw ConfigError("'seed' must be >= 0");
    seed = static_cast<std::uint64_t>(s);
  } else if (key == "intra") model.flags.intra = parse_bool(key, v);
  else if (key == "inter") model.flags.inter = parse_bool(key, v);
  else if (key == "token") model.flags.token = parse_bool(key, v);
  else if (key == "relevance_mul") model.flags.relevance_mul = parse_bool(key, v);
  else if (key == "cdd") model.flags.cdd = parse_bool(key, v);
  else throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::validate() const {
  model.validate();
  loss.guidance.validate();
  if (val_samples < 1) throw ConfigError("val_samples must be >= 1");
  if (loss.focal_weight < 0 || loss.l1_weight < 0 || loss.iou_weight < 0) throw ConfigError("loss weights must be >= 0");
  if (!(loss.temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (loss.gamma < 0.0) throw ConfigError("gamma must be >= 0");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be a finite value >= 0");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (nms_threshold < 0.0 || nms_threshold > 1.0) throw ConfigError("nms_threshold must be in [0, 1]");
  if (grad_clip < 0.0) throw ConfigError("grad_clip must be >= 0");
  if (max_spans < 1) throw ConfigError("max_spans must be >= 1");
}

ordered_json RunConfig::to_json() const {
  ordered_json j;
  j["corpus"] = corpus;
  j["val_samples"] = val_samples;
  j["video_dim"] = model.video_dim;
  j["query_dim"] = model.query_dim;
  j["dim"] = model.dim;
  j["heads"] = model.heads;
  j["blocks"] = model.blocks;
  j["r"] = model.factor;
  j["l"] = model.kernel;
  j["drop_path"] = model.drop_path;
  j["gamma"] = loss.gamma;
  j["lambda_inter"] = loss.guidance.inter;
  j["lambda_intra"] = loss.guidance.intra;
  j["lambda_l"] = loss.guidance.token;
  j["lambda_f"] = loss.focal_weight;
  j["lambda_l1"] = loss.l1_weight;
  j["lambda_iou"] = loss.iou_weight;
  j["temperature"] = loss.temperature;
  j["lr"] = lr;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["nms_threshold"] = nms_threshold;
  j["grad_clip"] = grad_clip;
  j["max_spans"] = max_spans;
  j["seed"] = seed;
  j["intra"] = model.flags.intra;
  j["inter"] = model.flags.inter;
  j["token"] = model.flags.token;
  j["relevance_mul"] = model.flags.relevance_mul;
  j["cdd"] = model.flags.cdd;
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig cfg;
  for (const auto& [key, value] : j.items()) {
    cfg.set(key, value.is_string() ? value.get<std::string>() : value.dump());
  }
  return cfg;
}

std::map<std::string, std::string> read_kv_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(path.string() + ":" + std::to_string(n) + ": expected key = value");
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

void apply_kv(RunConfig& cfg, const std::map<std::string, std::string>& kv) {
  for (const auto& [k, v] : kv) cfg.set(k, v);
}

Split split_corpus(std::vector<CorpusSample> samples, int val_samples) {
  if (val_samples < 1 || static_cast<std::size_t>(val_samples) >= samples.size()) {
    throw ConfigError("corpus has " + std::to_string(samples.size()) + " samples, cannot hold out " +
                      std::to_string(val_samples) + " for validation");
  }
  Split s;
  const auto cut = samples.size() - static_cast<std::size_t>(val_samples);
  s.val.assign(std::make_move_iterator(samples.begin() + static_cast<std::ptrdiff_t>(cut)),
               std::make_move_iterator(samples.end()));
  samples.resize(cut);
  s.train = std::move(samples);
  return s;
}

void adopt_corpus_dims(RunConfig& cfg, const std::vector<CorpusSample>& samples) {
  if (samples.empty()) throw ConfigError("empty corpus");
  cfg.model.video_dim = static_cast<int>(samples.front().video.cols());
  cfg.model.query_dim = static_cast<int>(samples.front().query.cols());
  for (const auto& s : samples) {
    if (s.video.cols() != cfg.model.video_dim || s.query.cols() != cfg.model.query_dim) {
      throw ConfigError("corpus sample " + s.sample_id + " has inconsistent feature dims");
    }
  }
}

// ---------------------------------------------------------------- checkpoint

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");
  ordered_json manifest;
  manifest["format"] = "cdnet-checkpoint";
  manifest["epoch"] = ck.epoch;
  manifest["val_map"] = ck.val_map;
  manifest["rng_seed"] = ck.rng_seed;
  manifest["config"] = ck.config.to_json();
  ordered_json tensors = ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, m] : ck.params) {
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(m.size());
  }
  manifest["tensors"] = std::move(tensors);
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
  const std::uint32_t version = 1;
  const std::uint64_t bytes = text.size();
  out.write("CDNETCK1", 8);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&bytes), sizeof bytes);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [_, m] : ck.params) {
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t bytes = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&bytes), sizeof bytes);
  if (!in || std::memcmp(magic, "CDNETCK1", 8) != 0) throw std::runtime_error("not a checkpoint: " + path.string());
  if (version != 1) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  if (bytes > (1ULL << 30)) throw std::runtime_error("corrupt checkpoint manifest length");
  std::string text(bytes, '\0');
  in.read(text.data(), static_cast<std::streamsize>(bytes));
  if (!in) throw std::runtime_error("truncated checkpoint manifest");
  const json manifest = json::parse(text);

  Checkpoint ck;
  ck.epoch = manifest.at("epoch").get<int>();
  ck.val_map = manifest.at("val_map").get<double>();
  ck.rng_seed = manifest.at("rng_seed").get<std::uint64_t>();
  ck.config = RunConfig::from_json(manifest.at("config"));
  std::uint64_t expected = 0;
  for (const auto& t : manifest.at("tensors")) {
    if (t.at("offset").get<std::uint64_t>() != expected) throw std::runtime_error("checkpoint tensors out of order");
    Mat m(t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>());
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw std::runtime_error("truncated checkpoint data");
    expected += static_cast<std::uint64_t>(m.size());
    ck.params.set(t.at("name").get<std::string>(), std::move(m));
  }
  return ck;
}

// ---------------------------------------------------------------- training

StepResult batch_gradients(const ParamStore& params, const RunConfig& cfg, std::span<const CorpusSample* const> batch,
                           std::span<const std::uint64_t> sample_seeds, Exec exec) {
  if (batch.empty() || batch.size() != sample_seeds.size()) throw ValueError("batch_gradients: bad batch");
  const auto n = static_cast<std::int64_t>(batch.size());
  const double inv_b = 1.0 / static_cast<double>(n);
  std::vector<std::unique_ptr<SampleSlot>> slots(batch.size());

  for_each_index(n, exec, [&](std::int64_t i) {
    auto slot = std::make_unique<SampleSlot>();
    const CorpusSample& s = *batch[static_cast<std::size_t>(i)];
    std::mt19937_64 rng(sample_seeds[static_cast<std::size_t>(i)]);
    const int positive = std::uniform_int_distribution<int>(s.moment.start, s.moment.end - 1)(rng);
    slot->binding = std::make_unique<Binding>(slot->tape, params, true);
    slot->fwd = forward(slot->tape, *slot->binding, cfg.model, s, true, rng);
    slot->loss = sample_loss(slot->tape, slot->fwd, s, positive, cfg.model, cfg.loss);
    slots[static_cast<std::size_t>(i)] = std::move(slot);
  });

  double loss = 0.0;
  for (const auto& slot : slots) loss += slot->tape.scalar(slot->loss.local) * inv_b;

  // The inter loss couples the batch: evaluate it on its own tape over
  // copies of v^p and Q^g, then push its gradients back into each sample.
  std::vector<Mat> gp(batch.size()), gq(batch.size());
  const bool inter = inter_active(cfg) && n >= 2;
  if (inter) {
    Tape t;
    std::vector<qsd::GuidanceVars> vars;
    for (const auto& slot : slots) {
      qsd::GuidanceVars g;
      g.positive = t.leaf(slot->tape.value(slot->loss.positive));
      g.global_query = t.leaf(slot->tape.value(slot->fwd.global_query));
      vars.push_back(g);
    }
    Var l = ops::scale(t, qsd::inter_contrastive_loss(t, vars, cfg.loss.temperature), cfg.loss.guidance.inter);
    t.backward(l);
    loss += t.scalar(l);
    for (std::size_t i = 0; i < vars.size(); ++i) {
      gp[i] = t.grad(vars[i].positive);
      gq[i] = t.grad(vars[i].global_query);
    }
  }

  std::vector<GradMap> parts(batch.size());
  for_each_index(n, exec, [&](std::int64_t i) {
    SampleSlot& slot = *slots[static_cast<std::size_t>(i)];
    std::vector<std::pair<Var, Mat>> seeds;
    seeds.emplace_back(slot.loss.local, Mat::Constant(1, 1, inv_b));
    if (inter) {
      seeds.emplace_back(slot.loss.positive, gp[static_cast<std::size_t>(i)]);
      seeds.emplace_back(slot.fwd.global_query, gq[static_cast<std::size_t>(i)]);
    }
    slot.tape.backward(seeds);
    parts[static_cast<std::size_t>(i)] = slot.binding->grads();
    slots[static_cast<std::size_t>(i)].reset();
  });

  return {loss, reduce(parts)};
}

std::string TrainLog::csv_header() {
  return "epoch,train_loss,val_inter,val_intra,val_token,val_guidance,val_focal,val_boundary,val_total," +
         metrics::MetricReport::csv_header() + ",hit_rate,hit_rate_baseline";
}

std::string TrainLog::csv() const {
  std::ostringstream o;
  o << csv_header() << '\n';
  for (const auto& e : epochs) {
    const auto& l = e.val_loss;
    o << e.epoch << ',' << fmt(e.train_loss) << ',' << fmt(l.inter) << ',' << fmt(l.intra) << ',' << fmt(l.token) << ','
      << fmt(l.guidance) << ',' << fmt(l.focal) << ',' << fmt(l.boundary) << ',' << fmt(l.total) << ','
      << e.val_metrics.csv_row() << ',' << fmt(e.hits.with_offsets) << ',' << fmt(e.hits.baseline) << '\n';
  }
  return o.str();
}

TrainResult train(const RunConfig& cfg, const Split& data, Exec exec, const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.train.empty() || data.val.empty()) throw ConfigError("train and validation splits must be non-empty");
  TrainResult result;
  Checkpoint current{init_params(cfg.model, cfg.seed), cfg, 0, 0.0, cfg.seed};
  result.best = current;
  bool have_best = false;
  Adam adam(cfg.lr);

  const std::size_t n = data.train.size();
  std::vector<std::size_t> order(n);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(mix(cfg.seed, static_cast<std::uint64_t>(epoch), kShuffleStream));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < n; begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(n, begin + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const CorpusSample*> batch;
      std::vector<std::uint64_t> seeds;
      for (std::size_t k = begin; k < end; ++k) {
        batch.push_back(&data.train[order[k]]);
        seeds.push_back(mix(cfg.seed, static_cast<std::uint64_t>(epoch), order[k]));
      }
      StepResult step = batch_gradients(current.params, cfg, batch, seeds, exec);
      const double norm = global_norm(step.grads);
      if (!std::isfinite(step.loss) || !std::isfinite(norm)) {
        std::ostringstream msg;
        msg << "non-finite training loss at epoch " << epoch << ", batch " << batches << " (loss " << step.loss
            << ", grad norm " << norm << ")";
        throw DivergenceError(msg.str());
      }
      clip_global_norm(step.grads, cfg.grad_clip);
      adam.step(current.params, step.grads);
      epoch_loss += step.loss;
      ++batches;
    }

    const Evaluation ev = evaluate(current.params, cfg, data.val, exec);
    EpochLog log{epoch, epoch_loss / static_cast<double>(batches), ev.loss, ev.report, ev.hits};
    result.log.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
    current.epoch = epoch;
    current.val_map = ev.report.map_avg;
    if (!have_best || ev.report.map_avg > result.best.val_map) {
      result.best = current;
      have_best = true;
    }
  }
  result.last = current;
  return result;
}

// ---------------------------------------------------------------- inference

Inference infer(const ParamStore& params, const RunConfig& cfg, const CorpusSample& sample) {
  Tape t;
  Binding b(t, params, false);
  std::mt19937_64 rng(0);  // unused: drop path is off outside training
  const ForwardResult f = forward(t, b, cfg.model, sample, false, rng);
  const int T = static_cast<int>(sample.video.rows());

  Inference out;
  out.confidence = values(t.value(f.confidence));
  out.saliency = values(t.value(f.relevance));
  const Mat& bound = t.value(f.boundary);
  std::vector<grounding::ClipPrediction> preds;
  for (int c = 0; c < T; ++c) preds.push_back({c, out.confidence[static_cast<std::size_t>(c)], bound(c, 0), bound(c, 1)});
  auto ranked = grounding::decode_spans(preds, T);
  out.spans = grounding::nms(ranked, cfg.nms_threshold);
  if (out.spans.size() > static_cast<std::size_t>(cfg.max_spans)) out.spans.resize(static_cast<std::size_t>(cfg.max_spans));

  if (f.cdd) {
    cdd::OffsetDiagnostics d;
    d.reference = cdd::make_grid(T, cfg.model.factor).index;
    d.sampled = values(t.value(f.cdd->positions));
    d.offsets = values(t.value(f.cdd->offsets));
    d.moment = sample.moment;
    out.offsets = std::move(d);
  }

  const int pos = center_clip(sample.moment);
  const Mat& video = t.value(f.video);
  std::vector<int> outside;
  for (int c = 0; c < T; ++c) {
    if (!sample.moment.contains(c)) outside.push_back(c);
  }
  out.guidance.positive = video.row(pos);
  out.guidance.negatives = video(outside, Eigen::all);
  out.guidance.global_query = t.value(f.global_query);
  out.guidance.guided_text = t.value(f.guided_text);
  out.guidance.positive_index = pos;

  out.focal = grounding::focal_loss(out.confidence, moment_mask(sample), cfg.loss.gamma, cfg.loss.focal_weight);
  out.boundary = grounding::boundary_loss(bound, sample.moment, cfg.loss.l1_weight, cfg.loss.iou_weight);
  return out;
}

std::vector<Inference> infer_all(const ParamStore& params, const RunConfig& cfg, std::span<const CorpusSample> samples,
                                 Exec exec) {
  std::vector<Inference> out(samples.size());
  for_each_index(static_cast<std::int64_t>(samples.size()), exec,
                 [&](std::int64_t i) { out[static_cast<std::size_t>(i)] = infer(params, cfg, samples[static_cast<std::size_t>(i)]); });
  return out;
}

Evaluation evaluate(const ParamStore& params, const RunConfig& cfg, std::span<const CorpusSample> samples, Exec exec) {
  if (samples.empty()) throw ValueError("evaluate: no samples");
  const auto inf = infer_all(params, cfg, samples, exec);
  std::vector<metrics::EvalRecord> records;
  qsd::GuidanceBatch guidance;
  std::vector<cdd::OffsetDiagnostics> diags;
  Evaluation ev;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    records.push_back({s.sample_id, inf[i].spans, s.moment, inf[i].saliency, s.saliency});
    guidance.push_back(inf[i].guidance);
    if (inf[i].offsets) diags.push_back(*inf[i].offsets);
    ev.loss.focal += inf[i].focal;
    ev.loss.boundary += inf[i].boundary;
  }
  ev.report = metrics::evaluate_records(records, exec);
  const double inv = 1.0 / static_cast<double>(samples.size());
  ev.loss.focal *= inv;
  ev.loss.boundary *= inv;
  const auto g = qsd::guidance_components(guidance, cfg.loss.temperature);
  ev.loss.inter = g.inter;
  ev.loss.intra = g.intra;
  ev.loss.token = g.token;
  const auto& f = cfg.model.flags;
  const auto& w = cfg.loss.guidance;
  ev.loss.guidance = (f.inter ? w.inter * g.inter : 0.0) + (f.intra ? w.intra * g.intra : 0.0) +
                     (f.token ? w.token * g.token : 0.0);
  ev.loss.total = grounding::total_loss(ev.loss.guidance, ev.loss.focal, ev.loss.boundary);
  if (!diags.empty()) ev.hits = cdd::offset_hit_rate(diags);
  return ev;
}

std::string prediction_line(const std::string& sample_id, const Inference& inf) {
  ordered_json j;
  j["sample_id"] = sample_id;
  ordered_json spans = ordered_json::array();
  for (const auto& s : inf.spans) spans.push_back({{"start", s.start}, {"end", s.end}, {"score", s.score}});
  j["spans"] = std::move(spans);
  j["saliency"] = inf.saliency;
  j["confidence"] = inf.confidence;
  return j.dump();
}

std::string offset_csv(std::span<const CorpusSample> samples, std::span<const Inference> inf) {
  std::ostringstream o;
  o << "sample_id,point,reference,offset,sampled,moment_start,moment_end,reference_hit,sampled_hit\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!inf[i].offsets) continue;
    const auto& d = *inf[i].offsets;
    for (std::size_t p = 0; p < d.reference.size(); ++p) {
      const auto hit = [&](double x) { return x >= d.moment.start && x < d.moment.end ? 1 : 0; };
      o << samples[i].sample_id << ',' << p << ',' << fmt(d.reference[p]) << ',' << fmt(d.offsets[p]) << ','
        << fmt(d.sampled[p]) << ',' << d.moment.start << ',' << d.moment.end << ',' << hit(d.reference[p]) << ','
        << hit(d.sampled[p]) << '\n';
    }
  }
  return o.str();
}

// ---------------------------------------------------------------- sweeps

std::vector<NamedFlags> default_ablation_sets() {
  AblationFlags full;
  AblationFlags no_cdd = full;
  no_cdd.cdd = false;
  AblationFlags none{false, false, false, false, false};
  return {{"full", full}, {"no-cdd", no_cdd}, {"no-qsd", none}};
}

std::vector<AblationRow> ablate(const RunConfig& cfg, const Split& data, std::span<const NamedFlags> sets,
                                std::span<const std::uint64_t> seeds, Exec exec) {
  std::vector<AblationRow> rows;
  for (std::uint64_t seed : seeds) {
    for (const auto& set : sets) {
      RunConfig c = cfg;
      c.seed = seed;
      c.model.flags = set.flags;
      const TrainResult r = train(c, data, exec);
      rows.push_back({set.name, set.flags, seed, evaluate(r.best.params, c, data.val, exec).report});
    }
  }
  return rows;
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::ostringstream o;
  o << "variant,seed,intra,inter,token,relevance_mul,cdd," << metrics::MetricReport::csv_header() << '\n';
  for (const auto& r : rows) {
    const auto& f = r.flags;
    o << r.variant << ',' << r.seed << ',' << f.intra << ',' << f.inter << ',' << f.token << ',' << f.relevance_mul << ','
      << f.cdd << ',' << r.report.csv_row() << '\n';
  }
  return o.str();
}

std::vector<SweepRow> sweep_r(const RunConfig& cfg, const Split& data, std::span<const int> factors, Exec exec) {
  std::vector<SweepRow> rows;
  for (int r : factors) {
    RunConfig c = cfg;
    c.model.factor = r;
    const TrainResult res = train(c, data, exec);
    const Evaluation ev = evaluate(res.best.params, c, data.val, exec);
    rows.push_back({r, ev.report, ev.hits});
  }
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::ostringstream o;
  o << "r," << metrics::MetricReport::csv_header() << ",hit_rate,hit_rate_baseline\n";
  for (const auto& r : rows) {
    o << r.factor << ',' << r.report.csv_row() << ',' << fmt(r.hits.with_offsets) << ',' << fmt(r.hits.baseline) << '\n';
  }
  return o.str();
}

}  // namespace cdnet
