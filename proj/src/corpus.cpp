#include "cdnet/corpus.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

namespace cdnet {
namespace {

using nlohmann::json;

// Weight of the orthogonal background component mixed into the first and
// last clip of a moment (the grade-3 transition clips).
constexpr double kEdgeBlend = 1.0;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t stream) { return splitmix64(splitmix64(seed) ^ stream); }

Mat gaussian(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// rows x cols matrix with orthonormal columns (rows >= cols).
Mat orthonormal_columns(int rows, int cols, std::mt19937_64& rng) {
  Eigen::MatrixXd g = gaussian(rows, cols, rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
  return q;
}

struct Embeddings {
  Mat video;  // d_v x latent
  Mat query;  // d_q x latent
};

int latent_dim(const CorpusConfig& cfg) { return std::min(cfg.video_dim, cfg.query_dim); }

Embeddings corpus_embeddings(const CorpusConfig& cfg) {
  std::mt19937_64 rng(sub_seed(cfg.seed, 0xE3BEDULL));
  const int k = latent_dim(cfg);
  Embeddings e;
  e.video = orthonormal_columns(cfg.video_dim, k, rng);
  e.query = cfg.query_dim == cfg.video_dim ? e.video : orthonormal_columns(cfg.query_dim, k, rng);
  return e;
}

void normalize_rows(Mat& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (n > 0.0) m.row(i) /= n;
  }
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

Vec background_direction(const Mat& parts, std::mt19937_64& rng) {
  const auto dim = parts.rows();
  Vec v = gaussian(static_cast<int>(dim), 1, rng).col(0);
  if (parts.cols() < dim) v -= parts * (parts.transpose() * v);
  const double n = v.norm();
  return n > 0.0 ? Vec(v / n) : v;
}

json span_json(const MomentSpan& s) { return json{{"start", s.start}, {"end", s.end}}; }

json matrix_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Mat matrix_from_json(const json& j, const char* key, std::size_t line_no) {
  if (!j.is_array()) throw ParseError(line_no, std::string("'") + key + "' must be a list of rows");
  const auto rows = j.size();
  const auto cols = rows == 0 ? 0 : j[0].size();
  Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    if (!j[i].is_array() || j[i].size() != cols) {
      throw ParseError(line_no, std::string("'") + key + "' rows have inconsistent lengths");
    }
    for (std::size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = j[i][c].get<double>();
  }
  return m;
}

MomentSpan span_from_json(const json& j, std::size_t line_no) {
  MomentSpan s{j.at("start").get<int>(), j.at("end").get<int>()};
  if (s.start < 0 || s.end <= s.start) throw ParseError(line_no, "span must satisfy 0 <= start < end");
  return s;
}

}  // namespace

bool spans_overlap(const MomentSpan& a, const MomentSpan& b) { return a.start < b.end && b.start < a.end; }

void CorpusConfig::validate() const {
  if (clips < 8) throw ConfigError("clips (T) must be >= 8");
  if (tokens < 1) throw ConfigError("tokens (L) must be >= 1");
  if (video_dim < 4 || query_dim < 4) throw ConfigError("feature dims must be >= 4");
  if (num_samples < 0) throw ConfigError("num_samples must be >= 0");
  if (num_distractors < 0) throw ConfigError("num_distractors must be >= 0");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
}

int concept_parts(const CorpusConfig& cfg) { return std::clamp(latent_dim(cfg) / 2, 2, 4); }

CorpusSample generate_sample(const CorpusConfig& cfg, std::int64_t index) {
  cfg.validate();
  const Embeddings emb = corpus_embeddings(cfg);
  std::mt19937_64 rng(sub_seed(cfg.seed, static_cast<std::uint64_t>(index) + 1));
  std::normal_distribution<double> noise(0.0, 1.0);

  const int T = cfg.clips;
  const int K = concept_parts(cfg);
  const int latent = latent_dim(cfg);
  const Mat parts = orthonormal_columns(latent, K, rng);  // latent x K

  CorpusSample s;
  std::ostringstream id;
  id << "s" << cfg.seed << "-" << std::setw(5) << std::setfill('0') << index;
  s.sample_id = id.str();

  const int len = uniform_int(rng, 2, T / 2);
  const int start = uniform_int(rng, 0, T - len);
  s.moment = MomentSpan{start, start + len};

  std::vector<std::vector<int>> subsets;
  for (int d = 0; d < cfg.num_distractors; ++d) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      const int dlen = uniform_int(rng, 2, std::max(2, T / 4));
      const int dstart = uniform_int(rng, 0, T - dlen);
      MomentSpan cand{dstart, dstart + dlen};
      bool clash = spans_overlap(cand, s.moment);
      for (const auto& other : s.distractors) clash = clash || spans_overlap(cand, other);
      if (clash) continue;
      s.distractors.push_back(cand);
      std::vector<int> order(K);
      for (int k = 0; k < K; ++k) order[k] = k;
      std::shuffle(order.begin(), order.end(), rng);
      order.resize(uniform_int(rng, 1, std::max(1, K / 2)));
      subsets.push_back(std::move(order));
      break;
    }
  }

  Mat latent_rows(T, latent);
  s.saliency.scores.assign(T, 0);
  const Vec concept_dir = parts.rowwise().sum() / std::sqrt(static_cast<double>(K));
  for (int t = 0; t < T; ++t) {
    const Vec bg = background_direction(parts, rng);
    Vec row = bg;
    if (s.moment.contains(t)) {
      const bool edge = len >= 3 && (t == s.moment.start || t == s.moment.end - 1);
      row = edge ? Vec(concept_dir + kEdgeBlend * bg) : concept_dir;
      s.saliency.scores[t] = edge ? kMaxGrade - 1 : kMaxGrade;
    } else {
      for (std::size_t d = 0; d < s.distractors.size(); ++d) {
        if (!s.distractors[d].contains(t)) continue;
        Vec partial = Vec::Zero(latent);
        for (int k : subsets[d]) partial += parts.col(k);
        row = partial / std::sqrt(static_cast<double>(subsets[d].size()));
        s.saliency.scores[t] = 2 * static_cast<int>(subsets[d].size()) >= K ? 2 : 1;
      }
    }
    latent_rows.row(t) = row.transpose();
  }

  s.video = latent_rows * emb.video.transpose();
  for (Eigen::Index i = 0; i < s.video.size(); ++i) s.video.data()[i] += cfg.noise_sigma * noise(rng);
  normalize_rows(s.video);

  s.query.resize(cfg.tokens, cfg.query_dim);
  for (int j = 0; j < cfg.tokens; ++j) s.query.row(j) = (emb.query * parts.col(j % K)).transpose();
  for (Eigen::Index i = 0; i < s.query.size(); ++i) s.query.data()[i] += cfg.noise_sigma * noise(rng);
  normalize_rows(s.query);
  return s;
}

std::vector<CorpusSample> generate_corpus(const CorpusConfig& cfg, Exec exec) {
  cfg.validate();
  std::vector<CorpusSample> out(static_cast<std::size_t>(cfg.num_samples));
  for_each_index(cfg.num_samples, exec, [&](std::int64_t i) { out[static_cast<std::size_t>(i)] = generate_sample(cfg, i); });
  return out;
}

std::string sample_to_json_line(const CorpusSample& s) {
  json j;
  j["sample_id"] = s.sample_id;
  j["video"] = matrix_json(s.video);
  j["query"] = matrix_json(s.query);
  j["moment"] = span_json(s.moment);
  j["saliency"] = s.saliency.scores;
  json d = json::array();
  for (const auto& span : s.distractors) d.push_back(span_json(span));
  j["distractors"] = std::move(d);
  return j.dump();
}

CorpusSample sample_from_json_line(const std::string& line, std::size_t line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(line_no, std::string("malformed JSON: ") + e.what());
  }
  try {
    CorpusSample s;
    s.sample_id = j.at("sample_id").get<std::string>();
    s.video = matrix_from_json(j.at("video"), "video", line_no);
    s.query = matrix_from_json(j.at("query"), "query", line_no);
    s.moment = span_from_json(j.at("moment"), line_no);
    s.saliency.scores = j.at("saliency").get<std::vector<int>>();
    for (const auto& d : j.at("distractors")) s.distractors.push_back(span_from_json(d, line_no));
    if (s.moment.end > s.video.rows()) throw ParseError(line_no, "moment exceeds video length");
    if (static_cast<Eigen::Index>(s.saliency.scores.size()) != s.video.rows()) {
      throw ParseError(line_no, "saliency length differs from clip count");
    }
    return s;
  } catch (const json::exception& e) {
    throw ParseError(line_no, std::string("bad sample: ") + e.what());
  }
}

void write_corpus(const std::filesystem::path& path, const std::vector<CorpusSample>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write corpus: " + path.string());
  for (const auto& s : samples) out << sample_to_json_line(s) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<CorpusSample> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read corpus: " + path.string());
  std::vector<CorpusSample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    out.push_back(sample_from_json_line(line, line_no));
  }
  return out;
}

}  // namespace cdnet
