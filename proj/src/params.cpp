#include "cdnet/params.hpp"

#include <cmath>

namespace cdnet {

void ParamStore::set(const std::string& name, Mat value) { values_[name] = std::move(value); }

const Mat& ParamStore::at(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

Mat& ParamStore::at(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, m] : values_) n += static_cast<std::size_t>(m.size());
  return n;
}

bool ParamStore::operator==(const ParamStore& other) const {
  if (values_.size() != other.values_.size()) return false;
  auto a = values_.begin();
  auto b = other.values_.begin();
  for (; a != values_.end(); ++a, ++b) {
    if (a->first != b->first) return false;
    if (a->second.rows() != b->second.rows() || a->second.cols() != b->second.cols()) return false;
    if (a->second != b->second) return false;
  }
  return true;
}

Var Binding::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const Mat& value = store_.at(name);
  Var v = trainable_ ? tape_.leaf(value) : tape_.constant(value);
  bound_.emplace(name, v);
  return v;
}

GradMap Binding::grads() const {
  GradMap out;
  for (const auto& [name, v] : bound_) out.emplace(name, tape_.grad(v));
  return out;
}

Mat scaled_uniform(int rows, int cols, int fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

}  // namespace cdnet
