#pragma once

#include "cdnet/tensor.hpp"

#include <map>
#include <random>
#include <string>
#include <vector>

namespace cdnet {

// Named parameter tensors. Ordered by name so iteration (checkpointing,
// optimizer updates, gradient reduction) is deterministic.
class ParamStore {
 public:
  void set(const std::string& name, Mat value);
  const Mat& at(const std::string& name) const;
  Mat& at(const std::string& name);
  bool contains(const std::string& name) const { return values_.count(name) != 0; }
  std::size_t size() const { return values_.size(); }
  std::size_t scalar_count() const;

  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }
  auto begin() { return values_.begin(); }
  auto end() { return values_.end(); }

  bool operator==(const ParamStore& other) const;

 private:
  std::map<std::string, Mat> values_;
};

using GradMap = std::map<std::string, Mat>;

// Binds parameters of a store onto one tape. Each name becomes a single
// node the first time it is requested; trainable bindings create leaves,
// frozen ones constants.
class Binding {
 public:
  Binding(Tape& tape, const ParamStore& store, bool trainable)
      : tape_(tape), store_(store), trainable_(trainable) {}

  Var operator()(const std::string& name);
  Tape& tape() { return tape_; }
  bool trainable() const { return trainable_; }

  // Gradients of every bound parameter after tape.backward().
  GradMap grads() const;

 private:
  Tape& tape_;
  const ParamStore& store_;
  bool trainable_;
  std::map<std::string, Var> bound_;
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
Mat scaled_uniform(int rows, int cols, int fan_in, std::mt19937_64& rng);

}  // namespace cdnet
