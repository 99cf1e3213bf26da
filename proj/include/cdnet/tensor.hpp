#pragma once

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cdnet {

// Row-major so that "one row per clip / token" maps onto contiguous memory.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ValueError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_str(const Mat& m);

// Handle to a node on a Tape. Only meaningful together with the tape that
// produced it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode autodiff tape over dense matrices.
//
// Nodes are appended in evaluation order, so a reverse sweep is a valid
// topological order. A tape is single-threaded; independent samples use
// independent tapes.
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var constant(Mat value);
  Var leaf(Mat value);
  Var push(Mat value, std::initializer_list<Var> parents, Backward backward);
  Var push(Mat value, std::span<const Var> parents, Backward backward);

  const Mat& value(Var v) const { return nodes_.at(v.id).value; }
  double scalar(Var v) const;
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }

  // Gradient of the last backward sweep; zero matrix when never reached.
  Mat grad(Var v) const;

  // Adds `g` to the gradient buffer of `v` (no-op for constants).
  void accumulate(Var v, const Mat& g);
  void accumulate(int id, const Mat& g) { accumulate(Var{id}, g); }
  const Mat& upstream(int id) const { return nodes_[id].grad; }

  void backward(Var scalar_output);
  void backward(std::span<const std::pair<Var, Mat>> seeds);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    Backward backward;
  };
  void zero_grads();
  void sweep(int from);

  std::vector<Node> nodes_;
};

}  // namespace cdnet
