#include "cdnet/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace cdnet {

std::string shape_str(const Mat& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

Var Tape::constant(Mat value) {
  nodes_.push_back(Node{std::move(value), Mat(), false, nullptr});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Mat value) {
  nodes_.push_back(Node{std::move(value), Mat(), true, nullptr});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::push(Mat value, std::initializer_list<Var> parents, Backward backward) {
  return push(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
}

Var Tape::push(Mat value, std::span<const Var> parents, Backward backward) {
  bool any = false;
  for (Var p : parents) any = any || nodes_.at(p.id).needs_grad;
  nodes_.push_back(Node{std::move(value), Mat(), any, any ? std::move(backward) : nullptr});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

double Tape::scalar(Var v) const {
  const Mat& m = value(v);
  if (m.rows() != 1 || m.cols() != 1) throw ShapeError("scalar(): node is " + shape_str(m));
  return m(0, 0);
}

Mat Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(Var v, const Mat& g) {
  Node& n = nodes_.at(v.id);
  if (!n.needs_grad) return;
  if (g.rows() != n.value.rows() || g.cols() != n.value.cols()) {
    throw ShapeError("gradient " + shape_str(g) + " does not match node " + shape_str(n.value));
  }
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::zero_grads() {
  for (Node& n : nodes_) n.grad.resize(0, 0);
}

void Tape::sweep(int from) {
  for (int i = from; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.needs_grad || !n.backward || n.grad.size() == 0) continue;
    n.backward(*this, i);
  }
}

void Tape::backward(Var scalar_output) {
  const Mat& out = value(scalar_output);
  if (out.size() != 1) throw ShapeError("backward() needs a scalar output, got " + shape_str(out));
  zero_grads();
  accumulate(scalar_output, Mat::Ones(1, 1));
  sweep(scalar_output.id);
}

void Tape::backward(std::span<const std::pair<Var, Mat>> seeds) {
  zero_grads();
  int top = -1;
  for (const auto& [v, g] : seeds) {
    accumulate(v, g);
    top = std::max(top, v.id);
  }
  sweep(top);
}

}  // namespace cdnet
