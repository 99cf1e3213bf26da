#include "cdnet/gradcheck.hpp"

#include "cdnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace cdnet {
namespace {

struct Evaluated {
  double value = 0.0;
  std::vector<Mat> grads;
};

Evaluated evaluate(const TapeFn& fn, const std::vector<Mat>& inputs, const Mat* weights, bool with_grad) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const Mat& m : inputs) leaves.push_back(tape.leaf(m));
  Var out = fn(tape, leaves);
  Var scalar = out;
  if (tape.value(out).size() != 1 || weights != nullptr) {
    scalar = ops::weighted_sum(tape, out, *weights);
  }
  Evaluated e;
  e.value = tape.scalar(scalar);
  if (!std::isfinite(e.value)) throw ValueError("grad_check: non-finite output");
  if (with_grad) {
    tape.backward(scalar);
    for (Var v : leaves) {
      e.grads.push_back(tape.grad(v));
      if (!e.grads.back().allFinite()) throw ValueError("grad_check: non-finite gradient");
    }
  }
  return e;
}

}  // namespace

GradCheckResult grad_check(const TapeFn& fn, const std::vector<Mat>& inputs, double epsilon) {
  Mat weights;
  const Mat* wptr = nullptr;
  {
    Tape probe;
    std::vector<Var> leaves;
    for (const Mat& m : inputs) leaves.push_back(probe.leaf(m));
    const Mat& out = probe.value(fn(probe, leaves));
    if (out.size() != 1) {
      std::mt19937_64 rng(0x5eed);
      std::uniform_real_distribution<double> dist(0.5, 1.5);
      weights.resize(out.rows(), out.cols());
      for (Eigen::Index i = 0; i < weights.size(); ++i) weights.data()[i] = dist(rng);
      wptr = &weights;
    }
  }

  const Evaluated analytic = evaluate(fn, inputs, wptr, true);
  GradCheckResult result;
  std::vector<Mat> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      const double orig = inputs[k].data()[i];
      probe[k].data()[i] = orig + epsilon;
      const double up = evaluate(fn, probe, wptr, false).value;
      probe[k].data()[i] = orig - epsilon;
      const double down = evaluate(fn, probe, wptr, false).value;
      probe[k].data()[i] = orig;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic.grads[k].data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-3});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    result.per_input.push_back(worst);
    result.max_rel_error = std::max(result.max_rel_error, worst);
  }
  return result;
}

}  // namespace cdnet
