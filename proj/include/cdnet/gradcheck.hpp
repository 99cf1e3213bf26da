#pragma once

#include "cdnet/tensor.hpp"

#include <functional>
#include <span>
#include <vector>

namespace cdnet {

// Builds an op on a fresh tape from leaf inputs and returns its output.
using TapeFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::vector<double> per_input;  // max relative error per input tensor
};

// Compares the tape gradient with central finite differences. Non-scalar
// outputs are reduced with a fixed pseudo-random weighting so every output
// entry contributes. Relative error per entry is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-3).
// Throws ValueError on non-finite outputs or gradients.
GradCheckResult grad_check(const TapeFn& fn, const std::vector<Mat>& inputs, double epsilon = 1e-5);

}  // namespace cdnet
