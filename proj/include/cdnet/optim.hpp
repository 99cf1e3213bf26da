#pragma once

#include "cdnet/params.hpp"

namespace cdnet {

// Adam with bias correction. State is keyed by parameter name.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore& params, const GradMap& grads);
  long steps() const { return steps_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long steps_ = 0;
  GradMap m_;
  GradMap v_;
};

double global_norm(const GradMap& grads);
// Rescales grads in place so their global norm is at most max_norm.
void clip_global_norm(GradMap& grads, double max_norm);

}  // namespace cdnet
