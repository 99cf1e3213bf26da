#include "cdnet/optim.hpp"

#include <cmath>

namespace cdnet {

void Adam::step(ParamStore& params, const GradMap& grads) {
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (const auto& [name, g] : grads) {
    Mat& p = params.at(name);
    auto [mit, fresh_m] = m_.try_emplace(name, Mat::Zero(p.rows(), p.cols()));
    auto [vit, fresh_v] = v_.try_emplace(name, Mat::Zero(p.rows(), p.cols()));
    Mat& m = mit->second;
    Mat& v = vit->second;
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    p.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
  }
}

double global_norm(const GradMap& grads) {
  double sq = 0.0;
  for (const auto& [_, g] : grads) sq += g.squaredNorm();
  return std::sqrt(sq);
}

void clip_global_norm(GradMap& grads, double max_norm) {
  if (max_norm <= 0.0) return;
  const double n = global_norm(grads);
  if (n <= max_norm) return;
  for (auto& [_, g] : grads) g *= max_norm / n;
}

}  // namespace cdnet
