#pragma once

#include <cmath>
#include <stdexcept>

#include "moe_affect/param_store.hpp"

namespace moe_affect {

/// Cosine annealing from lr0 down to lr_end over total_steps.
inline double cosine_lr(std::size_t step, std::size_t total_steps, double lr0, double lr_end) {
  if (total_steps < 1) throw std::invalid_argument("cosine_lr: total_steps must be >= 1");
  if (step > total_steps) throw std::invalid_argument("cosine_lr: step beyond schedule");
  double c = std::cos(3.14159265358979323846 * double(step) / double(total_steps));
  return lr_end + 0.5 * (lr0 - lr_end) * (1.0 + c);
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled-weight-decay Adam update with bias correction. Moments are
/// updated in place and gradients zeroed afterwards.
template <class T>
void adamw_step(ParamStore<T>& store, double lr, const AdamWConfig& cfg = {}) {
  std::uint64_t t = ++store.step_count();
  double bc1 = 1.0 - std::pow(cfg.beta1, double(t));
  double bc2 = 1.0 - std::pow(cfg.beta2, double(t));
  for (auto& [name, e] : store) {
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      double g = double(e.grad.a[i]);
      double m = cfg.beta1 * double(e.m.a[i]) + (1.0 - cfg.beta1) * g;
      double v = cfg.beta2 * double(e.v.a[i]) + (1.0 - cfg.beta2) * g * g;
      e.m.a[i] = T(m);
      e.v.a[i] = T(v);
      double mhat = m / bc1;
      double vhat = v / bc2;
      double p = double(e.value.a[i]);
      p -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p);
      e.value.a[i] = T(p);
    }
  }
  store.zero_grads();
}

}  // namespace moe_affect
