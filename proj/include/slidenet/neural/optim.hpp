#pragma once

#include <cmath>
#include <cstddef>

#include "slidenet/neural/tensor.hpp"

namespace slidenet::nn {

/// lr(t) = lr_start * (lr_end / lr_start)^(t / T), clamped to lr_end past T.
struct LrSchedule {
  double lr_start = 0.005;
  double lr_end = 1e-5;
  std::size_t total_steps = 1;

  double at(std::size_t t) const {
    if (t == 0) return lr_start;
    if (t >= total_steps) return lr_end;
    const double frac = static_cast<double>(t) / static_cast<double>(total_steps);
    return lr_start * std::exp(frac * std::log(lr_end / lr_start));
  }
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam; moments live on each Parameter.
class Adam {
public:
  explicit Adam(AdamConfig cfg = {}, std::size_t step = 0) : cfg_(cfg), step_(step) {}

  void step(ParamStore& store, double lr) {
    ++step_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (Parameter* p : store.params()) {
      p->adam_m = cfg_.beta1 * p->adam_m + (1.0 - cfg_.beta1) * p->grad;
      p->adam_v = cfg_.beta2 * p->adam_v + (1.0 - cfg_.beta2) * p->grad.cwiseAbs2();
      p->value.array() -= lr * (p->adam_m.array() / c1) / ((p->adam_v.array() / c2).sqrt() + cfg_.eps);
    }
  }

  std::size_t steps() const { return step_; }

private:
  AdamConfig cfg_;
  std::size_t step_ = 0;
};

} // namespace slidenet::nn
