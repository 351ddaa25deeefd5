#pragma once

// Adaptive-moment optimizer over a ParameterStore and the warmup + cosine
// learning-rate schedule.

#include <map>
#include <string>

#include "hfgan/nn.hpp"

namespace hfgan {

/// Linear ramp 0 -> base_lr over warmup_steps, then base_lr * 0.5 * (1 + cos(pi * progress)).
double lr_schedule(long step, long total_steps, long warmup_steps, double base_lr);

template <typename S>
class Adam {
 public:
  Adam() = default;
  Adam(ParameterStore<S>& store, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// One update with bias correction; parameters without a gradient are left untouched.
  void step(double lr);
  void zero_grad() { store_->zero_grad(); }

  long steps() const { return t_; }
  void set_steps(long t) { t_ = t; }
  /// First and second moments keyed by parameter name.
  std::map<std::string, Tensor<S>>& first_moments() { return m_; }
  std::map<std::string, Tensor<S>>& second_moments() { return v_; }
  const std::map<std::string, Tensor<S>>& first_moments() const { return m_; }
  const std::map<std::string, Tensor<S>>& second_moments() const { return v_; }

 private:
  ParameterStore<S>* store_ = nullptr;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
  std::map<std::string, Tensor<S>> m_, v_;
};

}  // namespace hfgan
