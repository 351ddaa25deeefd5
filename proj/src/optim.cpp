#include "hfgan/optim.hpp"

#include <cmath>
#include <numbers>

namespace hfgan {

double lr_schedule(long step, long total_steps, long warmup_steps, double base_lr) {
  if (total_steps <= 0) throw ParameterError("total_steps must be positive");
  if (warmup_steps < 0 || warmup_steps >= total_steps)
    throw ParameterError("warmup steps (" + std::to_string(warmup_steps) + ") must be below total steps (" +
                         std::to_string(total_steps) + ")");
  if (step < 0 || step > total_steps) throw ParameterError("step " + std::to_string(step) + " outside the schedule");
  if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (step == total_steps) return 0.0;
  const double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename S>
Adam<S>::Adam(ParameterStore<S>& store, double beta1, double beta2, double eps)
    : store_(&store), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, p] : store.entries()) {
    m_.emplace(name, Tensor<S>::zeros_like(p.value()));
    v_.emplace(name, Tensor<S>::zeros_like(p.value()));
  }
}

template <typename S>
void Adam<S>::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const S step_size = static_cast<S>(lr / c1);
  const S b1 = static_cast<S>(beta1_), b2 = static_cast<S>(beta2_);
  const S inv_c2 = static_cast<S>(1.0 / c2), eps = static_cast<S>(eps_);
  for (auto& [name, p] : store_->entries()) {
    if (!p.has_grad()) continue;
    auto& m = m_.at(name).array();
    auto& v = v_.at(name).array();
    const auto& g = p.grad().array();
    m = b1 * m + (S(1) - b1) * g;
    v = b2 * v + (S(1) - b2) * g.square();
    auto& w = p.node()->value.array();
    w -= step_size * m / ((v * inv_c2).sqrt() + eps);
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace hfgan
