#include "hfgan/losses.hpp"

namespace hfgan {

void LossWeights::validate() const {
  for (double v : {alpha, beta, gamma, lambda1, lambda2, lambda3, lambda4})
    if (!(v >= 0.0)) throw ParameterError("loss weights must be non-negative");
}

std::vector<std::pair<std::string, double>> LossReport::terms() const {
  return {{"rec", rec},           {"cyc", cyc},           {"sim", sim},         {"adv_g", adv_g},
          {"adv_d", adv_d},       {"cls_real", cls_real}, {"cls_fake", cls_fake}, {"total_g", total_g},
          {"total_d", total_d}};
}

template <typename S>
Var<S> reconstruction_loss(const Var<S>& target, const Var<S>& synthesized) {
  return mean_abs_diff(target, synthesized);
}

template <typename S>
Var<S> similarity_loss(const Var<S>& z, const Var<S>& z_hat) {
  return add_scalar(scale(cosine_similarity(z, z_hat), S(-1)), S(1));
}

template <typename S>
Var<S> discriminator_adversarial(const Var<S>& real_logits, const Var<S>& fake_logits) {
  // log(1 - sigma(x)) = log sigma(-x).
  return scale(add(mean(log_sigmoid(real_logits)), mean(log_sigmoid(scale(fake_logits, S(-1))))), S(-1));
}

template <typename S>
Var<S> generator_adversarial(const Var<S>& fake_logits) {
  return scale(mean(log_sigmoid(fake_logits)), S(-1));
}

template <typename S>
Var<S> classification_loss(const Var<S>& class_logits, int label) {
  return cross_entropy(class_logits, label);
}

double total_generator_loss(const LossReport& r, const LossWeights& w) {
  return w.alpha * r.rec + w.beta * r.sim + w.gamma * r.cyc + w.lambda1 * r.adv_g + w.lambda2 * r.cls_fake;
}

double total_discriminator_loss(const LossReport& r, const LossWeights& w) {
  return w.lambda3 * r.adv_d + w.lambda4 * (r.cls_real + r.cls_fake);
}

template <typename S>
Var<S> weighted_generator_loss(const Var<S>& rec, const Var<S>& sim, const Var<S>& cyc, const Var<S>& adv,
                               const Var<S>& cls, const LossWeights& w) {
  return sum_all<S>({scale(rec, S(w.alpha)), scale(sim, S(w.beta)), scale(cyc, S(w.gamma)), scale(adv, S(w.lambda1)),
                     scale(cls, S(w.lambda2))});
}

template <typename S>
Var<S> weighted_discriminator_loss(const Var<S>& adv, const Var<S>& cls_real, const Var<S>& cls_fake,
                                   const LossWeights& w) {
  return sum_all<S>({scale(adv, S(w.lambda3)), scale(add(cls_real, cls_fake), S(w.lambda4))});
}

AvailabilityMask cycle_mask(int n_modalities, int t, int c, bool hard) {
  if (t == c) throw ContractError("cycle source and target must differ");
  if (t < 0 || t >= n_modalities || c < 0 || c >= n_modalities) throw IndexError("cycle modality out of range");
  if (hard) return AvailabilityMask::single(n_modalities, t);
  AvailabilityMask m = AvailabilityMask::all(n_modalities);
  m.set(c, false);
  return m;
}

template <typename S>
std::vector<Var<S>> cycle_inputs(const std::vector<Var<S>>& real, const AvailabilityMask& hat_mask, int t,
                                 const Var<S>& y_hat) {
  if (static_cast<int>(real.size()) != hat_mask.size()) throw ShapeError("cycle inputs need one image per modality");
  if (!hat_mask[t]) throw ContractError("the synthesized target must be part of the cycle inputs");
  std::vector<Var<S>> out;
  out.reserve(real.size());
  for (int i = 0; i < hat_mask.size(); ++i) {
    if (i == t)
      out.push_back(y_hat);
    else if (hat_mask[i])
      out.push_back(real[static_cast<std::size_t>(i)]);
    else
      out.push_back(constant(Tensor<S>(real[static_cast<std::size_t>(i)].shape())));
  }
  return out;
}

template <typename S>
CycleResult<S> cycle_loss(const Synthesizer<S>& g, const std::vector<Var<S>>& real, const AvailabilityMask& mask,
                          const AvailabilityMask& hat_mask, int t, int c, const Var<S>& y_hat) {
  if (!mask[c]) throw ContractError("cycle source modality " + std::to_string(c) + " is not available");
  if (hat_mask[c]) throw ContractError("cycle source modality must be excluded from the cycle inputs");
  CycleResult<S> r;
  r.output = g(cycle_inputs(real, hat_mask, t, y_hat), hat_mask, c);
  r.loss = mean_abs_diff(real[static_cast<std::size_t>(c)], r.output.image);
  return r;
}

#define HFGAN_INSTANTIATE_LOSSES(S)                                                                                \
  template Var<S> reconstruction_loss(const Var<S>&, const Var<S>&);                                               \
  template Var<S> similarity_loss(const Var<S>&, const Var<S>&);                                                   \
  template Var<S> discriminator_adversarial(const Var<S>&, const Var<S>&);                                         \
  template Var<S> generator_adversarial(const Var<S>&);                                                            \
  template Var<S> classification_loss(const Var<S>&, int);                                                         \
  template Var<S> weighted_generator_loss(const Var<S>&, const Var<S>&, const Var<S>&, const Var<S>&, const Var<S>&, \
                                          const LossWeights&);                                                     \
  template Var<S> weighted_discriminator_loss(const Var<S>&, const Var<S>&, const Var<S>&, const LossWeights&);    \
  template std::vector<Var<S>> cycle_inputs(const std::vector<Var<S>>&, const AvailabilityMask&, int, const Var<S>&); \
  template CycleResult<S> cycle_loss(const Synthesizer<S>&, const std::vector<Var<S>>&, const AvailabilityMask&,   \
                                     const AvailabilityMask&, int, int, const Var<S>&);

HFGAN_INSTANTIATE_LOSSES(float)
HFGAN_INSTANTIATE_LOSSES(double)

}  // namespace hfgan
