#pragma once

// Reconstruction, cycle, latent similarity, adversarial and classification
// losses plus the weighted generator and discriminator totals.

#include <functional>
#include <string>
#include <vector>

#include "hfgan/data.hpp"
#include "hfgan/generator.hpp"

namespace hfgan {

struct LossWeights {
  double alpha = 10.0;   // reconstruction
  double beta = 1.0;     // latent similarity
  double gamma = 1.0;    // cycle
  double lambda1 = 0.25;  // generator adversarial
  double lambda2 = 0.25;  // generator classification
  double lambda3 = 0.25;  // discriminator adversarial
  double lambda4 = 0.25;  // discriminator classification

  void validate() const;
};

struct LossReport {
  double rec = 0, cyc = 0, sim = 0, adv_g = 0, adv_d = 0, cls_real = 0, cls_fake = 0, total_g = 0, total_d = 0;

  /// (name, value) pairs in a fixed order, as written to the metrics log.
  std::vector<std::pair<std::string, double>> terms() const;
};

/// Mean absolute difference.
template <typename S>
Var<S> reconstruction_loss(const Var<S>& target, const Var<S>& synthesized);

/// 1 - cos(z, z_hat) over the flattened latents.
template <typename S>
Var<S> similarity_loss(const Var<S>& z, const Var<S>& z_hat);

/// -mean log sigma(real) - mean log(1 - sigma(fake)), on logits.
template <typename S>
Var<S> discriminator_adversarial(const Var<S>& real_logits, const Var<S>& fake_logits);

/// Non-saturating -mean log sigma(fake), on logits.
template <typename S>
Var<S> generator_adversarial(const Var<S>& fake_logits);

/// Cross-entropy against the zero-based label.
template <typename S>
Var<S> classification_loss(const Var<S>& class_logits, int label);

double total_generator_loss(const LossReport& r, const LossWeights& w);
double total_discriminator_loss(const LossReport& r, const LossWeights& w);

template <typename S>
Var<S> weighted_generator_loss(const Var<S>& rec, const Var<S>& sim, const Var<S>& cyc, const Var<S>& adv,
                               const Var<S>& cls, const LossWeights& w);
template <typename S>
Var<S> weighted_discriminator_loss(const Var<S>& adv, const Var<S>& cls_real, const Var<S>& cls_fake,
                                   const LossWeights& w);

/// Mask for the cycle pass: {t} for hard samples, all modalities except `c`
/// otherwise. Throws ContractError when c == t.
AvailabilityMask cycle_mask(int n_modalities, int t, int c, bool hard);

/// X_hat: slot t holds y_hat, other slots in `hat_mask` hold the real images,
/// the rest are zero.
template <typename S>
std::vector<Var<S>> cycle_inputs(const std::vector<Var<S>>& real, const AvailabilityMask& hat_mask, int t,
                                 const Var<S>& y_hat);

template <typename S>
using Synthesizer = std::function<GeneratorOutput<S>(const std::vector<Var<S>>&, const AvailabilityMask&, int)>;

template <typename S>
struct CycleResult {
  Var<S> loss;
  GeneratorOutput<S> output;  // second generator pass; output.z is z_hat
};

/// mean |x_c - G(X_hat, AS_hat, c)|. `c` must be available in `mask`.
template <typename S>
CycleResult<S> cycle_loss(const Synthesizer<S>& g, const std::vector<Var<S>>& real, const AvailabilityMask& mask,
                          const AvailabilityMask& hat_mask, int t, int c, const Var<S>& y_hat);

}  // namespace hfgan
