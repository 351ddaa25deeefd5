#pragma once

// Channel attention-based feature fusion: importance maps per feature slot,
// an attention-weighted primary path, a softmax-renormalized residual path and
// a 1x1 projection of their concatenation back to the latent width.

#include <string>
#include <vector>

#include "hfgan/encoder.hpp"

namespace hfgan {

/// GAP -> conv1d(k) -> SiLU -> conv1d(k) -> sigmoid along the channel axis.
template <typename S>
struct ChannelAttention {
  Var<S> kernel1, bias1, kernel2, bias2;

  ChannelAttention() = default;
  ChannelAttention(ParameterStore<S>& store, const std::string& name, Index kernel, Rng& rng);

  /// [c, h, w] -> importance vector [c] in (0, 1).
  Var<S> operator()(const Var<S>& feature) const;
  /// Same MLP applied to an already pooled [c] vector.
  Var<S> from_pooled(const Var<S>& pooled) const;
};

/// (F0 (x) M0) + sum_i (F_i (x) M_i), channel weights broadcast spatially.
template <typename S>
Var<S> fuse_primary(const std::vector<Var<S>>& maps, const std::vector<Var<S>>& weights);

/// Channelwise softmax across the given importance vectors.
template <typename S>
std::vector<Var<S>> renormalize_importance(const std::vector<Var<S>>& weights);

/// F0 + sum_i (F_i (x) M'_i) with M' from renormalize_importance. `f0` may be
/// empty (zero map); `maps` must be non-empty.
template <typename S>
Var<S> fuse_residual(const std::optional<Var<S>>& f0, const std::vector<Var<S>>& maps,
                     const std::vector<Var<S>>& weights);

enum class FusionMode { caff, summation };

template <typename S>
class FeatureFusion {
 public:
  FeatureFusion() = default;
  /// Summation mode replaces the fusion with conv1x1(F0 + sum_i F_i).
  FeatureFusion(ParameterStore<S>& store, const std::string& name, Index channels, int n_modalities, FusionMode mode,
                Rng& rng, Index attention_kernel = 3);

  /// Only slots present in the feature set and marked available participate.
  Var<S> operator()(const FeatureSet<S>& features) const;

  /// Importance map of slot 0 (F0) or slot i (F_i).
  Var<S> channel_attention(const Var<S>& feature, int slot) const;
  Var<S> project(const Var<S>& primary, const Var<S>& residual) const;

  FusionMode mode() const { return mode_; }
  const Conv2d<S>& projection() const { return projection_; }

 private:
  FusionMode mode_ = FusionMode::caff;
  std::vector<ChannelAttention<S>> attention_;  // slot 0 = F0
  Conv2d<S> projection_;
};

}  // namespace hfgan
