#pragma once

// Hybrid-fusion encoder: N single-channel modality-specific encoders plus one
// early-fusion encoder over the channel-stacked masked inputs.

#include <optional>
#include <string>
#include <vector>

#include "hfgan/data.hpp"
#include "hfgan/nn.hpp"

namespace hfgan {

struct EncoderConfig {
  int n_modalities = 4;
  Index base_channels = 32;
  Index latent_channels = 128;
  int n_residual_blocks = 5;
  Index downsample_factor = 4;

  /// Throws ParameterError when the block layout cannot realize the factor.
  void validate() const;
  /// Number of stride-2 blocks, log2(downsample_factor).
  int n_downsample_blocks() const;
};

/// F = {F0, F1..FN}. An empty slot is the all-zero map.
template <typename S>
struct FeatureSet {
  std::optional<Var<S>> complementary;
  std::vector<std::optional<Var<S>>> specific;
  AvailabilityMask availability;
  Shape latent_shape;

  /// Slot 0 is F0, slot i is F_i; empty slots materialize as zeros.
  Var<S> map(int slot) const;
  bool present(int slot) const;
};

/// Five residual blocks: stride-1 stem, log2(factor) stride-2 blocks doubling
/// the width, stride-1 blocks for the remainder. The last block emits the
/// latent width.
template <typename S>
class ConvEncoder {
 public:
  ConvEncoder() = default;
  ConvEncoder(ParameterStore<S>& store, const std::string& name, Index in_channels, const EncoderConfig& config,
              Rng& rng);

  /// [in, H, W] -> [c, H/f, W/f].
  Var<S> operator()(const Var<S>& x) const;

  Index in_channels() const { return in_channels_; }
  long invocations() const { return *calls_; }
  void reset_invocations() const { *calls_ = 0; }

 private:
  std::vector<ResidualBlock<S>> blocks_;
  Index in_channels_ = 0;
  Index factor_ = 1;
  std::shared_ptr<long> calls_ = std::make_shared<long>(0);
};

template <typename S>
class HybridEncoder {
 public:
  HybridEncoder() = default;
  /// `use_specific` / `use_complementary` drop the corresponding pathway. Without
  /// specific encoders the complementary gate opens at ΣAS >= 1 so that
  /// single-input scenarios still produce a latent.
  HybridEncoder(ParameterStore<S>& store, const std::string& name, const EncoderConfig& config, Rng& rng,
                bool use_specific = true, bool use_complementary = true);

  /// X_i is [H, W]; returns F_i [c, h, w].
  Var<S> encode_modality_specific(const Var<S>& x, int i) const;
  /// Returns F0, or nullopt (the zero map) when the gate is closed.
  std::optional<Var<S>> encode_complementary(const std::vector<Var<S>>& images, const AvailabilityMask& mask) const;
  FeatureSet<S> encode(const std::vector<Var<S>>& images, const AvailabilityMask& mask) const;

  const EncoderConfig& config() const { return config_; }
  bool has_specific() const { return !specific_.empty(); }
  bool has_complementary() const { return complementary_.has_value(); }
  const ConvEncoder<S>& specific(int i) const { return specific_.at(static_cast<std::size_t>(i)); }
  const ConvEncoder<S>& complementary() const { return *complementary_; }

 private:
  void check_inputs(const std::vector<Var<S>>& images, const AvailabilityMask& mask) const;

  EncoderConfig config_;
  std::vector<ConvEncoder<S>> specific_;
  std::optional<ConvEncoder<S>> complementary_;
};

}  // namespace hfgan
