#pragma once

// Decoder, end-to-end generator G(X, AS, t) and the patch discriminator with
// its auxiliary modality classifier.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hfgan/caff.hpp"
#include "hfgan/encoder.hpp"
#include "hfgan/infuser.hpp"

namespace hfgan {

enum class Variant { full, no_enc_m, no_enc_c, no_caff };
enum class IntensityMode { off, median, dataset_mean };
enum class LatentMode { all, common_only, only_complementary, only_specific };

/// CLI spellings: "full", "no-enc-m", "no-enc-c", "no-caff" (underscores accepted).
Variant parse_variant(const std::string& text);
std::string to_string(Variant v);
IntensityMode parse_intensity_mode(const std::string& text);
std::string to_string(IntensityMode m);
LatentMode parse_latent_mode(const std::string& text);
std::string to_string(LatentMode m);

struct ModelConfig {
  int n_modalities = 4;
  Index image_size = 64;
  Index base_channels = 32;
  Index latent_channels = 128;
  Index downsample_factor = 4;
  Index token_dim = 256;
  Index n_heads = 8;
  Index patch_size = 1;
  Index mlp_ratio = 4;
  std::vector<Index> disc_channels{64, 128, 256, 512};
  Variant variant = Variant::full;
  IntensityMode intensity = IntensityMode::off;
  std::uint64_t seed = 0;

  void validate() const;
  EncoderConfig encoder() const;
  InfuserConfig infuser() const;
  Index latent_size() const { return image_size / downsample_factor; }
};

/// Mirror of the encoder: two stride-1 residual blocks, log2(f) blocks of
/// nearest x2 upsampling plus a channel-halving residual block, a 3x3 output
/// conv and tanh.
template <typename S>
class Decoder {
 public:
  Decoder() = default;
  Decoder(ParameterStore<S>& store, const std::string& name, const EncoderConfig& config, Rng& rng);

  /// [c, h, w] -> [H, W] in [-1, 1].
  Var<S> operator()(const Var<S>& z_t) const;

 private:
  std::vector<ResidualBlock<S>> blocks_;
  std::vector<ResidualBlock<S>> up_blocks_;
  Conv2d<S> output_;
};

template <typename S>
struct GeneratorOutput {
  Var<S> image;  // [H, W]
  Var<S> z;      // common latent
  Var<S> z_t;    // target latent
};

template <typename S>
class Generator {
 public:
  explicit Generator(const ModelConfig& config);
  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;

  /// `images` are the N masked inputs [H, W]; `t` is the zero-based target.
  GeneratorOutput<S> synthesize(const std::vector<Var<S>>& images, const AvailabilityMask& mask, int t,
                                std::optional<S> prior = std::nullopt, LatentMode mode = LatentMode::all) const;

  /// Encoder and fusion only.
  Var<S> common_latent(const std::vector<Var<S>>& images, const AvailabilityMask& mask,
                       LatentMode mode = LatentMode::all) const;

  const ModelConfig& config() const { return config_; }
  ParameterStore<S>& parameters() { return store_; }
  const ParameterStore<S>& parameters() const { return store_; }
  const HybridEncoder<S>& encoder() const { return encoder_; }
  const FeatureFusion<S>& fusion() const { return fusion_; }
  const Infuser<S>& infuser() const { return infuser_; }
  const Decoder<S>& decoder() const { return decoder_; }

 private:
  ModelConfig config_;
  ParameterStore<S> store_;
  HybridEncoder<S> encoder_;
  FeatureFusion<S> fusion_;
  Infuser<S> infuser_;
  Decoder<S> decoder_;
};

template <typename S>
struct DiscriminatorOutput {
  Var<S> patch_logits;  // [1, H/16, W/16]
  Var<S> patch_map;     // sigmoid(patch_logits)
  Var<S> class_logits;  // [N]
};

/// Four conv4x4 stride-2 layers with LeakyReLU(0.2), then a 3x3 patch head and
/// a pooled linear modality classifier.
template <typename S>
class Discriminator {
 public:
  explicit Discriminator(const ModelConfig& config);
  Discriminator(const Discriminator&) = delete;
  Discriminator& operator=(const Discriminator&) = delete;

  /// `image` is [H, W].
  DiscriminatorOutput<S> operator()(const Var<S>& image) const;
  /// Features after the stride-2 trunk, [C_last, H/16, W/16].
  Var<S> features(const Var<S>& image) const;

  ParameterStore<S>& parameters() { return store_; }
  const ParameterStore<S>& parameters() const { return store_; }
  const Linear<S>& class_head() const { return class_head_; }

 private:
  ParameterStore<S> store_;
  std::vector<Conv2d<S>> trunk_;
  Conv2d<S> patch_head_;
  Linear<S> class_head_;
};

}  // namespace hfgan
