#include "hfgan/generator.hpp"

#include <algorithm>

namespace hfgan {

namespace {

std::string canonical(std::string text) {
  std::replace(text.begin(), text.end(), '_', '-');
  return text;
}

}  // namespace

Variant parse_variant(const std::string& text) {
  const std::string t = canonical(text);
  if (t == "full") return Variant::full;
  if (t == "no-enc-m") return Variant::no_enc_m;
  if (t == "no-enc-c") return Variant::no_enc_c;
  if (t == "no-caff") return Variant::no_caff;
  throw ParameterError("unknown variant '" + text + "' (expected full, no-enc-m, no-enc-c, no-caff)");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_enc_m: return "no-enc-m";
    case Variant::no_enc_c: return "no-enc-c";
    case Variant::no_caff: return "no-caff";
  }
  return "full";
}

IntensityMode parse_intensity_mode(const std::string& text) {
  const std::string t = canonical(text);
  if (t == "off") return IntensityMode::off;
  if (t == "median") return IntensityMode::median;
  if (t == "dataset-mean") return IntensityMode::dataset_mean;
  throw ParameterError("unknown intensity mode '" + text + "' (expected off, median, dataset-mean)");
}

std::string to_string(IntensityMode m) {
  switch (m) {
    case IntensityMode::off: return "off";
    case IntensityMode::median: return "median";
    case IntensityMode::dataset_mean: return "dataset-mean";
  }
  return "off";
}

LatentMode parse_latent_mode(const std::string& text) {
  const std::string t = canonical(text);
  if (t == "all") return LatentMode::all;
  if (t == "common-only") return LatentMode::common_only;
  if (t == "only-complementary") return LatentMode::only_complementary;
  if (t == "only-specific") return LatentMode::only_specific;
  throw ParameterError("unknown latent mode '" + text + "' (expected all, common-only, only-complementary, only-specific)");
}

std::string to_string(LatentMode m) {
  switch (m) {
    case LatentMode::all: return "all";
    case LatentMode::common_only: return "common-only";
    case LatentMode::only_complementary: return "only-complementary";
    case LatentMode::only_specific: return "only-specific";
  }
  return "all";
}

void ModelConfig::validate() const {
  encoder().validate();
  if (image_size % downsample_factor != 0)
    throw ShapeError("image size " + std::to_string(image_size) + " is not divisible by the downsample factor " +
                     std::to_string(downsample_factor));
  infuser().validate();
  if (disc_channels.size() != 4) throw ParameterError("the discriminator has exactly 4 stride-2 layers");
  if (image_size % 16 != 0) throw ShapeError("image size must be a multiple of 16 for the patch discriminator");
  for (Index c : disc_channels)
    if (c <= 0) throw ParameterError("discriminator widths must be positive");
}

EncoderConfig ModelConfig::encoder() const {
  EncoderConfig e;
  e.n_modalities = n_modalities;
  e.base_channels = base_channels;
  e.latent_channels = latent_channels;
  e.downsample_factor = downsample_factor;
  return e;
}

InfuserConfig ModelConfig::infuser() const {
  InfuserConfig c;
  c.n_modalities = n_modalities;
  c.latent_channels = latent_channels;
  c.latent_height = latent_size();
  c.latent_width = latent_size();
  c.token_dim = token_dim;
  c.n_heads = n_heads;
  c.patch_size = patch_size;
  c.mlp_ratio = mlp_ratio;
  c.use_intensity_encoding = intensity != IntensityMode::off;
  return c;
}

template <typename S>
Decoder<S>::Decoder(ParameterStore<S>& store, const std::string& name, const EncoderConfig& config, Rng& rng) {
  const int n_up = config.n_downsample_blocks();
  Index width = config.base_channels << n_up;
  blocks_.emplace_back(store, name + ".block0", config.latent_channels, width, 1, rng);
  blocks_.emplace_back(store, name + ".block1", width, width, 1, rng);
  for (int u = 0; u < n_up; ++u) {
    const Index out = std::max<Index>(width / 2, 1);
    up_blocks_.emplace_back(store, name + ".up" + std::to_string(u), width, out, 1, rng);
    width = out;
  }
  output_ = Conv2d<S>(store, name + ".output", width, 1, 3, 1, 1, rng);
}

template <typename S>
Var<S> Decoder<S>::operator()(const Var<S>& z_t) const {
  Var<S> h = z_t;
  for (const auto& b : blocks_) h = b(h);
  for (const auto& b : up_blocks_) h = b(upsample_nearest2x(h));
  Var<S> y = hfgan::tanh(output_(h));
  return reshape(y, {y.dim(1), y.dim(2)});
}

template <typename S>
Generator<S>::Generator(const ModelConfig& config) : config_(config) {
  config.validate();
  Rng rng(config.seed);
  encoder_ = HybridEncoder<S>(store_, "encoder", config.encoder(), rng, config.variant != Variant::no_enc_m,
                              config.variant != Variant::no_enc_c);
  fusion_ = FeatureFusion<S>(store_, "fusion", config.latent_channels, config.n_modalities,
                             config.variant == Variant::no_caff ? FusionMode::summation : FusionMode::caff, rng);
  infuser_ = Infuser<S>(store_, "infuser", config.infuser(), rng);
  decoder_ = Decoder<S>(store_, "decoder", config.encoder(), rng);
}

template <typename S>
Var<S> Generator<S>::common_latent(const std::vector<Var<S>>& images, const AvailabilityMask& mask,
                                   LatentMode mode) const {
  if (mask.count() == 0) throw ContractError("synthesis needs at least one available modality");
  FeatureSet<S> f = encoder_.encode(images, mask);
  if (mode == LatentMode::only_complementary) {
    if (!f.complementary) throw ContractError("only-complementary needs at least two available inputs");
    for (auto& s : f.specific) s.reset();
  } else if (mode == LatentMode::only_specific) {
    f.complementary.reset();
  }
  return fusion_(f);
}

template <typename S>
GeneratorOutput<S> Generator<S>::synthesize(const std::vector<Var<S>>& images, const AvailabilityMask& mask, int t,
                                            std::optional<S> prior, LatentMode mode) const {
  if (t < 0 || t >= config_.n_modalities)
    throw IndexError("target " + std::to_string(t) + " out of range for " + std::to_string(config_.n_modalities) +
                     " modalities");
  GeneratorOutput<S> out;
  out.z = common_latent(images, mask, mode);
  out.z_t = infuser_(out.z, t, prior, mode != LatentMode::common_only);
  out.image = decoder_(out.z_t);
  return out;
}

template <typename S>
Discriminator<S>::Discriminator(const ModelConfig& config) {
  Rng rng(config.seed ^ 0xD15C0000D15C0000ull);
  Index in = 1;
  for (std::size_t l = 0; l < config.disc_channels.size(); ++l) {
    trunk_.emplace_back(store_, "disc.conv" + std::to_string(l), in, config.disc_channels[l], 4, 2, 1, rng);
    in = config.disc_channels[l];
  }
  patch_head_ = Conv2d<S>(store_, "disc.patch", in, 1, 3, 1, 1, rng);
  class_head_ = Linear<S>(store_, "disc.class", in, config.n_modalities, rng);
}

template <typename S>
Var<S> Discriminator<S>::features(const Var<S>& image) const {
  if (image.value().rank() != 2) throw ShapeError("discriminator expects [H, W], got " + shape_string(image.shape()));
  Var<S> h = reshape(image, {1, image.dim(0), image.dim(1)});
  for (const auto& conv : trunk_) h = leaky_relu(conv(h), S(0.2));
  return h;
}

template <typename S>
DiscriminatorOutput<S> Discriminator<S>::operator()(const Var<S>& image) const {
  const Var<S> h = features(image);
  DiscriminatorOutput<S> out;
  out.patch_logits = patch_head_(h);
  out.patch_map = sigmoid(out.patch_logits);
  out.class_logits = class_head_(global_avg_pool(h));
  return out;
}

template class Decoder<float>;
template class Decoder<double>;
template class Generator<float>;
template class Generator<double>;
template class Discriminator<float>;
template class Discriminator<double>;

}  // namespace hfgan
