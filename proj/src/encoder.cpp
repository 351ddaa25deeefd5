#include "hfgan/encoder.hpp"

namespace hfgan {

void EncoderConfig::validate() const {
  if (n_modalities < 2) throw ParameterError("n_modalities must be at least 2, got " + std::to_string(n_modalities));
  if (n_residual_blocks != 5) throw ParameterError("the encoder has exactly 5 residual blocks");
  if (downsample_factor < 1 || (downsample_factor & (downsample_factor - 1)) != 0)
    throw ParameterError("downsample_factor must be a power of 2, got " + std::to_string(downsample_factor));
  if (n_downsample_blocks() > n_residual_blocks - 1)
    throw ParameterError("downsample_factor " + std::to_string(downsample_factor) + " needs more than 4 stride-2 blocks");
  if (base_channels <= 0 || latent_channels <= 0) throw ParameterError("channel widths must be positive");
}

int EncoderConfig::n_downsample_blocks() const {
  int n = 0;
  for (Index f = downsample_factor; f > 1; f >>= 1) ++n;
  return n;
}

template <typename S>
Var<S> FeatureSet<S>::map(int slot) const {
  const auto& v = slot == 0 ? complementary : specific.at(static_cast<std::size_t>(slot - 1));
  return v ? *v : constant(Tensor<S>(latent_shape));
}

template <typename S>
bool FeatureSet<S>::present(int slot) const {
  return slot == 0 ? complementary.has_value() : specific.at(static_cast<std::size_t>(slot - 1)).has_value();
}

template <typename S>
ConvEncoder<S>::ConvEncoder(ParameterStore<S>& store, const std::string& name, Index in_channels,
                            const EncoderConfig& config, Rng& rng)
    : in_channels_(in_channels), factor_(config.downsample_factor) {
  config.validate();
  const int n_down = config.n_downsample_blocks();
  Index width = config.base_channels;
  blocks_.emplace_back(store, name + ".block0", in_channels, width, 1, rng);
  for (int b = 1; b < config.n_residual_blocks; ++b) {
    const bool down = b <= n_down;
    const bool last = b == config.n_residual_blocks - 1;
    const Index out = last ? config.latent_channels : (down ? width * 2 : width);
    blocks_.emplace_back(store, name + ".block" + std::to_string(b), width, out, down ? 2 : 1, rng);
    width = out;
  }
}

template <typename S>
Var<S> ConvEncoder<S>::operator()(const Var<S>& x) const {
  if (x.value().rank() != 3 || x.dim(0) != in_channels_)
    throw ShapeError("encoder expects [" + std::to_string(in_channels_) + ", H, W], got " + shape_string(x.shape()));
  if (x.dim(1) % factor_ != 0 || x.dim(2) % factor_ != 0)
    throw ShapeError("input " + std::to_string(x.dim(1)) + "x" + std::to_string(x.dim(2)) +
                     " is not divisible by the downsample factor " + std::to_string(factor_));
  ++*calls_;
  Var<S> h = x;
  for (const auto& block : blocks_) h = block(h);
  return h;
}

template <typename S>
HybridEncoder<S>::HybridEncoder(ParameterStore<S>& store, const std::string& name, const EncoderConfig& config,
                                Rng& rng, bool use_specific, bool use_complementary)
    : config_(config) {
  config.validate();
  if (!use_specific && !use_complementary) throw ParameterError("at least one encoder pathway is required");
  if (use_specific)
    for (int i = 0; i < config.n_modalities; ++i)
      specific_.emplace_back(store, name + ".specific" + std::to_string(i), 1, config, rng);
  if (use_complementary) complementary_.emplace(store, name + ".complementary", config.n_modalities, config, rng);
}

template <typename S>
void HybridEncoder<S>::check_inputs(const std::vector<Var<S>>& images, const AvailabilityMask& mask) const {
  if (static_cast<int>(images.size()) != config_.n_modalities || mask.size() != config_.n_modalities)
    throw ShapeError("expected " + std::to_string(config_.n_modalities) + " images and mask bits, got " +
                     std::to_string(images.size()) + " and " + std::to_string(mask.size()));
  for (const auto& im : images)
    if (im.shape() != images.front().shape() || im.value().rank() != 2)
      throw ShapeError("input images must share one [H, W] shape, got " + shape_string(im.shape()));
}

template <typename S>
Var<S> HybridEncoder<S>::encode_modality_specific(const Var<S>& x, int i) const {
  if (!has_specific()) throw ContractError("this encoder has no modality-specific pathway");
  if (x.value().rank() != 2) throw ShapeError("modality image must be [H, W], got " + shape_string(x.shape()));
  return specific(i)(reshape(x, {1, x.dim(0), x.dim(1)}));
}

template <typename S>
std::optional<Var<S>> HybridEncoder<S>::encode_complementary(const std::vector<Var<S>>& images,
                                                             const AvailabilityMask& mask) const {
  check_inputs(images, mask);
  if (!has_complementary()) return std::nullopt;
  const int gate = has_specific() ? 1 : 0;
  if (mask.count() <= gate) return std::nullopt;
  std::vector<Var<S>> channels;
  channels.reserve(images.size());
  for (int i = 0; i < mask.size(); ++i)
    channels.push_back(mask[i] ? images[static_cast<std::size_t>(i)]
                               : constant(Tensor<S>(images[static_cast<std::size_t>(i)].shape())));
  return (*complementary_)(stack(channels));
}

template <typename S>
FeatureSet<S> HybridEncoder<S>::encode(const std::vector<Var<S>>& images, const AvailabilityMask& mask) const {
  check_inputs(images, mask);
  const Index h = images.front().dim(0), w = images.front().dim(1);
  if (h % config_.downsample_factor != 0 || w % config_.downsample_factor != 0)
    throw ShapeError("input " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by the downsample factor " +
                     std::to_string(config_.downsample_factor));
  FeatureSet<S> f;
  f.availability = mask;
  f.latent_shape = {config_.latent_channels, h / config_.downsample_factor, w / config_.downsample_factor};
  f.specific.resize(static_cast<std::size_t>(config_.n_modalities));
  if (has_specific())
    for (int i = 0; i < config_.n_modalities; ++i)
      if (mask[i]) f.specific[static_cast<std::size_t>(i)] = encode_modality_specific(images[static_cast<std::size_t>(i)], i);
  f.complementary = encode_complementary(images, mask);
  return f;
}

template struct FeatureSet<float>;
template struct FeatureSet<double>;
template class ConvEncoder<float>;
template class ConvEncoder<double>;
template class HybridEncoder<float>;
template class HybridEncoder<double>;

}  // namespace hfgan
