#include "hfgan/caff.hpp"

namespace hfgan {

template <typename S>
ChannelAttention<S>::ChannelAttention(ParameterStore<S>& store, const std::string& name, Index kernel, Rng& rng) {
  if (kernel % 2 == 0) throw ParameterError("channel attention kernel must be odd, got " + std::to_string(kernel));
  kernel1 = store.create_uniform(name + ".conv1.weight", {kernel}, kernel, rng);
  bias1 = store.create(name + ".conv1.bias", {1});
  kernel2 = store.create_uniform(name + ".conv2.weight", {kernel}, kernel, rng);
  bias2 = store.create(name + ".conv2.bias", {1});
}

template <typename S>
Var<S> ChannelAttention<S>::from_pooled(const Var<S>& pooled) const {
  return sigmoid(conv1d_vector(silu(conv1d_vector(pooled, kernel1, bias1)), kernel2, bias2));
}

template <typename S>
Var<S> ChannelAttention<S>::operator()(const Var<S>& feature) const {
  return from_pooled(global_avg_pool(feature));
}

template <typename S>
Var<S> fuse_primary(const std::vector<Var<S>>& maps, const std::vector<Var<S>>& weights) {
  if (maps.empty() || maps.size() != weights.size()) throw ShapeError("fuse_primary needs one weight per map");
  std::vector<Var<S>> terms;
  terms.reserve(maps.size());
  for (std::size_t i = 0; i < maps.size(); ++i) terms.push_back(scale_channels(maps[i], weights[i]));
  return sum_all(terms);
}

template <typename S>
std::vector<Var<S>> renormalize_importance(const std::vector<Var<S>>& weights) {
  if (weights.empty()) throw ContractError("residual fusion needs at least one available modality");
  if (weights.size() == 1) return {constant(Tensor<S>::constant(weights.front().shape(), S(1)))};
  Var<S> normalized = softmax(stack(weights), 0);
  std::vector<Var<S>> out;
  out.reserve(weights.size());
  for (Index i = 0; i < static_cast<Index>(weights.size()); ++i) out.push_back(select(normalized, i));
  return out;
}

template <typename S>
Var<S> fuse_residual(const std::optional<Var<S>>& f0, const std::vector<Var<S>>& maps,
                     const std::vector<Var<S>>& weights) {
  if (maps.size() != weights.size()) throw ShapeError("fuse_residual needs one weight per map");
  const auto renorm = renormalize_importance(weights);
  std::vector<Var<S>> terms;
  if (f0) terms.push_back(*f0);
  for (std::size_t i = 0; i < maps.size(); ++i) terms.push_back(scale_channels(maps[i], renorm[i]));
  return sum_all(terms);
}

template <typename S>
FeatureFusion<S>::FeatureFusion(ParameterStore<S>& store, const std::string& name, Index channels, int n_modalities,
                                FusionMode mode, Rng& rng, Index attention_kernel)
    : mode_(mode) {
  if (mode == FusionMode::summation) {
    projection_ = Conv2d<S>(store, name + ".projection", channels, channels, 1, 1, 0, rng);
    return;
  }
  for (int slot = 0; slot <= n_modalities; ++slot)
    attention_.emplace_back(store, name + ".attention" + std::to_string(slot), attention_kernel, rng);
  projection_ = Conv2d<S>(store, name + ".projection", 2 * channels, channels, 1, 1, 0, rng);
}

template <typename S>
Var<S> FeatureFusion<S>::channel_attention(const Var<S>& feature, int slot) const {
  return attention_.at(static_cast<std::size_t>(slot))(feature);
}

template <typename S>
Var<S> FeatureFusion<S>::project(const Var<S>& primary, const Var<S>& residual) const {
  if (primary.shape() != residual.shape())
    throw ShapeError("projection inputs differ: " + shape_string(primary.shape()) + " vs " +
                     shape_string(residual.shape()));
  return projection_(concat<S>({primary, residual}));
}

template <typename S>
Var<S> FeatureFusion<S>::operator()(const FeatureSet<S>& features) const {
  const AvailabilityMask& mask = features.availability;
  if (mask.count() == 0) throw ContractError("feature fusion needs at least one available modality");
  std::vector<int> slots;
  for (int i = 1; i <= mask.size(); ++i)
    if (mask[i - 1] && features.present(i)) slots.push_back(i);

  if (mode_ == FusionMode::summation) {
    std::vector<Var<S>> terms;
    if (features.complementary) terms.push_back(*features.complementary);
    for (int i : slots) terms.push_back(features.map(i));
    if (terms.empty()) return projection_(constant(Tensor<S>(features.latent_shape)));
    return projection_(sum_all(terms));
  }

  std::vector<Var<S>> maps, weights;
  if (features.complementary) {
    maps.push_back(*features.complementary);
    weights.push_back(channel_attention(*features.complementary, 0));
  }
  std::vector<Var<S>> specific_maps, specific_weights;
  for (int i : slots) {
    specific_maps.push_back(features.map(i));
    specific_weights.push_back(channel_attention(specific_maps.back(), i));
    maps.push_back(specific_maps.back());
    weights.push_back(specific_weights.back());
  }
  if (maps.empty()) return project(constant(Tensor<S>(features.latent_shape)), constant(Tensor<S>(features.latent_shape)));
  const Var<S> primary = fuse_primary(maps, weights);
  const Var<S> residual = specific_maps.empty() ? *features.complementary
                                                : fuse_residual(features.complementary, specific_maps, specific_weights);
  return project(primary, residual);
}

#define HFGAN_INSTANTIATE_CAFF(S)                                                                        \
  template struct ChannelAttention<S>;                                                                   \
  template class FeatureFusion<S>;                                                                       \
  template Var<S> fuse_primary(const std::vector<Var<S>>&, const std::vector<Var<S>>&);                  \
  template std::vector<Var<S>> renormalize_importance(const std::vector<Var<S>>&);                       \
  template Var<S> fuse_residual(const std::optional<Var<S>>&, const std::vector<Var<S>>&, const std::vector<Var<S>>&);

HFGAN_INSTANTIATE_CAFF(float)
HFGAN_INSTANTIATE_CAFF(double)

}  // namespace hfgan
