#include "hfgan/infuser.hpp"

namespace hfgan {

void InfuserConfig::validate() const {
  if (n_blocks != 4) throw ParameterError("the infuser has exactly 4 transformer blocks");
  if (token_dim <= 0 || n_heads <= 0 || token_dim % n_heads != 0)
    throw ParameterError("token_dim " + std::to_string(token_dim) + " must be divisible by n_heads " +
                         std::to_string(n_heads));
  if (patch_size <= 0 || latent_height % patch_size != 0 || latent_width % patch_size != 0)
    throw ShapeError("latent " + std::to_string(latent_height) + "x" + std::to_string(latent_width) +
                     " is not divisible by patch size " + std::to_string(patch_size));
  if (mlp_ratio <= 0) throw ParameterError("mlp_ratio must be positive");
}

template <typename S>
TransformerBlock<S>::TransformerBlock(ParameterStore<S>& store, const std::string& name, Index width, Index heads_,
                                      Index mlp_ratio, Rng& rng)
    : norm1(store, name + ".norm1", width),
      norm2(store, name + ".norm2", width),
      query(store, name + ".attn.query", width, width, rng),
      key(store, name + ".attn.key", width, width, rng),
      value(store, name + ".attn.value", width, width, rng),
      out(store, name + ".attn.out", width, width, rng),
      fc1(store, name + ".mlp.fc1", width, width * mlp_ratio, rng),
      fc2(store, name + ".mlp.fc2", width * mlp_ratio, width, rng),
      heads(heads_) {}

template <typename S>
Var<S> TransformerBlock<S>::attention(const Var<S>& normalized) const {
  return out(multi_head_attention(query(normalized), key(normalized), value(normalized), heads));
}

template <typename S>
Var<S> TransformerBlock<S>::operator()(const Var<S>& tokens) const {
  Var<S> h = add(tokens, attention(norm1(tokens)));
  return add(h, fc2(gelu(fc1(norm2(h)))));
}

template <typename S>
EncodingMlp<S>::EncodingMlp(ParameterStore<S>& store, const std::string& name, Index in, Index out, Rng& rng)
    : fc1(store, name + ".fc1", in, out, rng), fc2(store, name + ".fc2", out, out, rng) {}

template <typename S>
Infuser<S>::Infuser(ParameterStore<S>& store, const std::string& name, const InfuserConfig& config, Rng& rng)
    : config_(config) {
  config.validate();
  const Index patch_width = config.latent_channels * config.patch_size * config.patch_size;
  patch_embed_ = Linear<S>(store, name + ".patch_embed", patch_width, config.token_dim, rng);
  positional_ = store.create(name + ".positional", {config.n_tokens(), config.token_dim});
  modality_mlp_ = EncodingMlp<S>(store, name + ".modality", config.n_modalities, config.token_dim, rng);
  if (config.use_intensity_encoding) intensity_mlp_.emplace(store, name + ".intensity", 1, config.token_dim, rng);
  for (int b = 0; b < config.n_blocks; ++b)
    blocks_.emplace_back(store, name + ".block" + std::to_string(b), config.token_dim, config.n_heads,
                         config.mlp_ratio, rng);
  unpatch_ = Linear<S>(store, name + ".unpatch", config.token_dim, patch_width, rng);
}

template <typename S>
Var<S> Infuser<S>::tokenize(const Var<S>& z) const {
  if (z.shape() != Shape{config_.latent_channels, config_.latent_height, config_.latent_width})
    throw ShapeError("infuser expects latent [" + std::to_string(config_.latent_channels) + ", " +
                     std::to_string(config_.latent_height) + ", " + std::to_string(config_.latent_width) + "], got " +
                     shape_string(z.shape()));
  return patch_embed_(unfold_patches(z, config_.patch_size));
}

template <typename S>
Var<S> Infuser<S>::encode_modality(int t) const {
  if (t < 0 || t >= config_.n_modalities)
    throw IndexError("target modality " + std::to_string(t) + " out of range for " +
                     std::to_string(config_.n_modalities) + " modalities");
  Tensor<S> onehot(Shape{config_.n_modalities});
  onehot[t] = S(1);
  return modality_mlp_(constant(onehot));
}

template <typename S>
Var<S> Infuser<S>::encode_intensity(S prior) const {
  if (!intensity_mlp_) throw ContractError("intensity encoding is disabled in this model");
  return (*intensity_mlp_)(constant(Tensor<S>(Shape{1}, prior)));
}

template <typename S>
Var<S> Infuser<S>::infuse(const Var<S>& tokens, const std::optional<Var<S>>& me,
                          const std::optional<Var<S>>& ie) const {
  Var<S> s = add(tokens, positional_);
  if (me) s = add_row_broadcast(s, *me);
  if (ie) s = add_row_broadcast(s, *ie);
  for (const auto& block : blocks_) s = block(s);
  return s;
}

template <typename S>
Var<S> Infuser<S>::untokenize(const Var<S>& tokens) const {
  return fold_patches(unpatch_(tokens), config_.latent_channels, config_.latent_height, config_.latent_width,
                      config_.patch_size);
}

template <typename S>
Var<S> Infuser<S>::operator()(const Var<S>& z, int t, std::optional<S> prior, bool use_modality) const {
  std::optional<Var<S>> me, ie;
  if (use_modality) me = encode_modality(t);
  if (intensity_mlp_) {
    if (!prior) throw PriorError("intensity encoding is enabled but no prior was supplied");
    ie = encode_intensity(*prior);
  }
  return untokenize(infuse(tokenize(z), me, ie));
}

template struct TransformerBlock<float>;
template struct TransformerBlock<double>;
template struct EncodingMlp<float>;
template struct EncodingMlp<double>;
template class Infuser<float>;
template class Infuser<double>;

}  // namespace hfgan
