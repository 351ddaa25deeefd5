#pragma once

// Modality infuser: patch tokens of the common latent, shifted by learnable
// positional, modality and optional intensity encodings, refined by pre-norm
// transformer blocks and folded back to the latent grid.

#include <optional>
#include <string>
#include <vector>

#include "hfgan/nn.hpp"

namespace hfgan {

struct InfuserConfig {
  int n_modalities = 4;
  Index latent_channels = 128;  // c
  Index latent_height = 16;
  Index latent_width = 16;
  Index token_dim = 256;  // C
  Index n_heads = 8;
  Index patch_size = 1;
  Index mlp_ratio = 4;
  int n_blocks = 4;
  bool use_intensity_encoding = false;

  void validate() const;
  Index n_tokens() const { return (latent_height / patch_size) * (latent_width / patch_size); }
};

/// LN -> MHA -> residual, LN -> MLP(GELU) -> residual.
template <typename S>
struct TransformerBlock {
  LayerNorm<S> norm1, norm2;
  Linear<S> query, key, value, out, fc1, fc2;
  Index heads = 1;

  TransformerBlock() = default;
  TransformerBlock(ParameterStore<S>& store, const std::string& name, Index width, Index heads, Index mlp_ratio,
                   Rng& rng);

  /// [M, C] -> [M, C].
  Var<S> operator()(const Var<S>& tokens) const;
  /// Self-attention sublayer output (before its residual add) on normalized input.
  Var<S> attention(const Var<S>& normalized) const;
};

/// Two-layer perceptron: in -> C -> SiLU -> C.
template <typename S>
struct EncodingMlp {
  Linear<S> fc1, fc2;

  EncodingMlp() = default;
  EncodingMlp(ParameterStore<S>& store, const std::string& name, Index in, Index out, Rng& rng);
  Var<S> operator()(const Var<S>& x) const { return fc2(silu(fc1(x))); }
};

template <typename S>
class Infuser {
 public:
  Infuser() = default;
  Infuser(ParameterStore<S>& store, const std::string& name, const InfuserConfig& config, Rng& rng);

  /// [c, h, w] -> [M, C], non-overlapping p x p patches in row-major order.
  Var<S> tokenize(const Var<S>& z) const;
  /// One-hot of target `t` (zero-based) through the ME perceptron.
  Var<S> encode_modality(int t) const;
  /// Scalar prior through the IE perceptron.
  Var<S> encode_intensity(S prior) const;
  /// s0 = tokens + PE + ME (+ IE), then the transformer stack. ME and IE may be empty.
  Var<S> infuse(const Var<S>& tokens, const std::optional<Var<S>>& me, const std::optional<Var<S>>& ie) const;
  /// [M, C] -> [c, h, w].
  Var<S> untokenize(const Var<S>& tokens) const;

  /// Full path z -> z_t. `use_modality = false` omits ME (common-latent decoding).
  Var<S> operator()(const Var<S>& z, int t, std::optional<S> prior = std::nullopt, bool use_modality = true) const;

  const InfuserConfig& config() const { return config_; }
  const Var<S>& positional_encoding() const { return positional_; }
  const std::vector<TransformerBlock<S>>& blocks() const { return blocks_; }

 private:
  InfuserConfig config_;
  Linear<S> patch_embed_, unpatch_;
  Var<S> positional_;
  EncodingMlp<S> modality_mlp_;
  std::optional<EncodingMlp<S>> intensity_mlp_;
  std::vector<TransformerBlock<S>> blocks_;
};

}  // namespace hfgan
