#pragma once

// Differentiable free functions. Shapes follow the Tensor conventions:
// feature maps [C, H, W], token sequences [M, C], vectors [C], scalars [1].

#include <optional>
#include <vector>

#include "hfgan/autograd.hpp"

namespace hfgan {

// Elementwise arithmetic (identical shapes).
template <typename S> Var<S> add(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> sub(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> mul(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> scale(const Var<S>& a, S factor);
template <typename S> Var<S> add_scalar(const Var<S>& a, S offset);

template <typename S> Var<S> operator+(const Var<S>& a, const Var<S>& b) { return add(a, b); }
template <typename S> Var<S> operator-(const Var<S>& a, const Var<S>& b) { return sub(a, b); }
template <typename S> Var<S> operator*(const Var<S>& a, const Var<S>& b) { return mul(a, b); }
template <typename S> Var<S> operator*(const Var<S>& a, S s) { return scale(a, s); }
template <typename S> Var<S> operator*(S s, const Var<S>& a) { return scale(a, s); }

/// Sum of a non-empty list of same-shape values.
template <typename S> Var<S> sum_all(const std::vector<Var<S>>& terms);

/// x[m, :] + v for every row m.
template <typename S> Var<S> add_row_broadcast(const Var<S>& x, const Var<S>& v);
/// x[c, ...] * m[c]: per-channel weights broadcast over the remaining axes.
template <typename S> Var<S> scale_channels(const Var<S>& x, const Var<S>& m);

// Activations.
template <typename S> Var<S> silu(const Var<S>& x);
template <typename S> Var<S> leaky_relu(const Var<S>& x, S slope);
template <typename S> Var<S> tanh(const Var<S>& x);
template <typename S> Var<S> sigmoid(const Var<S>& x);
template <typename S> Var<S> gelu(const Var<S>& x);
template <typename S> Var<S> exp(const Var<S>& x);
/// log(sigmoid(x)) evaluated without overflow.
template <typename S> Var<S> log_sigmoid(const Var<S>& x);

// Structure.
template <typename S> Var<S> reshape(const Var<S>& x, Shape shape);
template <typename S> Var<S> transpose(const Var<S>& x);
/// Concatenate along the leading axis.
template <typename S> Var<S> concat(const std::vector<Var<S>>& parts);
/// Stack same-shape values along a new leading axis.
template <typename S> Var<S> stack(const std::vector<Var<S>>& parts);
/// x[i, ...] along the leading axis.
template <typename S> Var<S> select(const Var<S>& x, Index i);
/// Non-overlapping p x p patches of a [c, h, w] map as rows of [M, c*p*p], row-major patch order.
template <typename S> Var<S> unfold_patches(const Var<S>& z, Index patch);
/// Inverse of unfold_patches.
template <typename S> Var<S> fold_patches(const Var<S>& tokens, Index channels, Index height, Index width, Index patch);
template <typename S> Var<S> upsample_nearest2x(const Var<S>& x);

// Layers without state.
/// 2D cross-correlation. x [Ci, H, W], weight [Co, Ci, k, k], bias [Co] or empty.
template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, Index stride, Index padding);
/// Single-channel 1D convolution along a vector with zero "same" padding. kernel [k] (odd), bias [1].
template <typename S> Var<S> conv1d_vector(const Var<S>& v, const Var<S>& kernel, const Var<S>& bias);
/// x [M, K] (or [K]) times weight [N, K] transposed plus bias [N].
template <typename S> Var<S> linear(const Var<S>& x, const Var<S>& weight, const Var<S>& bias);
template <typename S> Var<S> instance_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps = S(1e-5));
/// Normalizes every row of [M, C].
template <typename S> Var<S> layer_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps = S(1e-5));
/// [C, H, W] -> [C].
template <typename S> Var<S> global_avg_pool(const Var<S>& x);
/// Softmax of a rank-2 value along `axis` (0: down columns, 1: along rows).
template <typename S> Var<S> softmax(const Var<S>& x, int axis);
/// Scaled dot-product self-attention with the channel axis split into `heads`
/// groups. q, k, v are [M, C]; the result is [M, C] with heads concatenated.
template <typename S> Var<S> multi_head_attention(const Var<S>& q, const Var<S>& k, const Var<S>& v, Index heads);
/// Attention probabilities per head, [heads] x [M, M]. Not differentiable.
template <typename S>
std::vector<RowMatrix<S>> attention_probabilities(const Tensor<S>& q, const Tensor<S>& k, Index heads);

// Reductions and losses (scalar outputs of shape [1]).
template <typename S> Var<S> sum(const Var<S>& x);
template <typename S> Var<S> mean(const Var<S>& x);
template <typename S> Var<S> mean_abs_diff(const Var<S>& a, const Var<S>& b);
/// (a . b) / (|a| |b| + eps) over the flattened values.
template <typename S> Var<S> cosine_similarity(const Var<S>& a, const Var<S>& b, S eps = S(1e-8));
/// -log softmax(logits)[label], label zero-based.
template <typename S> Var<S> cross_entropy(const Var<S>& logits, Index label);

}  // namespace hfgan
