#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "hfgan/ops.hpp"

namespace hfgan {

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) built from the raw 64-bit stream, so values are
/// identical across standard library implementations.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Box-Muller standard normal on top of uniform01.
inline double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925 * u2);
}

/// Integer in [0, n).
inline int uniform_int(Rng& rng, int n) { return static_cast<int>(uniform01(rng) * n); }

/// Ordered collection of named trainable tensors. Names are the checkpoint keys.
template <typename S>
class ParameterStore {
 public:
  Var<S> create(const std::string& name, Shape shape) {
    if (index_.count(name)) throw ParameterError("duplicate parameter name: " + name);
    Var<S> v(Tensor<S>(std::move(shape)), true);
    index_[name] = entries_.size();
    entries_.emplace_back(name, v);
    return v;
  }

  /// Fan-in scaled uniform in (-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Var<S> create_uniform(const std::string& name, Shape shape, Index fan_in, Rng& rng) {
    Var<S> v = create(name, std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    auto& a = v.mutable_value().array();
    for (Index i = 0; i < a.size(); ++i) a[i] = static_cast<S>(uniform(rng, -bound, bound));
    return v;
  }

  Var<S> create_constant(const std::string& name, Shape shape, S value) {
    Var<S> v = create(name, std::move(shape));
    v.mutable_value().array().setConstant(value);
    return v;
  }

  const std::vector<std::pair<std::string, Var<S>>>& entries() const { return entries_; }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  Var<S> at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ParameterError("unknown parameter: " + name);
    return entries_[it->second].second;
  }

  /// Total scalar count of parameters whose name starts with `prefix`.
  Index count(const std::string& prefix = "") const {
    Index n = 0;
    for (const auto& [name, v] : entries_)
      if (name.compare(0, prefix.size(), prefix) == 0) n += v.size();
    return n;
  }

  void zero_grad() {
    for (auto& [name, v] : entries_) v.zero_grad();
  }
  void set_requires_grad(bool on) {
    for (auto& [name, v] : entries_) v.set_requires_grad(on);
  }

 private:
  std::vector<std::pair<std::string, Var<S>>> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Suspends gradient accumulation into a store for the guard's lifetime.
template <typename S>
class FreezeGuard {
 public:
  explicit FreezeGuard(ParameterStore<S>& store) : store_(store) { store_.set_requires_grad(false); }
  ~FreezeGuard() { store_.set_requires_grad(true); }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  ParameterStore<S>& store_;
};

template <typename S>
struct Conv2d {
  Var<S> weight, bias;
  Index stride = 1, padding = 0;

  Conv2d() = default;
  Conv2d(ParameterStore<S>& store, const std::string& name, Index in, Index out, Index kernel, Index stride_,
         Index padding_, Rng& rng)
      : stride(stride_), padding(padding_) {
    weight = store.create_uniform(name + ".weight", {out, in, kernel, kernel}, in * kernel * kernel, rng);
    bias = store.create(name + ".bias", {out});
  }
  Var<S> operator()(const Var<S>& x) const { return conv2d(x, weight, bias, stride, padding); }
};

template <typename S>
struct Linear {
  Var<S> weight, bias;

  Linear() = default;
  Linear(ParameterStore<S>& store, const std::string& name, Index in, Index out, Rng& rng) {
    weight = store.create_uniform(name + ".weight", {out, in}, in, rng);
    bias = store.create(name + ".bias", {out});
  }
  Var<S> operator()(const Var<S>& x) const { return linear(x, weight, bias); }
};

template <typename S>
struct InstanceNorm {
  Var<S> gamma, beta;

  InstanceNorm() = default;
  InstanceNorm(ParameterStore<S>& store, const std::string& name, Index channels) {
    gamma = store.create_constant(name + ".gamma", {channels}, S(1));
    beta = store.create(name + ".beta", {channels});
  }
  Var<S> operator()(const Var<S>& x) const { return instance_norm(x, gamma, beta); }
};

template <typename S>
struct LayerNorm {
  Var<S> gamma, beta;

  LayerNorm() = default;
  LayerNorm(ParameterStore<S>& store, const std::string& name, Index width) {
    gamma = store.create_constant(name + ".gamma", {width}, S(1));
    beta = store.create(name + ".beta", {width});
  }
  Var<S> operator()(const Var<S>& x) const { return layer_norm(x, gamma, beta); }
};

/// conv3x3(stride) -> IN -> SiLU -> conv3x3 -> IN, plus an identity or 1x1
/// projection skip.
template <typename S>
struct ResidualBlock {
  Conv2d<S> conv1, conv2, skip;
  InstanceNorm<S> norm1, norm2;
  bool project = false;

  ResidualBlock() = default;
  ResidualBlock(ParameterStore<S>& store, const std::string& name, Index in, Index out, Index stride, Rng& rng)
      : conv1(store, name + ".conv1", in, out, 3, stride, 1, rng),
        conv2(store, name + ".conv2", out, out, 3, 1, 1, rng),
        norm1(store, name + ".norm1", out),
        norm2(store, name + ".norm2", out),
        project(in != out || stride != 1) {
    if (project) skip = Conv2d<S>(store, name + ".skip", in, out, 1, stride, 0, rng);
  }

  Var<S> operator()(const Var<S>& x) const {
    Var<S> h = norm2(conv2(silu(norm1(conv1(x)))));
    return add(h, project ? skip(x) : x);
  }
};

}  // namespace hfgan
