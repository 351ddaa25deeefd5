#pragma once

// Central finite-difference checks for the autograd engine (double precision).

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "hfgan/nn.hpp"

namespace hfgan::testing {

struct GradCheckResult {
  double max_abs_error = 0.0;
  double max_numeric = 0.0;
  double relative() const { return max_abs_error / std::max(max_numeric, 1e-8); }
};

/// Compares backward() of `loss` against central differences for every leaf
/// in `leaves`. The loss closure must rebuild the graph on each call.
inline GradCheckResult grad_check(const std::function<Var<double>()>& loss, std::vector<Var<double>> leaves,
                                  double h = 1e-6) {
  for (auto& leaf : leaves) leaf.zero_grad();
  Var<double> out = loss();
  backward(out);
  GradCheckResult r;
  for (auto& leaf : leaves) {
    const Tensor<double> analytic = leaf.has_grad() ? leaf.grad() : Tensor<double>::zeros_like(leaf.value());
    auto& x = leaf.mutable_value().array();
    for (Index i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      double plus, minus;
      {
        NoGradGuard ng;
        x[i] = saved + h;
        plus = loss().item();
        x[i] = saved - h;
        minus = loss().item();
      }
      x[i] = saved;
      const double numeric = (plus - minus) / (2 * h);
      r.max_abs_error = std::max(r.max_abs_error, std::abs(numeric - analytic[i]));
      r.max_numeric = std::max(r.max_numeric, std::abs(numeric));
    }
  }
  return r;
}

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = uniform(rng, lo, hi);
  return t;
}

inline Var<double> random_leaf(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return Var<double>(random_tensor(std::move(shape), rng, lo, hi), true);
}

/// Fixed random projection so vector outputs reduce to a generic scalar.
inline Var<double> project_to_scalar(const Var<double>& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  return sum(mul(y, constant(random_tensor(y.shape(), rng))));
}

}  // namespace hfgan::testing
