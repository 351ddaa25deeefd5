#pragma once

// Reverse-mode automatic differentiation over Tensor<Scalar>.
//
// Every differentiable operation returns a Var whose node records its inputs
// and a backward closure. backward() walks the graph in reverse topological
// order, accumulating into Node::grad. Parameters are long-lived leaf nodes,
// so their gradients accumulate across calls until zero_grad().

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hfgan/tensor.hpp"

namespace hfgan {

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph construction in its scope (inference, evaluation).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Array1<Scalar>& grad_buffer() {
    if (grad.empty() && value.size() > 0) grad = Tensor<Scalar>::zeros_like(value);
    return grad.array();
  }
  bool input_needs_grad(std::size_t i) const { return inputs[i] && inputs[i]->requires_grad; }
};

template <typename Scalar_>
class Var {
 public:
  using Scalar = Scalar_;
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  Var() = default;
  explicit Var(Tensor<Scalar> value, bool requires_grad = false) : node_(std::make_shared<Node<Scalar>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  explicit operator bool() const { return static_cast<bool>(node_); }

  const Tensor<Scalar>& value() const { return node_->value; }
  Tensor<Scalar>& mutable_value() { return node_->value; }
  const Tensor<Scalar>& grad() const { return node_->grad; }
  Tensor<Scalar>& mutable_grad() { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  const Shape& shape() const { return node_->value.shape(); }
  Index size() const { return node_->value.size(); }
  Index dim(int i) const { return node_->value.dim(i); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad = Tensor<Scalar>(); }

  /// Scalar value of a size-1 tensor.
  Scalar item() const { return node_->value[0]; }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Builds the output of an operation. When gradient mode is on and at least
/// one input requires a gradient, the node keeps its inputs and closure.
template <typename Scalar>
Var<Scalar> make_op(Tensor<Scalar> value, std::vector<Var<Scalar>> inputs,
                    std::function<void(Node<Scalar>&)> backward_fn) {
  auto node = std::make_shared<Node<Scalar>>();
  node->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (auto& in : inputs) node->inputs.push_back(in.node());
      node->backward = std::move(backward_fn);
    }
  }
  return Var<Scalar>(std::move(node));
}

template <typename Scalar>
Var<Scalar> constant(Tensor<Scalar> value) {
  return Var<Scalar>(std::move(value), false);
}

/// Gradient-free copy sharing nothing with the graph.
template <typename Scalar>
Var<Scalar> detach(const Var<Scalar>& x) {
  return Var<Scalar>(x.value(), false);
}

template <typename Scalar>
void backward(const Var<Scalar>& root, const Tensor<Scalar>& seed) {
  if (!root.requires_grad()) return;
  using NodeT = Node<Scalar>;
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> visited;
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      NodeT* child = node->inputs[next++].get();
      if (child && child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->grad_buffer() += seed.array();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  // Intermediate gradients are not needed once propagated.
  for (NodeT* node : order)
    if (node->backward) node->grad = Tensor<Scalar>();
}

template <typename Scalar>
void backward(const Var<Scalar>& root) {
  if (root.size() != 1) throw ShapeError("backward() without a seed needs a scalar root");
  backward(root, Tensor<Scalar>::constant(root.shape(), Scalar(1)));
}

}  // namespace hfgan
