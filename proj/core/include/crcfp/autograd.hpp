#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "crcfp/tensor.hpp"

namespace crcfp {

/// One value in the reverse-mode computation graph.
///
/// `backward` reads `grad` of this node and accumulates into the gradients
/// of `inputs`. Leaves (parameters and constants) have no backward function.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  /// Gradient buffer, allocated as zeros on first use.
  Tensor& grad_buffer();
};

/// Handle to a graph node with value semantics for the handle itself.
class Var {
 public:
  Var() = default;

  /// A leaf that never receives gradients.
  static Var constant(Tensor value);
  /// A leaf whose gradient is accumulated by `backward`.
  static Var parameter(Tensor value);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  /// Gradient accumulated by the last `backward` call (zeros if none).
  const Tensor& grad() const { return node_->grad_buffer(); }
  void zero_grad();

  /// New constant leaf sharing no graph history with this one.
  Var detach() const { return constant(node_->value); }

  /// Scalar value of a single-element tensor.
  double item() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  friend Var make_result(Tensor, std::vector<Var>, std::function<void(Node&)>);

  std::shared_ptr<Node> node_;
};

/// Creates a non-leaf node. The backward function is kept only when some
/// input requires a gradient.
Var make_result(Tensor value, std::vector<Var> inputs,
                std::function<void(Node&)> backward);

/// Backpropagates from a single-element root with seed gradient 1.
void backward(const Var& root);

/// While alive, results on this thread record no graph history.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool active();

 private:
  bool previous_;
};

}  // namespace crcfp
