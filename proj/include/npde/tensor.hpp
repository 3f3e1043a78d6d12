#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "npde/error.hpp"

namespace npde {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorNode;

/// Receives the gradient of the node's output and accumulates into inputs.
template <typename T>
using BackwardFn = std::function<void(std::span<const T> grad_out)>;

/// One vertex of the computation graph. Nodes are created in a strictly
/// increasing sequence, so a node's inputs always have smaller `seq`.
template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  bool consumed = false;
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> inputs;
  BackwardFn<T> backward;

  bool is_leaf() const { return inputs.empty() && !backward; }
  std::span<T> ensure_grad();
};

/// Dense row-major tensor handle. Copies share storage; results of forward
/// ops are never written to after creation.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }
  static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t size(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() & { return node_->data; }
  std::span<const T> data() const& { return node_->data; }
  // A span into a temporary tensor would dangle.
  std::span<T> data() && = delete;
  T* raw() { return node_->data.data(); }
  const T* raw() const { return node_->data.data(); }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; empty span when no gradient has been accumulated.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad; }
  void zero_grad();

  /// Deep copy without graph history.
  Tensor detach_copy() const;

  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<TensorNode<T>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

/// Graph recording toggle for the current thread.
bool grad_enabled();

/// Disables graph recording in scope (evaluation, rollouts).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds an op result. The backward closure is attached only when graph
/// recording is on and at least one input requires a gradient.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::initializer_list<const Tensor<T>*> inputs, const char* op,
                      BackwardFn<T> backward);

/// Reverse-mode sweep from a scalar loss. Visits every reachable node once in
/// reverse creation order, accumulates into leaf gradients, then releases the
/// graph. Calling it again on the same loss throws UsageError.
template <typename T>
void backward(const Tensor<T>& loss);

/// Number of nodes visited by the most recent backward() on this thread.
std::size_t last_backward_node_count();

}  // namespace npde
