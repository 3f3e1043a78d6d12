#include "npde/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace npde {

namespace {

thread_local bool t_grad_enabled = true;
thread_local std::uint64_t t_next_seq = 1;
thread_local std::size_t t_last_backward_nodes = 0;

template <typename T>
bool all_finite(std::span<const T> v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
std::span<T> TensorNode<T>::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), T{0});
  return grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<TensorNode<T>>()) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  node_->data.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
  node_->seq = t_next_seq++;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : node_(std::make_shared<TensorNode<T>>()) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " elements");
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->seq = t_next_seq++;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T{0});
}

template <typename T>
Tensor<T> Tensor<T>::detach_copy() const {
  return Tensor(node_->shape, node_->data);
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

std::size_t last_backward_node_count() { return t_last_backward_nodes; }

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::initializer_list<const Tensor<T>*> inputs, const char* op,
                      BackwardFn<T> backward_fn) {
#ifndef NDEBUG
  if (!all_finite<T>(data)) {
    bool inputs_finite = true;
    for (const auto* in : inputs) {
      if (in->defined()) inputs_finite = inputs_finite && all_finite<T>(in->data());
    }
    if (inputs_finite) throw NumericalError(std::string("non-finite output from op ") + op);
  }
#endif
  Tensor<T> out(std::move(shape), std::move(data));
  auto& node = *out.node();
  node.op = op;
  if (!t_grad_enabled) return out;
  bool any = false;
  for (const auto* in : inputs) any = any || (in->defined() && in->requires_grad());
  if (!any) return out;
  node.requires_grad = true;
  for (const auto* in : inputs) {
    if (in->defined() && in->requires_grad()) node.inputs.push_back(in->node());
  }
  node.backward = std::move(backward_fn);
  return out;
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw UsageError("backward on undefined tensor");
  if (loss.numel() != 1) {
    throw UsageError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  auto root = loss.node();
  if (root->consumed) {
    throw UsageError("backward called twice on the same graph; run forward again");
  }
  if (!root->requires_grad) {
    throw UsageError("loss does not depend on any tensor that requires a gradient");
  }

  // Shared ownership keeps every node alive while closures are released.
  using NodePtr = std::shared_ptr<TensorNode<T>>;
  std::vector<NodePtr> order;
  std::unordered_set<TensorNode<T>*> seen;
  std::vector<NodePtr> stack{root};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    for (auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in);
    }
    order.push_back(std::move(n));
  }
  std::sort(order.begin(), order.end(),
            [](const NodePtr& a, const NodePtr& b) { return a->seq > b->seq; });

  root->ensure_grad()[0] += T{1};
  for (auto& n : order) {
    if (n->backward && !n->grad.empty()) n->backward(std::span<const T>(n->grad));
  }
  t_last_backward_nodes = order.size();

  // Release the graph: closures hold saved intermediates.
  for (auto& n : order) {
    if (n->is_leaf()) continue;
    n->backward = nullptr;
    n->inputs.clear();
    n->consumed = true;
    if (n != root) std::vector<T>().swap(n->grad);
  }
}

template class Tensor<float>;
template class Tensor<double>;
template struct TensorNode<float>;
template struct TensorNode<double>;
template Tensor<float> make_result(Shape, std::vector<float>,
                                   std::initializer_list<const Tensor<float>*>, const char*,
                                   BackwardFn<float>);
template Tensor<double> make_result(Shape, std::vector<double>,
                                    std::initializer_list<const Tensor<double>*>, const char*,
                                    BackwardFn<double>);
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

}  // namespace npde
