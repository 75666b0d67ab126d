#include "amplify/tensor.hpp"

#include <algorithm>
#include <unordered_set>

namespace amplify {

size_t shape_numel(const Shape& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor make_tensor(Shape shape, std::vector<Real> data) {
  auto node = std::make_shared<detail::Node>();
  if (shape_numel(shape) != data.size())
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  node->shape = std::move(shape);
  node->data = std::move(data);
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), Real(0), requires_grad);
}

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  size_t n = shape_numel(shape);
  Tensor t = make_tensor(std::move(shape), std::vector<Real>(n, value));
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<Real> data,
                         bool requires_grad) {
  Tensor t = make_tensor(std::move(shape), std::move(data));
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::scalar(Real value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

void Tensor::backward() const {
  if (size() != 1)
    throw ContractError("backward() root must be scalar, got shape " +
                        shape_str(shape()));

  // Iterative post-order DFS for the reverse topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->grad_data()[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn();
  }
}

}  // namespace amplify
