#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "amplify/common.hpp"

namespace amplify {

using Shape = std::vector<size_t>;

size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

/// One value in the define-by-run graph. Nodes are created by ops, hold the
/// forward result, and know how to push their gradient into their parents.
/// Data is immutable once the node participates in a graph; only Parameter
/// leaves are rewritten (by the optimizer, between graphs).
struct Node {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward_fn;

  size_t size() const { return data.size(); }

  Real* grad_data() {
    if (grad.empty()) grad.assign(data.size(), Real(0));
    return grad.data();
  }
};

}  // namespace detail

/// Dense n-dimensional array of Real with reverse-mode autodiff. Cheap to
/// copy (shared handle). Gradients accumulate additively across fan-out;
/// callers zero grads between optimizer steps.
class Tensor {
 public:
  Tensor() : node_(std::make_shared<detail::Node>()) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<Real> data,
                          bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  size_t ndim() const { return node_->shape.size(); }
  size_t size() const { return node_->data.size(); }

  std::span<const Real> data() const { return node_->data; }
  /// Writable view of the payload. Only for leaves (parameter updates,
  /// buffer initialization); graph intermediates are never mutated.
  std::span<Real> mutable_data() { return node_->data; }

  /// Value of a scalar tensor.
  Real item() const {
    if (size() != 1)
      throw ContractError("item() requires a scalar tensor, got shape " +
                          shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const Real> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.assign(node_->data.size(), Real(0)); }

  /// Reverse-mode accumulation from this scalar root. Grad buffers are
  /// accumulated into, not overwritten: calling twice without zeroing
  /// doubles the gradients.
  void backward() const;

  std::shared_ptr<detail::Node> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node)
      : node_(std::move(node)) {}
  friend Tensor make_tensor(Shape shape, std::vector<Real> data);

  std::shared_ptr<detail::Node> node_;
};

/// Builds a fresh node for op results. Internal to ops.
Tensor make_tensor(Shape shape, std::vector<Real> data);

/// Named trainable tensor. Names are unique within a model and double as
/// checkpoint keys.
struct Parameter {
  std::string name;
  Tensor tensor;

  Parameter(std::string name_, Tensor tensor_)
      : name(std::move(name_)), tensor(std::move(tensor_)) {
    tensor.set_requires_grad(true);
  }
};

}  // namespace amplify
