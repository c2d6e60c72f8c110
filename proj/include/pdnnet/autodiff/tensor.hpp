#pragma once

// Minimal reverse-mode differentiation over dense row-major arrays. A Tensor
// is a shared handle to a tape node; operations record a backward closure on
// their result when any input requires gradients.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace pdn::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

// Disables tape recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first touched
  bool requires_grad = false;
  bool is_leaf = true;
  bool backpropagated = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<T> values) { return make_leaf(std::move(shape), std::move(values), false); }
  static Tensor zeros(Shape shape) {
    const auto n = numel(shape);
    return constant(std::move(shape), std::vector<T>(n, T(0)));
  }
  static Tensor parameter(Shape shape, std::vector<T> values) { return make_leaf(std::move(shape), std::move(values), true); }
  static Tensor scalar(T v) { return constant({}, {v}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::span<const T> values() const { return node_->value; }
  std::span<T> mutable_values() { return node_->value; }
  const std::vector<T>& data() const { return node_->value; }
  // Gradient buffer; zeros if nothing flowed into this tensor.
  std::span<const T> grad() const { return node_->ensure_grad(); }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  bool requires_grad() const { return node_->requires_grad; }
  T item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  // Records an op result; the backward closure receives the result node.
  static Tensor from_op(Shape shape, std::vector<T> values, std::vector<Tensor> inputs,
                        std::function<void(Node<T>&)> backward) {
    Tensor t;
    t.node_ = std::make_shared<Node<T>>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(values);
    t.node_->is_leaf = false;
    const bool any = grad_mode() && std::any_of(inputs.begin(), inputs.end(), [](const Tensor& x) {
                       return x.defined() && x.requires_grad();
                     });
    if (any) {
      t.node_->requires_grad = true;
      for (auto& x : inputs) t.node_->parents.push_back(x.node_);
      t.node_->backward = std::move(backward);
    }
    return t;
  }

 private:
  static Tensor make_leaf(Shape shape, std::vector<T> values, bool requires_grad) {
    if (numel(shape) != values.size())
      throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " + shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<Node<T>>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  std::shared_ptr<Node<T>> node_;
};

class BackwardError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Reverse sweep from a scalar loss. Gradients accumulate (+=) into every
// reachable node, so leaf gradients sum across repeated losses until zeroed.
template <class T>
void backward(const Tensor<T>& loss) {
  Node<T>* root = loss.node();
  if (!root) throw BackwardError("backward on an undefined tensor");
  if (root->value.size() != 1) throw BackwardError("backward needs a scalar loss, got " + shape_str(root->shape));
  if (root->backpropagated) throw BackwardError("backward called twice on the same loss without reset_tape");
  if (!root->requires_grad) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node<T>* p = n->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward) {
      n->ensure_grad();
      n->backward(*n);
    }
  }
  root->backpropagated = true;
}

// Clears intermediate gradients and the loss' backpropagated mark so the
// same graph can be swept again. Leaf gradients are left alone.
template <class T>
void reset_tape(const Tensor<T>& loss) {
  std::vector<Node<T>*> stack{loss.node()};
  std::unordered_set<Node<T>*> seen{loss.node()};
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    if (!n->is_leaf) std::fill(n->grad.begin(), n->grad.end(), T(0));
    for (auto& p : n->parents)
      if (seen.insert(p.get()).second) stack.push_back(p.get());
  }
  loss.node()->backpropagated = false;
}

}  // namespace pdn::ad
