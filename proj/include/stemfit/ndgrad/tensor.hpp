// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace stemfit::ndgrad {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape) noexcept;
std::string to_string(const Shape& shape);

namespace detail {

template <class T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something is accumulated
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  bool is_leaf() const noexcept { return !backward; }
  std::vector<T>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

// Whether new operations record a backprop graph on this thread.
bool grad_enabled() noexcept;

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Shared handle to a dense row-major array plus its optional backprop record.
// Copying a tensor copies the handle; clone() copies the storage.
template <class T>
class BasicTensor {
 public:
  using value_type = T;
  using NodeType = detail::Node<T>;

  BasicTensor() = default;
  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node().data.size(); }

  std::span<const T> data() const { return node().data; }
  std::span<T> data() { return node().data; }
  T item() const;

  bool requires_grad() const { return node().requires_grad; }
  BasicTensor& set_requires_grad(bool value);

  bool has_grad() const { return node().grad.size() == node().data.size() && numel() > 0; }
  std::span<const T> grad() const { return node().grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();

  // Operation tag of the node that produced this tensor ("leaf" for inputs).
  const char* op() const { return node().op; }

  // Leaf copy without history and without gradient tracking.
  BasicTensor detach() const;
  // Leaf copy that keeps the requires_grad flag.
  BasicTensor clone() const;

  // Reverse-mode sweep from a scalar; accumulates into every reachable leaf
  // that requires gradients.
  void backward() const;

  const std::shared_ptr<NodeType>& node_ptr() const noexcept { return node_; }
  static BasicTensor from_node(std::shared_ptr<NodeType> node);

 private:
  NodeType& node() const;
  std::shared_ptr<NodeType> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

template <class T>
struct BasicParameter {
  std::string name;
  BasicTensor<T> tensor;
  bool decay = true;  // receives decoupled weight decay
};

template <class T>
using BasicParameterList = std::vector<BasicParameter<T>>;

using Parameter = BasicParameter<float>;
using ParameterList = BasicParameterList<float>;

// Throws std::invalid_argument naming the first duplicate.
template <class T>
void require_unique_names(const BasicParameterList<T>& params);

template <class T>
void zero_grads(BasicParameterList<T>& params);

// Copies values by name; name sets and shapes must agree.
template <class T>
void copy_values(BasicParameterList<T>& dst, const BasicParameterList<T>& src);

}  // namespace stemfit::ndgrad
