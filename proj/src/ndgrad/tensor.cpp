// SPDX-License-Identifier: Apache-2.0
#include "stemfit/ndgrad/tensor.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>
#include <unordered_set>

#include "stemfit/common/error.hpp"

namespace stemfit::ndgrad {

namespace {
thread_local bool t_grad_enabled = true;
}

std::size_t numel_of(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

bool grad_enabled() noexcept { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<NodeType>()) {
  if (numel_of(shape) != data.size()) {
    throw ShapeError("tensor: shape " + to_string(shape) + " needs " +
                     std::to_string(numel_of(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <class T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <class T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  const std::size_t n = numel_of(shape);
  return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <class T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return BasicTensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <class T>
BasicTensor<T> BasicTensor<T>::from_node(std::shared_ptr<NodeType> node) {
  BasicTensor t;
  t.node_ = std::move(node);
  return t;
}

template <class T>
typename BasicTensor<T>::NodeType& BasicTensor<T>::node() const {
  if (!node_) throw std::logic_error("tensor: use of an undefined tensor");
  return *node_;
}

template <class T>
const Shape& BasicTensor<T>::shape() const {
  return node().shape;
}

template <class T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                     to_string(s));
  }
  return s[axis];
}

template <class T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw ShapeError("tensor: item() on shape " + to_string(shape()));
  return node().data[0];
}

template <class T>
BasicTensor<T>& BasicTensor<T>::set_requires_grad(bool value) {
  node().requires_grad = value;
  return *this;
}

template <class T>
void BasicTensor<T>::zero_grad() {
  node().grad.clear();
}

template <class T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return BasicTensor(shape(), node().data, false);
}

template <class T>
BasicTensor<T> BasicTensor<T>::clone() const {
  return BasicTensor(shape(), node().data, requires_grad());
}

template <class T>
void BasicTensor<T>::backward() const {
  NodeType& root = node();
  if (root.data.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + to_string(root.shape));
  }
  if (!root.requires_grad) return;

  // Iterative post-order DFS; reverse post-order is a topological order.
  std::vector<NodeType*> order;
  std::unordered_set<NodeType*> visited;
  std::vector<std::pair<NodeType*, std::size_t>> stack;
  stack.emplace_back(&root, 0);
  visited.insert(&root);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      NodeType* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  // Interior gradients are per-sweep; leaf gradients accumulate.
  for (NodeType* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->data.size(), T(0));
  }
  root.ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward(**it);
  }
}

template <class T>
void require_unique_names(const BasicParameterList<T>& params) {
  std::unordered_set<std::string> seen;
  for (const auto& p : params) {
    if (!seen.insert(p.name).second) {
      throw std::invalid_argument("duplicate parameter name '" + p.name + "'");
    }
  }
}

template <class T>
void zero_grads(BasicParameterList<T>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

template <class T>
void copy_values(BasicParameterList<T>& dst, const BasicParameterList<T>& src) {
  std::map<std::string, const BasicTensor<T>*> by_name;
  for (const auto& p : src) by_name.emplace(p.name, &p.tensor);
  if (by_name.size() != dst.size()) {
    throw std::invalid_argument("copy_values: parameter sets differ in size (" +
                                std::to_string(dst.size()) + " vs " +
                                std::to_string(by_name.size()) + ")");
  }
  for (auto& p : dst) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      throw std::invalid_argument("copy_values: no source parameter named '" + p.name + "'");
    }
    if (it->second->shape() != p.tensor.shape()) {
      throw ShapeError("copy_values: '" + p.name + "' shape " + to_string(p.tensor.shape()) +
                       " vs " + to_string(it->second->shape()));
    }
    std::copy(it->second->data().begin(), it->second->data().end(), p.tensor.data().begin());
  }
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template void require_unique_names(const BasicParameterList<float>&);
template void require_unique_names(const BasicParameterList<double>&);
template void zero_grads(BasicParameterList<float>&);
template void zero_grads(BasicParameterList<double>&);
template void copy_values(BasicParameterList<float>&, const BasicParameterList<float>&);
template void copy_values(BasicParameterList<double>&, const BasicParameterList<double>&);

}  // namespace stemfit::ndgrad
