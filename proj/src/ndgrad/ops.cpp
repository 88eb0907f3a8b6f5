// SPDX-License-Identifier: Apache-2.0
#include "stemfit/ndgrad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Core>

#include "stemfit/common/error.hpp"

namespace stemfit::ndgrad {

namespace {

template <class T>
using Node = detail::Node<T>;

template <class T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <class T, class Backward>
BasicTensor<T> make_result(Shape shape, std::vector<T> data, const char* op,
                           std::vector<BasicTensor<T>> inputs, Backward&& backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (auto& in : inputs) node->parents.push_back(in.node_ptr());
    node->backward = std::forward<Backward>(backward);
  }
  return BasicTensor<T>::from_node(std::move(node));
}

template <class T>
bool wants(const Node<T>& self, std::size_t i) {
  return self.parents[i]->requires_grad;
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " +
                   to_string(b));
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

void require_rank(const char* op, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(s));
  }
}

void require_nonscalar(const char* op, const Shape& s) {
  if (s.empty() || s.back() == 0) {
    throw ShapeError(std::string(op) + ": needs a non-empty last axis, got " + to_string(s));
  }
}

// Broadcast layout: out index i reads a[i % na] and b[i % nb] where one of
// na, nb equals the output size.
struct Broadcast {
  Shape out;
  std::size_t n = 0, na = 0, nb = 0;
};

Broadcast broadcast(const char* op, const Shape& a, const Shape& b) {
  Broadcast bc;
  if (a == b || is_suffix(b, a)) {
    bc.out = a;
  } else if (is_suffix(a, b)) {
    bc.out = b;
  } else {
    shape_mismatch(op, a, b);
  }
  bc.n = numel_of(bc.out);
  bc.na = numel_of(a);
  bc.nb = numel_of(b);
  return bc;
}

// fwd(a, b) -> value; da(a, b, g) and db(a, b, g) -> partial contributions.
template <class T, class Fwd, class Da, class Db>
BasicTensor<T> binary(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b, Fwd fwd,
                      Da da, Db db) {
  const Broadcast bc = broadcast(op, a.shape(), b.shape());
  std::vector<T> out(bc.n);
  const auto av = a.data();
  const auto bv = b.data();
  if (bc.na == bc.n && bc.nb == bc.n) {
    for (std::size_t i = 0; i < bc.n; ++i) out[i] = fwd(av[i], bv[i]);
  } else {
    for (std::size_t i = 0; i < bc.n; ++i) out[i] = fwd(av[i % bc.na], bv[i % bc.nb]);
  }
  return make_result<T>(bc.out, std::move(out), op, {a, b}, [bc, da, db](Node<T>& self) {
    const auto& pa = *self.parents[0];
    const auto& pb = *self.parents[1];
    const auto& g = self.grad;
    if (pa.requires_grad) {
      auto& ga = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < bc.n; ++i) {
        ga[i % bc.na] += da(pa.data[i % bc.na], pb.data[i % bc.nb], g[i]);
      }
    }
    if (pb.requires_grad) {
      auto& gb = self.parents[1]->ensure_grad();
      for (std::size_t i = 0; i < bc.n; ++i) {
        gb[i % bc.nb] += db(pa.data[i % bc.na], pb.data[i % bc.nb], g[i]);
      }
    }
  });
}

// fwd(x) -> y; dfdx(x, y) -> local derivative.
template <class T, class Fwd, class Deriv>
BasicTensor<T> unary(const char* op, const BasicTensor<T>& x, Fwd fwd, Deriv deriv) {
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return make_result<T>(x.shape(), std::move(out), op, {x}, [deriv](Node<T>& self) {
    auto& gx = self.parents[0]->ensure_grad();
    const auto& xd = self.parents[0]->data;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * deriv(xd[i], self.data[i]);
  });
}

// Splits a shape around `axis` into (outer, length, inner).
struct AxisSplit {
  std::size_t outer = 1, length = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.length = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

void require_axis(const char* op, const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + to_string(s));
  }
}

}  // namespace

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T, T g) { return g; },
      [](T, T, T g) { return g; });
}

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T, T g) { return g; },
      [](T, T, T g) { return -g; });
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y, T g) { return g * y; },
      [](T x, T, T g) { return g * x; });
}

template <class T>
BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y, T g) { return g / y; },
      [](T x, T y, T g) { return -g * x / (y * y); });
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
  return unary<T>(
      "scale", x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <class T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, T offset) {
  return unary<T>(
      "add_scalar", x, [offset](T v) { return v + offset; }, [](T, T) { return T(1); });
}

template <class T>
BasicTensor<T> neg(const BasicTensor<T>& x) {
  return unary<T>(
      "neg", x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  return unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
  return unary<T>(
      "gelu", x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * kInvSqrt2)); },
      [](T v, T) {
        return T(0.5) * (T(1) + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-T(0.5) * v * v);
      });
}

template <class T>
BasicTensor<T> exp(const BasicTensor<T>& x) {
  return unary<T>(
      "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
BasicTensor<T> log(const BasicTensor<T>& x) {
  static constexpr T kFloor = T(1e-12);
  return unary<T>(
      "log", x, [](T v) { return std::log(std::max(v, kFloor)); },
      [](T v, T) { return v > kFloor ? T(1) / v : T(0); });
}

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank("matmul", a.shape(), 2);
  require_rank("matmul", b.shape(), 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) shape_mismatch("matmul", a.shape(), b.shape());
  std::vector<T> out(m * n);
  MatMap<T>(out.data(), m, n).noalias() =
      ConstMatMap<T>(a.data().data(), m, k) * ConstMatMap<T>(b.data().data(), k, n);
  return make_result<T>({m, n}, std::move(out), "matmul", {a, b}, [m, k, n](Node<T>& self) {
    ConstMatMap<T> g(self.grad.data(), m, n);
    if (wants(self, 0)) {
      MatMap<T>(self.parents[0]->ensure_grad().data(), m, k).noalias() +=
          g * ConstMatMap<T>(self.parents[1]->data.data(), k, n).transpose();
    }
    if (wants(self, 1)) {
      MatMap<T>(self.parents[1]->ensure_grad().data(), k, n).noalias() +=
          ConstMatMap<T>(self.parents[0]->data.data(), m, k).transpose() * g;
    }
  });
}

template <class T>
BasicTensor<T> matmul_bt(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank("matmul_bt", a.shape(), 2);
  require_rank("matmul_bt", b.shape(), 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) shape_mismatch("matmul_bt", a.shape(), b.shape());
  std::vector<T> out(m * n);
  MatMap<T>(out.data(), m, n).noalias() =
      ConstMatMap<T>(a.data().data(), m, k) * ConstMatMap<T>(b.data().data(), n, k).transpose();
  return make_result<T>({m, n}, std::move(out), "matmul_bt", {a, b}, [m, k, n](Node<T>& self) {
    ConstMatMap<T> g(self.grad.data(), m, n);
    if (wants(self, 0)) {
      MatMap<T>(self.parents[0]->ensure_grad().data(), m, k).noalias() +=
          g * ConstMatMap<T>(self.parents[1]->data.data(), n, k);
    }
    if (wants(self, 1)) {
      MatMap<T>(self.parents[1]->ensure_grad().data(), n, k).noalias() +=
          g.transpose() * ConstMatMap<T>(self.parents[0]->data.data(), m, k);
    }
  });
}

template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& x) {
  require_nonscalar("softmax", x.shape());
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * n;
    T* o = out.data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) total += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < n; ++j) o[j] /= total;
  }
  return make_result<T>(x.shape(), std::move(out), "softmax", {x}, [rows, n](Node<T>& self) {
    auto& gx = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.data.data() + r * n;
      const T* g = self.grad.data() + r * n;
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[j] * (g[j] - dot);
    }
  });
}

template <class T>
BasicTensor<T> log_softmax(const BasicTensor<T>& x) {
  require_nonscalar("log_softmax", x.shape());
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * n;
    T* o = out.data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(in[j] - mx);
    const T lse = mx + std::log(total);
    for (std::size_t j = 0; j < n; ++j) o[j] = in[j] - lse;
  }
  return make_result<T>(x.shape(), std::move(out), "log_softmax", {x}, [rows, n](Node<T>& self) {
    auto& gx = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.data.data() + r * n;
      const T* g = self.grad.data() + r * n;
      T gsum = 0;
      for (std::size_t j = 0; j < n; ++j) gsum += g[j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += g[j] - std::exp(y[j]) * gsum;
    }
  });
}

template <class T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                          const BasicTensor<T>& bias, T eps) {
  require_nonscalar("layer_norm", x.shape());
  const std::size_t n = x.shape().back();
  if (gain.shape() != Shape{n}) shape_mismatch("layer_norm", x.shape(), gain.shape());
  if (bias.shape() != Shape{n}) shape_mismatch("layer_norm", x.shape(), bias.shape());
  const std::size_t rows = x.numel() / n;
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  std::vector<T> out(xv.size());
  std::vector<T> xhat(xv.size());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * n;
    T mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += in[j];
    mu /= T(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= T(n);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (in[j] - mu) * rstd[r];
      xhat[r * n + j] = h;
      out[r * n + j] = h * gv[j] + bv[j];
    }
  }
  return make_result<T>(
      x.shape(), std::move(out), "layer_norm", {x, gain, bias},
      [rows, n, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        const auto& g = self.grad;
        const auto& gainv = self.parents[1]->data;
        if (wants(self, 1)) {
          auto& gg = self.parents[1]->ensure_grad();
          for (std::size_t i = 0; i < rows * n; ++i) gg[i % n] += g[i] * xhat[i];
        }
        if (wants(self, 2)) {
          auto& gb = self.parents[2]->ensure_grad();
          for (std::size_t i = 0; i < rows * n; ++i) gb[i % n] += g[i];
        }
        if (wants(self, 0)) {
          auto& gx = self.parents[0]->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_d = 0, mean_dh = 0;
            for (std::size_t j = 0; j < n; ++j) {
              const T d = g[r * n + j] * gainv[j];
              mean_d += d;
              mean_dh += d * xhat[r * n + j];
            }
            mean_d /= T(n);
            mean_dh /= T(n);
            for (std::size_t j = 0; j < n; ++j) {
              const T d = g[r * n + j] * gainv[j];
              gx[r * n + j] += rstd[r] * (d - mean_d - xhat[r * n + j] * mean_dh);
            }
          }
        }
      });
}

template <class T>
BasicTensor<T> l2_normalize(const BasicTensor<T>& x, T eps) {
  require_nonscalar("l2_normalize", x.shape());
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  std::vector<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T ss = 0;
    for (std::size_t j = 0; j < n; ++j) ss += xv[r * n + j] * xv[r * n + j];
    norms[r] = std::sqrt(ss);
    const T denom = std::max(norms[r], eps);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = xv[r * n + j] / denom;
  }
  return make_result<T>(x.shape(), std::move(out), "l2_normalize", {x},
                        [rows, n, eps, norms = std::move(norms)](Node<T>& self) {
                          auto& gx = self.parents[0]->ensure_grad();
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* y = self.data.data() + r * n;
                            const T* g = self.grad.data() + r * n;
                            if (norms[r] > eps) {
                              T dot = 0;
                              for (std::size_t j = 0; j < n; ++j) dot += y[j] * g[j];
                              for (std::size_t j = 0; j < n; ++j) {
                                gx[r * n + j] += (g[j] - y[j] * dot) / norms[r];
                              }
                            } else {
                              for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += g[j] / eps;
                            }
                          }
                        });
}

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  return make_result<T>({}, {total}, "sum", {x}, [](Node<T>& self) {
    auto& gx = self.parents[0]->ensure_grad();
    for (auto& g : gx) g += self.grad[0];
  });
}

template <class T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  const T count = T(x.numel());
  T total = 0;
  for (T v : x.data()) total += v;
  return make_result<T>({}, {total / count}, "mean", {x}, [count](Node<T>& self) {
    auto& gx = self.parents[0]->ensure_grad();
    for (auto& g : gx) g += self.grad[0] / count;
  });
}

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x, std::size_t axis) {
  require_axis("sum", x.shape(), axis);
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<T> out(s.outer * s.inner, T(0));
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.length; ++l)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += xv[(o * s.length + l) * s.inner + i];
  return make_result<T>(std::move(out_shape), std::move(out), "sum_axis", {x}, [s](Node<T>& self) {
    auto& gx = self.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t l = 0; l < s.length; ++l)
        for (std::size_t i = 0; i < s.inner; ++i)
          gx[(o * s.length + l) * s.inner + i] += self.grad[o * s.inner + i];
  });
}

template <class T>
BasicTensor<T> mean(const BasicTensor<T>& x, std::size_t axis) {
  require_axis("mean", x.shape(), axis);
  if (x.dim(axis) == 0) throw ShapeError("mean: empty axis in shape " + to_string(x.shape()));
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<T> out(s.outer * s.inner, T(0));
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.length; ++l)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += xv[(o * s.length + l) * s.inner + i];
  const T count = T(s.length);
  for (auto& v : out) v /= count;
  return make_result<T>(std::move(out_shape), std::move(out), "mean_axis", {x},
                        [s, count](Node<T>& self) {
                          auto& gx = self.parents[0]->ensure_grad();
                          for (std::size_t o = 0; o < s.outer; ++o)
                            for (std::size_t l = 0; l < s.length; ++l)
                              for (std::size_t i = 0; i < s.inner; ++i)
                                gx[(o * s.length + l) * s.inner + i] +=
                                    self.grad[o * s.inner + i] / count;
                        });
}

template <class T>
BasicTensor<T> squared_error(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) shape_mismatch("squared_error", a.shape(), b.shape());
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<T> diff(av.size());
  T total = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    diff[i] = av[i] - bv[i];
    total += diff[i] * diff[i];
  }
  return make_result<T>({}, {total}, "squared_error", {a, b},
                        [diff = std::move(diff)](Node<T>& self) {
                          const T g = self.grad[0];
                          if (wants(self, 0)) {
                            auto& ga = self.parents[0]->ensure_grad();
                            for (std::size_t i = 0; i < diff.size(); ++i) ga[i] += T(2) * diff[i] * g;
                          }
                          if (wants(self, 1)) {
                            auto& gb = self.parents[1]->ensure_grad();
                            for (std::size_t i = 0; i < diff.size(); ++i) gb[i] -= T(2) * diff[i] * g;
                          }
                        });
}

template <class T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  require_axis("concat", first, axis);
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> lengths;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) shape_mismatch("concat", first, s);
    lengths.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const AxisSplit total = split_at(out_shape, axis);
  std::vector<T> out(numel_of(out_shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto pv = parts[p].data();
    const std::size_t chunk = lengths[p] * total.inner;
    for (std::size_t o = 0; o < total.outer; ++o) {
      std::copy_n(pv.data() + o * chunk, chunk,
                  out.data() + o * total.length * total.inner + offset * total.inner);
    }
    offset += lengths[p];
  }
  return make_result<T>(out_shape, std::move(out), "concat", parts,
                        [total, lengths](Node<T>& self) {
                          std::size_t offset = 0;
                          for (std::size_t p = 0; p < lengths.size(); ++p) {
                            const std::size_t chunk = lengths[p] * total.inner;
                            if (wants(self, p)) {
                              auto& gp = self.parents[p]->ensure_grad();
                              for (std::size_t o = 0; o < total.outer; ++o) {
                                const T* src = self.grad.data() + o * total.length * total.inner +
                                               offset * total.inner;
                                for (std::size_t i = 0; i < chunk; ++i) gp[o * chunk + i] += src[i];
                              }
                            }
                            offset += lengths[p];
                          }
                        });
}

template <class T>
BasicTensor<T> narrow(const BasicTensor<T>& x, std::size_t axis, std::size_t start,
                      std::size_t length) {
  require_axis("narrow", x.shape(), axis);
  if (start + length > x.dim(axis)) {
    throw ShapeError("narrow: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") exceeds axis " + std::to_string(axis) +
                     " of shape " + to_string(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<T> out(s.outer * length * s.inner);
  const auto xv = x.data();
  const std::size_t chunk = length * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xv.data() + (o * s.length + start) * s.inner, chunk, out.data() + o * chunk);
  }
  return make_result<T>(std::move(out_shape), std::move(out), "narrow", {x},
                        [s, start, chunk](Node<T>& self) {
                          auto& gx = self.parents[0]->ensure_grad();
                          for (std::size_t o = 0; o < s.outer; ++o) {
                            T* dst = gx.data() + (o * s.length + start) * s.inner;
                            const T* src = self.grad.data() + o * chunk;
                            for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                          }
                        });
}

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (numel_of(shape) != x.numel()) shape_mismatch("reshape", x.shape(), shape);
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>(std::move(shape), std::move(out), "reshape", {x}, [](Node<T>& self) {
    auto& gx = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& x) {
  require_rank("transpose", x.shape(), 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<T> out(m * n);
  MatMap<T>(out.data(), n, m) = ConstMatMap<T>(x.data().data(), m, n).transpose();
  return make_result<T>({n, m}, std::move(out), "transpose", {x}, [m, n](Node<T>& self) {
    MatMap<T>(self.parents[0]->ensure_grad().data(), m, n) +=
        ConstMatMap<T>(self.grad.data(), n, m).transpose();
  });
}

template <class T>
BasicTensor<T> repeat_rows(const BasicTensor<T>& x, std::size_t times) {
  require_rank("repeat_rows", x.shape(), 2);
  if (times == 0) throw ShapeError("repeat_rows: times must be positive");
  const std::size_t n = x.dim(0), c = x.dim(1);
  std::vector<T> out(n * times * c);
  const auto xv = x.data();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t t = 0; t < times; ++t) {
      std::copy_n(xv.begin() + r * c, c, out.begin() + (r * times + t) * c);
    }
  }
  return make_result<T>({n * times, c}, std::move(out), "repeat_rows", {x},
                        [n, c, times](Node<T>& self) {
                          auto& gx = self.parents[0]->ensure_grad();
                          for (std::size_t r = 0; r < n; ++r)
                            for (std::size_t t = 0; t < times; ++t)
                              for (std::size_t j = 0; j < c; ++j)
                                gx[r * c + j] += self.grad[(r * times + t) * c + j];
                        });
}

template <class T>
BasicTensor<T> attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v,
                         std::size_t n_seq, std::size_t n_heads) {
  require_rank("attention", q.shape(), 2);
  if (k.shape() != q.shape()) shape_mismatch("attention", q.shape(), k.shape());
  if (v.shape() != q.shape()) shape_mismatch("attention", q.shape(), v.shape());
  const std::size_t rows = q.dim(0), d = q.dim(1);
  if (n_seq == 0 || rows % n_seq != 0) {
    throw ShapeError("attention: " + std::to_string(rows) + " rows do not split into " +
                     std::to_string(n_seq) + " sequences");
  }
  if (n_heads == 0 || d % n_heads != 0) {
    throw ShapeError("attention: width " + std::to_string(d) + " is not divisible by " +
                     std::to_string(n_heads) + " heads");
  }
  const std::size_t len = rows / n_seq, dh = d / n_heads;
  const T inv_scale = T(1) / std::sqrt(static_cast<T>(dh));
  using Stride = Eigen::OuterStride<>;
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Slice = Eigen::Map<Mat, 0, Stride>;
  using ConstSlice = Eigen::Map<const Mat, 0, Stride>;
  auto slice = [=](T* base, std::size_t s, std::size_t h) {
    return Slice(base + s * len * d + h * dh, len, dh, Stride(d));
  };
  auto cslice = [=](const T* base, std::size_t s, std::size_t h) {
    return ConstSlice(base + s * len * d + h * dh, len, dh, Stride(d));
  };

  // Attention weights are kept for the backward pass.
  auto probs = std::make_shared<std::vector<T>>(n_seq * n_heads * len * len);
  std::vector<T> out(rows * d);
  for (std::size_t s = 0; s < n_seq; ++s) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      MatMap<T> a(probs->data() + (s * n_heads + h) * len * len, len, len);
      a.noalias() = cslice(q.data().data(), s, h) * cslice(k.data().data(), s, h).transpose();
      a *= inv_scale;
      // Plain loops: Eigen's vectorised reductions change summation order
      // with pointer alignment, which would make results allocation-dependent.
      for (std::size_t i = 0; i < len; ++i) {
        T* row = a.data() + i * len;
        const T mx = *std::max_element(row, row + len);
        T total = 0;
        for (std::size_t j = 0; j < len; ++j) {
          row[j] = std::exp(row[j] - mx);
          total += row[j];
        }
        for (std::size_t j = 0; j < len; ++j) row[j] /= total;
      }
      slice(out.data(), s, h).noalias() = a * cslice(v.data().data(), s, h);
    }
  }
  return make_result<T>(
      {rows, d}, std::move(out), "attention", {q, k, v},
      [=](Node<T>& self) {
        const T* qd = self.parents[0]->data.data();
        const T* kd = self.parents[1]->data.data();
        const T* vd = self.parents[2]->data.data();
        T* gq = wants(self, 0) ? self.parents[0]->ensure_grad().data() : nullptr;
        T* gk = wants(self, 1) ? self.parents[1]->ensure_grad().data() : nullptr;
        T* gv = wants(self, 2) ? self.parents[2]->ensure_grad().data() : nullptr;
        Mat ga(len, len);
        for (std::size_t s = 0; s < n_seq; ++s) {
          for (std::size_t h = 0; h < n_heads; ++h) {
            ConstMatMap<T> a(probs->data() + (s * n_heads + h) * len * len, len, len);
            auto go = cslice(self.grad.data(), s, h);
            if (gv != nullptr) slice(gv, s, h).noalias() += a.transpose() * go;
            if (gq == nullptr && gk == nullptr) continue;
            ga.noalias() = go * cslice(vd, s, h).transpose();
            // softmax backward: a * (ga - rowsum(ga * a))
            for (std::size_t i = 0; i < len; ++i) {
              T* gr = ga.data() + i * len;
              const T* ar = a.data() + i * len;
              T dot = 0;
              for (std::size_t j = 0; j < len; ++j) dot += gr[j] * ar[j];
              for (std::size_t j = 0; j < len; ++j) gr[j] = ar[j] * (gr[j] - dot);
            }
            ga *= inv_scale;
            if (gq != nullptr) slice(gq, s, h).noalias() += ga * cslice(kd, s, h);
            if (gk != nullptr) slice(gk, s, h).noalias() += ga.transpose() * cslice(qd, s, h);
          }
        }
      });
}

template <class To, class From>
BasicTensor<To> cast(const BasicTensor<From>& x) {
  std::vector<To> out(x.numel());
  std::transform(x.data().begin(), x.data().end(), out.begin(),
                 [](From v) { return static_cast<To>(v); });
  return BasicTensor<To>(x.shape(), std::move(out), x.requires_grad());
}

#define STEMFIT_INSTANTIATE_OPS(T)                                                          \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                \
  template BasicTensor<T> div(const BasicTensor<T>&, const BasicTensor<T>&);                \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                  \
  template BasicTensor<T> add_scalar(const BasicTensor<T>&, T);                             \
  template BasicTensor<T> neg(const BasicTensor<T>&);                                       \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                      \
  template BasicTensor<T> gelu(const BasicTensor<T>&);                                      \
  template BasicTensor<T> exp(const BasicTensor<T>&);                                       \
  template BasicTensor<T> log(const BasicTensor<T>&);                                       \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);             \
  template BasicTensor<T> matmul_bt(const BasicTensor<T>&, const BasicTensor<T>&);          \
  template BasicTensor<T> softmax(const BasicTensor<T>&);                                   \
  template BasicTensor<T> log_softmax(const BasicTensor<T>&);                               \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&,          \
                                     const BasicTensor<T>&, T);                             \
  template BasicTensor<T> l2_normalize(const BasicTensor<T>&, T);                           \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                       \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                      \
  template BasicTensor<T> sum(const BasicTensor<T>&, std::size_t);                          \
  template BasicTensor<T> mean(const BasicTensor<T>&, std::size_t);                         \
  template BasicTensor<T> squared_error(const BasicTensor<T>&, const BasicTensor<T>&);      \
  template BasicTensor<T> concat(const std::vector<BasicTensor<T>>&, std::size_t);          \
  template BasicTensor<T> narrow(const BasicTensor<T>&, std::size_t, std::size_t,           \
                                 std::size_t);                                              \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                            \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                                  \
  template BasicTensor<T> repeat_rows(const BasicTensor<T>&, std::size_t);                  \
  template BasicTensor<T> attention(const BasicTensor<T>&, const BasicTensor<T>&,           \
                                    const BasicTensor<T>&, std::size_t, std::size_t);

STEMFIT_INSTANTIATE_OPS(float)
STEMFIT_INSTANTIATE_OPS(double)
#undef STEMFIT_INSTANTIATE_OPS

template BasicTensor<float> cast(const BasicTensor<double>&);
template BasicTensor<double> cast(const BasicTensor<float>&);
template BasicTensor<float> cast(const BasicTensor<float>&);
template BasicTensor<double> cast(const BasicTensor<double>&);

}  // namespace stemfit::ndgrad
