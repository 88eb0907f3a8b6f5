// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "stemfit/ndgrad/tensor.hpp"

// Differentiable operations. Every op records a backprop node when gradients
// are enabled and any input requires them.
//
// Binary elementwise ops accept equal shapes or a right/left operand whose
// shape is a trailing suffix of the other's (a bias row, a per-feature scale,
// a scalar); the smaller operand is repeated over the leading axes.
namespace stemfit::ndgrad {

template <class T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T> BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <class T> BasicTensor<T> scale(const BasicTensor<T>& x, T factor);
template <class T> BasicTensor<T> add_scalar(const BasicTensor<T>& x, T offset);
template <class T> BasicTensor<T> neg(const BasicTensor<T>& x);

template <class T> BasicTensor<T> relu(const BasicTensor<T>& x);
// Exact (erf) form.
template <class T> BasicTensor<T> gelu(const BasicTensor<T>& x);
template <class T> BasicTensor<T> exp(const BasicTensor<T>& x);
// Natural log of max(x, 1e-12); the floor keeps the result finite.
template <class T> BasicTensor<T> log(const BasicTensor<T>& x);

// 2-D products: [m x k] . [k x n], and [m x k] . [n x k]^T.
template <class T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T> BasicTensor<T> matmul_bt(const BasicTensor<T>& a, const BasicTensor<T>& b);

// Last-axis reductions and normalizations.
template <class T> BasicTensor<T> softmax(const BasicTensor<T>& x);
template <class T> BasicTensor<T> log_softmax(const BasicTensor<T>& x);
template <class T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                          const BasicTensor<T>& bias, T eps = T(1e-5));
// x / max(||x||, eps) per row.
template <class T> BasicTensor<T> l2_normalize(const BasicTensor<T>& x, T eps = T(1e-12));

template <class T> BasicTensor<T> sum(const BasicTensor<T>& x);
template <class T> BasicTensor<T> mean(const BasicTensor<T>& x);
template <class T> BasicTensor<T> sum(const BasicTensor<T>& x, std::size_t axis);
template <class T> BasicTensor<T> mean(const BasicTensor<T>& x, std::size_t axis);

// sum((a - b)^2) as a scalar.
template <class T> BasicTensor<T> squared_error(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <class T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis);
template <class T>
BasicTensor<T> narrow(const BasicTensor<T>& x, std::size_t axis, std::size_t start,
                      std::size_t length);
template <class T> BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);
// 2-D transpose.
template <class T> BasicTensor<T> transpose(const BasicTensor<T>& x);

// [n x c] -> [n * times x c], each row repeated `times` times in place.
template <class T> BasicTensor<T> repeat_rows(const BasicTensor<T>& x, std::size_t times);

// Scaled dot-product self-attention over `n_seq` stacked sequences of equal
// length. q, k, v are [n_seq * len x d]; columns are split into `n_heads`
// contiguous groups of d / n_heads. Returns the concatenated head outputs,
// [n_seq * len x d]. Equivalent to the composition of narrow, matmul_bt,
// scale, softmax and matmul per sequence and head.
template <class T>
BasicTensor<T> attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v,
                         std::size_t n_seq, std::size_t n_heads);

template <class T>
BasicTensor<T> operator+(const BasicTensor<T>& a, const BasicTensor<T>& b) { return add(a, b); }
template <class T>
BasicTensor<T> operator-(const BasicTensor<T>& a, const BasicTensor<T>& b) { return sub(a, b); }
template <class T>
BasicTensor<T> operator*(const BasicTensor<T>& a, const BasicTensor<T>& b) { return mul(a, b); }

// Value conversion between precisions (no history).
template <class To, class From> BasicTensor<To> cast(const BasicTensor<From>& x);

}  // namespace stemfit::ndgrad
