// SPDX-License-Identifier: Apache-2.0
#include "stemfit/training/losses.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

#include "stemfit/common/error.hpp"
#include "stemfit/common/log.hpp"

namespace stemfit::training {

using ndgrad::Shape;

namespace {

template <class T>
void require_pairs(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || a.shape() != b.shape()) {
    throw ShapeError("contrastive loss: context " + ndgrad::to_string(a.shape()) + " and target " +
                     ndgrad::to_string(b.shape()) + " must both be [N x d]");
  }
  if (a.dim(0) < 2) throw std::invalid_argument("contrastive loss: needs N >= 2 pairs for negatives");
}

// -sum_j logp[i, j] * pos[i, j] per row, i.e. -logp at the positive column.
template <class T>
BasicTensor<T> pick(const BasicTensor<T>& logp, const BasicTensor<T>& positive) {
  return ndgrad::neg(ndgrad::sum(ndgrad::mul(logp, positive), 1));
}

}  // namespace

template <class T>
BasicTensor<T> contrastive_anchor_losses(const BasicTensor<T>& context, const BasicTensor<T>& target,
                                         const BasicTensor<T>& log_tau, ContrastiveMode mode) {
  require_pairs(context, target);
  if (log_tau.numel() != 1) throw ShapeError("contrastive loss: log_tau must be a scalar");
  const std::size_t n = context.dim(0);
  const auto inv_tau = ndgrad::exp(ndgrad::neg(ndgrad::reshape(log_tau, Shape{})));
  if (mode == ContrastiveMode::kFullBatch) {
    const auto b = ndgrad::l2_normalize(ndgrad::concat(std::vector{context, target}, 0));
    auto logits = ndgrad::mul(ndgrad::matmul_bt(b, b), inv_tau);
    // Exclude each anchor from its own denominator with a large negative
    // offset; its softmax weight underflows to exactly zero.
    std::vector<T> mask(4 * n * n, T(0)), positive(4 * n * n, T(0));
    for (std::size_t i = 0; i < 2 * n; ++i) {
      mask[i * 2 * n + i] = T(-1e9);
      positive[i * 2 * n + (i + n) % (2 * n)] = T(1);
    }
    logits = ndgrad::add(logits, BasicTensor<T>({2 * n, 2 * n}, std::move(mask)));
    return pick(ndgrad::log_softmax(logits), BasicTensor<T>({2 * n, 2 * n}, std::move(positive)));
  }
  const auto c = ndgrad::l2_normalize(context);
  const auto t = ndgrad::l2_normalize(target);
  const auto logits = ndgrad::mul(ndgrad::matmul_bt(c, t), inv_tau);
  std::vector<T> eye(n * n, T(0));
  for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = T(1);
  const BasicTensor<T> diag({n, n}, eye);
  const auto from_context = pick(ndgrad::log_softmax(logits), diag);
  const auto from_target = pick(ndgrad::log_softmax(ndgrad::transpose(logits)), diag);
  return ndgrad::concat(std::vector{from_context, from_target}, 0);
}

template <class T>
BasicTensor<T> contrastive_loss(const BasicTensor<T>& context, const BasicTensor<T>& target,
                                const BasicTensor<T>& log_tau, ContrastiveMode mode) {
  return ndgrad::mean(contrastive_anchor_losses(context, target, log_tau, mode));
}

template <class T>
BasicTensor<T> jepa_loss(const BasicTensor<T>& prediction, const BasicTensor<T>& target, std::size_t n_seq) {
  if (prediction.rank() != 2 || prediction.shape() != target.shape()) {
    throw ShapeError("jepa_loss: prediction " + ndgrad::to_string(prediction.shape()) + " vs target " +
                     ndgrad::to_string(target.shape()));
  }
  if (n_seq == 0 || prediction.dim(0) % n_seq != 0) {
    throw ShapeError("jepa_loss: " + std::to_string(prediction.dim(0)) + " rows do not split into " +
                     std::to_string(n_seq) + " sequences");
  }
  const T eps = T(1e-12);
  auto small_rows = [&](const BasicTensor<T>& x) {
    const std::size_t d = x.dim(1);
    std::size_t count = 0;
    const auto v = x.data();
    for (std::size_t r = 0; r < x.dim(0); ++r) {
      T ss = 0;
      for (std::size_t j = 0; j < d; ++j) ss += v[r * d + j] * v[r * d + j];
      if (std::sqrt(ss) < eps) ++count;
    }
    return count;
  };
  if (const std::size_t k = small_rows(prediction) + small_rows(target); k > 0) {
    log().warn("jepa_loss: {} rows with norm below 1e-12 were floored", k);
  }
  const auto p = ndgrad::l2_normalize(prediction, eps);
  const auto t = ndgrad::l2_normalize(target.detach(), eps);
  return ndgrad::scale(ndgrad::squared_error(p, t), T(1) / static_cast<T>(n_seq));
}

void Temperature::clamp() {
  auto v = log_tau.data();
  v[0] = static_cast<float>(std::clamp(static_cast<double>(v[0]), kLogTauMin, kLogTauMax));
}

#define STEMFIT_INSTANTIATE_LOSSES(T)                                                                   \
  template BasicTensor<T> contrastive_anchor_losses(const BasicTensor<T>&, const BasicTensor<T>&,       \
                                                    const BasicTensor<T>&, ContrastiveMode);            \
  template BasicTensor<T> contrastive_loss(const BasicTensor<T>&, const BasicTensor<T>&,                \
                                           const BasicTensor<T>&, ContrastiveMode);                     \
  template BasicTensor<T> jepa_loss(const BasicTensor<T>&, const BasicTensor<T>&, std::size_t);

STEMFIT_INSTANTIATE_LOSSES(float)
STEMFIT_INSTANTIATE_LOSSES(double)

}  // namespace stemfit::training
