// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>

#include "stemfit/ndgrad/ops.hpp"
#include "stemfit/ndgrad/tensor.hpp"

namespace stemfit::training {

using ndgrad::BasicTensor;

enum class ContrastiveMode {
  // Anchors and negatives range over all 2N pooled embeddings.
  kFullBatch,
  // Contexts only against targets and vice versa (N candidates per anchor).
  kCross,
};

// Temperature bounds: tau = exp(log_tau) stays in [0.01, 1].
inline const double kLogTauMin = std::log(0.01);
inline constexpr double kLogTauMax = 0.0;
inline const double kLogTauInit = std::log(0.1);

// Per-anchor NT-Xent losses with cosine similarity. context and target are
// [N x d] with pairs aligned by row; log_tau is a scalar tensor. Full-batch
// mode returns 2N values (contexts first), cross mode returns 2N as well
// (context anchors, then target anchors).
template <class T>
BasicTensor<T> contrastive_anchor_losses(const BasicTensor<T>& context, const BasicTensor<T>& target,
                                         const BasicTensor<T>& log_tau,
                                         ContrastiveMode mode = ContrastiveMode::kFullBatch);

// Mean of the anchor losses.
template <class T>
BasicTensor<T> contrastive_loss(const BasicTensor<T>& context, const BasicTensor<T>& target,
                                const BasicTensor<T>& log_tau,
                                ContrastiveMode mode = ContrastiveMode::kFullBatch);

// sum_k || p_k/|p_k| - t_k/|t_k| ||^2 averaged over the n_seq stacked
// sequences. The target is detached, so no gradient reaches it. Rows with
// norm below 1e-12 are floored and reported with a warning.
template <class T>
BasicTensor<T> jepa_loss(const BasicTensor<T>& prediction, const BasicTensor<T>& target, std::size_t n_seq = 1);

// Holds log_tau as a scalar parameter and clamps it after updates.
struct Temperature {
  ndgrad::Tensor log_tau = ndgrad::Tensor::scalar(static_cast<float>(kLogTauInit), true);

  double tau() const { return std::exp(static_cast<double>(log_tau.item())); }
  void clamp();
};

}  // namespace stemfit::training
