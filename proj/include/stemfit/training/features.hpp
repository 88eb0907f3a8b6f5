// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "stemfit/dsp/dsp.hpp"
#include "stemfit/model/encoder.hpp"
#include "stemfit/ndgrad/tensor.hpp"

namespace stemfit::training {

struct FeatureConfig {
  dsp::MelConfig mel;
  double chunk_seconds = 2.56;
  // Fixed affine standardisation of log-mel values before patch projection.
  float mean = -6.5f;
  float stddev = 8.0f;

  std::size_t chunk_samples() const;
  std::size_t n_frames() const;
  model::PatchGrid grid() const;
  void validate() const;
};

// Audio chunks -> stacked, standardised patch rows [n * K x 256].
class Featurizer {
 public:
  explicit Featurizer(FeatureConfig config);

  const FeatureConfig& config() const noexcept { return config_; }
  model::PatchGrid grid() const { return grid_; }

  // Every chunk must hold exactly chunk_samples() samples. Work is split
  // across `workers` threads by chunk, so the result does not depend on it.
  ndgrad::Tensor operator()(std::span<const dsp::AudioChunk> chunks, std::size_t workers = 1) const;

 private:
  FeatureConfig config_;
  dsp::MelFrontend frontend_;
  model::PatchGrid grid_;
};

// Runs fn(i) for i in [0, n) on up to `workers` threads; exceptions are
// rethrown on the caller's thread.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace stemfit::training
