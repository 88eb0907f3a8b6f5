// SPDX-License-Identifier: Apache-2.0
#include "stemfit/training/features.hpp"

#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "stemfit/common/error.hpp"

namespace stemfit::training {

std::size_t FeatureConfig::chunk_samples() const {
  return static_cast<std::size_t>(std::llround(chunk_seconds * mel.sample_rate));
}

std::size_t FeatureConfig::n_frames() const { return chunk_samples() / mel.hop_samples(); }

model::PatchGrid FeatureConfig::grid() const {
  return {mel.n_mels / dsp::kPatchSize, (n_frames() + dsp::kPatchSize - 1) / dsp::kPatchSize};
}

void FeatureConfig::validate() const {
  if (mel.n_mels == 0 || mel.n_mels % dsp::kPatchSize != 0) {
    throw ConfigError("features: n_mels must be a positive multiple of 16");
  }
  if (chunk_samples() < mel.window_samples()) throw ConfigError("features: chunk shorter than one window");
  if (!(stddev > 0.0f) || !std::isfinite(mean)) throw ConfigError("features: stddev must be positive");
}

Featurizer::Featurizer(FeatureConfig config) : config_(config), frontend_(config.mel), grid_(config.grid()) {
  config_.validate();
}

ndgrad::Tensor Featurizer::operator()(std::span<const dsp::AudioChunk> chunks, std::size_t workers) const {
  const std::size_t k = grid_.size();
  const std::size_t n = chunks.size();
  const std::size_t want = config_.chunk_samples();
  for (const auto& c : chunks) {
    if (c.samples.size() != want) {
      throw ShapeError("featurizer: chunk of " + std::to_string(c.samples.size()) + " samples, expected " +
                       std::to_string(want));
    }
  }
  std::vector<float> out(n * k * dsp::kPatchDim);
  const float inv = 1.0f / config_.stddev;
  parallel_for(n, workers, [&](std::size_t i) {
    const auto seq = dsp::patchify(frontend_(chunks[i]));
    float* dst = out.data() + i * k * dsp::kPatchDim;
    for (std::size_t j = 0; j < seq.patches.size(); ++j) dst[j] = (seq.patches[j] - config_.mean) * inv;
  });
  return ndgrad::Tensor({n * k, dsp::kPatchDim}, std::move(out));
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr err;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!err) err = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace stemfit::training
