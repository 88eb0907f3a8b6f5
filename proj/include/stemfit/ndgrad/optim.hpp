// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stemfit/ndgrad/tensor.hpp"

namespace stemfit::ndgrad {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

// AdamW with decoupled weight decay:
//   p <- p - lr * wd * p                      (only parameters with decay=true)
//   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
// with bias-corrected first/second moments.
class AdamW {
 public:
  struct Moments {
    std::vector<float> m;
    std::vector<float> v;
  };

  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  // Every parameter must carry a gradient; the error names the first that
  // does not.
  void step(ParameterList& params, double lr);

  const AdamWConfig& config() const noexcept { return config_; }
  std::uint64_t step_count() const noexcept { return steps_; }
  const std::map<std::string, Moments>& moments() const noexcept { return moments_; }

  // Restores state saved alongside a checkpoint.
  void restore(std::uint64_t steps, std::map<std::string, Moments> moments);

 private:
  AdamWConfig config_;
  std::uint64_t steps_ = 0;
  std::map<std::string, Moments> moments_;
};

// Linear warmup from 0 to base_lr, then cosine annealing to 0 at total_steps.
struct LrSchedule {
  double base_lr = 1e-3;
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 1;
};

// Steps past total_steps return the final value.
double lr_at(std::int64_t step, const LrSchedule& schedule);

}  // namespace stemfit::ndgrad
