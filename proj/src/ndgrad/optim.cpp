// SPDX-License-Identifier: Apache-2.0
#include "stemfit/ndgrad/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "stemfit/common/error.hpp"

namespace stemfit::ndgrad {

void AdamW::step(ParameterList& params, double lr) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) {
      throw std::invalid_argument("adamw: parameter '" + p.name + "' has no gradient");
    }
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  for (auto& p : params) {
    auto data = p.tensor.data();
    const auto grad = p.tensor.grad();
    auto [it, inserted] = moments_.try_emplace(p.name);
    Moments& mom = it->second;
    if (inserted) {
      mom.m.assign(data.size(), 0.0f);
      mom.v.assign(data.size(), 0.0f);
    } else if (mom.m.size() != data.size()) {
      throw ShapeError("adamw: moment size mismatch for '" + p.name + "'");
    }
    const double decay = p.decay ? lr * config_.weight_decay : 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grad[i];
      const double m = config_.beta1 * mom.m[i] + (1.0 - config_.beta1) * g;
      const double v = config_.beta2 * mom.v[i] + (1.0 - config_.beta2) * g * g;
      mom.m[i] = static_cast<float>(m);
      mom.v[i] = static_cast<float>(v);
      double value = data[i];
      value -= decay * value;
      value -= lr * (m / bc1) / (std::sqrt(v / bc2) + config_.eps);
      data[i] = static_cast<float>(value);
    }
  }
}

void AdamW::restore(std::uint64_t steps, std::map<std::string, Moments> moments) {
  steps_ = steps;
  moments_ = std::move(moments);
}

double lr_at(std::int64_t step, const LrSchedule& s) {
  if (s.total_steps <= 0) throw std::invalid_argument("lr_at: total_steps must be positive");
  step = std::clamp<std::int64_t>(step, 0, s.total_steps);
  if (s.warmup_steps > 0 && step < s.warmup_steps) {
    return s.base_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  }
  if (s.total_steps <= s.warmup_steps) return s.base_lr;
  const double progress = static_cast<double>(step - s.warmup_steps) /
                          static_cast<double>(s.total_steps - s.warmup_steps);
  return s.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace stemfit::ndgrad
