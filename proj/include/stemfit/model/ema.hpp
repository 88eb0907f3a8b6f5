// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "stemfit/ndgrad/tensor.hpp"

namespace stemfit::model {

struct EmaSchedule {
  double tau0 = 0.996;
  double tau_end = 1.0;
  std::int64_t total_steps = 1;
};

// tau0 + (i / T) (tau_end - tau0), with i clamped to [0, T].
double ema_rate(std::int64_t i, const EmaSchedule& schedule);

// target <- tau * target + (1 - tau) * online, matched by name. The target
// tensors never take part in a backward pass.
void ema_update(ndgrad::ParameterList& target, const ndgrad::ParameterList& online, double tau);

}  // namespace stemfit::model
