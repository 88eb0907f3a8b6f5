// SPDX-License-Identifier: Apache-2.0
#include "stemfit/model/ema.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>

namespace stemfit::model {

double ema_rate(std::int64_t i, const EmaSchedule& s) {
  if (s.total_steps <= 0) return s.tau_end;
  const std::int64_t c = std::clamp<std::int64_t>(i, 0, s.total_steps);
  return s.tau0 + (static_cast<double>(c) / static_cast<double>(s.total_steps)) * (s.tau_end - s.tau0);
}

void ema_update(ndgrad::ParameterList& target, const ndgrad::ParameterList& online, double tau) {
  if (target.size() != online.size()) {
    throw std::invalid_argument("ema_update: target has " + std::to_string(target.size()) +
                                " parameters, online has " + std::to_string(online.size()));
  }
  std::map<std::string, const ndgrad::Parameter*> by_name;
  for (const auto& p : online) by_name[p.name] = &p;
  for (auto& t : target) {
    const auto it = by_name.find(t.name);
    if (it == by_name.end()) {
      throw std::invalid_argument("ema_update: online model has no parameter '" + t.name + "'");
    }
    if (it->second->tensor.shape() != t.tensor.shape()) {
      throw std::invalid_argument("ema_update: shape mismatch for '" + t.name + "'");
    }
  }
  const double keep = tau, take = 1.0 - tau;
  for (auto& t : target) {
    auto dst = t.tensor.data();
    const auto src = by_name[t.name]->tensor.data();
    if (take == 0.0) continue;  // exact freeze
    for (std::size_t i = 0; i < dst.size(); ++i) {
      dst[i] = static_cast<float>(keep * dst[i] + take * src[i]);
    }
  }
}

}  // namespace stemfit::model
