// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stemfit/common/rng.hpp"
#include "stemfit/ndgrad/ops.hpp"
#include "stemfit/ndgrad/tensor.hpp"

namespace stemfit::ndgrad {

struct GradcheckOptions {
  double step = 1e-4;
  double tolerance = 1e-3;
  // Denominator floor of the relative error, so entries whose true gradient
  // is ~0 are compared on an absolute scale.
  double floor = 1e-3;
  // Upper bound on perturbed entries per leaf (sampled with `seed`).
  std::size_t max_entries = 48;
  std::uint64_t seed = 0;
};

struct GradcheckResult {
  std::string name;
  double max_rel_error_f64 = 0.0;
  double max_rel_error_f32 = 0.0;
  std::size_t entries = 0;
  bool passed = false;
};

inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

// Central differences of a 64-bit loss against two analytic gradients: the
// 64-bit backward pass and the 32-bit production backward pass. `leaves32`
// mirror `leaves64` position by position; the 64-bit leaves are first set to
// the 32-bit values so both passes see the same point.
template <class Loss64, class Loss32>
GradcheckResult gradcheck(std::string name, Loss64&& loss64, std::vector<Tensor64> leaves64,
                          Loss32&& loss32, std::vector<Tensor> leaves32,
                          const GradcheckOptions& opt = {}) {
  GradcheckResult res;
  res.name = std::move(name);
  for (std::size_t l = 0; l < leaves64.size(); ++l) {
    auto d64 = leaves64[l].data();
    auto d32 = leaves32[l].data();
    for (std::size_t i = 0; i < d64.size(); ++i) d64[i] = static_cast<double>(d32[i]);
    leaves64[l].zero_grad();
    leaves32[l].zero_grad();
  }
  loss64().backward();
  loss32().backward();

  Rng rng(opt.seed);
  for (std::size_t l = 0; l < leaves64.size(); ++l) {
    Tensor64& leaf = leaves64[l];
    const std::size_t n = leaf.numel();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (n > opt.max_entries) {
      for (std::size_t i = 0; i < opt.max_entries; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
      idx.resize(opt.max_entries);
    }
    std::vector<double> g64(n, 0.0), g32(n, 0.0);
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), g64.begin());
    if (leaves32[l].has_grad()) {
      std::copy(leaves32[l].grad().begin(), leaves32[l].grad().end(), g32.begin());
    }
    for (std::size_t i : idx) {
      double numeric = 0.0;
      {
        NoGradGuard guard;
        auto data = leaf.data();
        const double saved = data[i];
        data[i] = saved + opt.step;
        const double up = loss64().item();
        data[i] = saved - opt.step;
        const double down = loss64().item();
        data[i] = saved;
        numeric = (up - down) / (2.0 * opt.step);
      }
      res.max_rel_error_f64 = std::max(res.max_rel_error_f64, relative_error(g64[i], numeric, opt.floor));
      res.max_rel_error_f32 = std::max(res.max_rel_error_f32, relative_error(g32[i], numeric, opt.floor));
      ++res.entries;
    }
  }
  res.passed = std::isfinite(res.max_rel_error_f64) && std::isfinite(res.max_rel_error_f32) &&
               res.max_rel_error_f64 < opt.tolerance && res.max_rel_error_f32 < opt.tolerance;
  return res;
}

// Every registered op on random small inputs, `seeds` draws each. Model and
// loss checks live with their modules and are combined by the CLI.
std::vector<GradcheckResult> run_op_suite(std::size_t seeds, const GradcheckOptions& opt = {});

}  // namespace stemfit::ndgrad
