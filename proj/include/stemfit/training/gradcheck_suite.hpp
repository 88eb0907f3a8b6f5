// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "stemfit/ndgrad/gradcheck.hpp"

namespace stemfit::training {

// Finite-difference checks of whole models and losses on tiny instances:
// FiLM predictor, encoder blocks, the contrastive loss (both modes) and the
// JEPA loss end-to-end. Parameters are randomised per seed.
std::vector<ndgrad::GradcheckResult> run_model_suite(std::size_t seeds, const ndgrad::GradcheckOptions& opt = {});

// Operator suite followed by the model suite.
std::vector<ndgrad::GradcheckResult> run_full_suite(std::size_t seeds, const ndgrad::GradcheckOptions& opt = {});

}  // namespace stemfit::training
