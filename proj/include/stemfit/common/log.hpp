// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>

#include <spdlog/spdlog.h>

namespace stemfit {

// Progress and warnings go to standard error; machine-readable outputs are
// written to files only.
spdlog::logger& log();

}  // namespace stemfit
