// SPDX-License-Identifier: Apache-2.0
#include "stemfit/common/error.hpp"

namespace stemfit {

ExitCode exit_code(const std::exception& e) noexcept {
  if (dynamic_cast<const ConfigError*>(&e) != nullptr) return ExitCode::kConfig;
  if (dynamic_cast<const IoError*>(&e) != nullptr) return ExitCode::kIo;
  if (dynamic_cast<const NumericError*>(&e) != nullptr) return ExitCode::kNumeric;
  if (dynamic_cast<const CheckFailure*>(&e) != nullptr) return ExitCode::kCheck;
  return ExitCode::kGeneric;
}

}  // namespace stemfit
