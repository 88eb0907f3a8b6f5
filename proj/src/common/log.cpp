// SPDX-License-Identifier: Apache-2.0
#include "stemfit/common/log.hpp"

#include <spdlog/sinks/stdout_sinks.h>

namespace stemfit {

spdlog::logger& log() {
  static std::shared_ptr<spdlog::logger> logger = [] {
    auto l = spdlog::stderr_logger_mt("stemfit");
    l->set_pattern("[%H:%M:%S] [%^%l%$] %v");
    return l;
  }();
  return *logger;
}

}  // namespace stemfit
