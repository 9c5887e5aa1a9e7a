#pragma once

#include <stdexcept>
#include <string>

namespace mvd {

// Contract violations throw; callers that can recover catch std::invalid_argument.
[[noreturn]] inline void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

inline void check(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

}  // namespace mvd
