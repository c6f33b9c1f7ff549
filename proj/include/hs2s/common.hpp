// Copyright (c) 2026 the hs2s authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef HS2S_COMMON_HPP
#define HS2S_COMMON_HPP

#include <cstdarg>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace hs2s {

inline std::string strformat(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  va_list args2;
  va_copy(args2, args);
  int n = std::vsnprintf(nullptr, 0, fmt, args);
  va_end(args);
  std::string out(n > 0 ? static_cast<size_t>(n) : 0, '\0');
  if (n > 0) {
    std::vsnprintf(out.data(), out.size() + 1, fmt, args2);
  }
  va_end(args2);
  return out;
}

// Contract violations (bad shapes, bad configs, out-of-range values).
[[noreturn]] inline void fail_invalid(const std::string& msg) {
  throw std::invalid_argument(msg);
}

// Runtime failures (I/O, corrupt files, non-finite numerics).
[[noreturn]] inline void fail_runtime(const std::string& msg) {
  throw std::runtime_error(msg);
}

}  // namespace hs2s

#endif  // HS2S_COMMON_HPP
