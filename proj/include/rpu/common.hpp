// Copyright 2026 The RPU Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace rpu {

// All byte quantities use binary prefixes: 1 GB = 2^30 bytes for both
// capacity and bandwidth, so bandwidth/capacity ratios are unit-consistent.
inline constexpr double kKB = 1024.0;
inline constexpr double kMB = 1024.0 * 1024.0;
inline constexpr double kGB = 1024.0 * 1024.0 * 1024.0;
inline constexpr double kTB = kGB * 1024.0;
inline constexpr double kPico = 1e-12;
inline constexpr double kNano = 1e-9;

/// Domain error carrying the name of the module that raised it.
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& what)
      : std::runtime_error(module + ": " + what), module_(std::move(module)) {}
  const std::string& module() const { return module_; }

 private:
  std::string module_;
};

inline constexpr uint64_t ceil_div(uint64_t a, uint64_t b) {
  return (a + b - 1) / b;
}

/// FNV-1a 64-bit, used for stream and trace fingerprints.
uint64_t fnv1a(const void* data, std::size_t len, uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(uint64_t v);

inline constexpr const char* kToolVersion = "0.4.0";

}  // namespace rpu
