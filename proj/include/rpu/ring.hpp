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

// Ring topology helpers shared by the compiler (activation layout) and the
// simulator (block routing).

#include <cstdint>
#include <vector>

namespace rpu::ring {

/// A contiguous run of `count` ring positions. `wrap` is set when the run
/// covers the whole ring, so blocks may travel both ways around it.
struct Segment {
  uint32_t first = 0;
  uint32_t count = 1;
  bool wrap = false;
};

Segment make_segment(uint32_t first, uint32_t count, uint32_t ring_size);

/// Direction (+1 / -1) and hop count from member `src` to member `dst`.
struct Route {
  int dir = 0;
  uint32_t hops = 0;
};
Route route(const Segment& s, uint32_t src, uint32_t dst);

/// Members ordered by expected arrival at `member`: itself, then by hop
/// distance, blocks travelling in the + direction first on ties.
std::vector<uint32_t> arrival_order(const Segment& s, uint32_t member);

/// Farthest member reached from `src` in direction `dir`.
uint32_t reach(const Segment& s, uint32_t src, int dir);

}  // namespace rpu::ring
