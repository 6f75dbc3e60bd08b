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

#include "rpu/ring.hpp"

#include <algorithm>

#include "rpu/common.hpp"

namespace rpu::ring {

Segment make_segment(uint32_t first, uint32_t count, uint32_t ring_size) {
  if (count == 0 || first + count > ring_size) throw Error("ring", "segment outside ring");
  return {first, count, count == ring_size && count > 2};
}

Route route(const Segment& s, uint32_t src, uint32_t dst) {
  if (src == dst) return {0, 0};
  if (s.wrap) {
    const uint32_t p = s.count;
    const uint32_t d = (dst + p - src) % p;
    if (d <= p / 2) return {+1, d};
    return {-1, p - d};
  }
  if (dst > src) return {+1, dst - src};
  return {-1, src - dst};
}

uint32_t reach(const Segment& s, uint32_t src, int dir) {
  if (s.wrap) return dir > 0 ? s.count / 2 : s.count - 1 - s.count / 2;
  return dir > 0 ? s.count - 1 - src : src;
}

std::vector<uint32_t> arrival_order(const Segment& s, uint32_t member) {
  std::vector<uint32_t> order(s.count);
  for (uint32_t i = 0; i < s.count; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
    Route ra = route(s, a, member), rb = route(s, b, member);
    if (ra.hops != rb.hops) return ra.hops < rb.hops;
    return ra.dir > rb.dir;
  });
  return order;
}

}  // namespace rpu::ring
