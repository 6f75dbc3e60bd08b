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

#include <random>

#include "rpu/archcfg.hpp"
#include "rpu/compiler.hpp"

namespace rpu::testing {

inline compiler::ModelSpec tiny_dense() {
  compiler::ModelSpec m;
  m.name = "tiny";
  m.layers = 4;
  m.hidden = 512;
  m.heads = 8;
  m.kv_heads = 2;
  m.head_dim = 64;
  m.ffn = 1024;
  m.vocab = 2048;
  return m;
}

inline compiler::ModelSpec tiny_moe() {
  auto m = tiny_dense();
  m.name = "tiny-moe";
  m.hidden = 1024;
  m.heads = 16;
  m.kv_heads = 4;
  m.ffn = 2048;
  m.vocab = 4096;
  m.experts = 8;
  m.top_k = 1;
  m.expert_ffn = 1024;
  m.shared_experts = 1;
  m.moe_interleave = 2;
  return m;
}

inline compiler::ModelSpec llama3_8b() {
  compiler::ModelSpec m;
  m.name = "llama3-8b";
  m.layers = 32;
  m.hidden = 4096;
  m.heads = 32;
  m.kv_heads = 8;
  m.head_dim = 128;
  m.ffn = 14336;
  m.vocab = 128256;
  return m;
}

inline compiler::ModelSpec random_model(std::mt19937_64& rng, bool moe) {
  compiler::ModelSpec m;
  m.name = "rand";
  const uint32_t hd = 64;
  const uint32_t kv = 1u << (rng() % 3);           // 1, 2, 4
  const uint32_t q = 1u << (rng() % 3);            // 1, 2, 4 queries per KV head
  m.head_dim = hd;
  m.kv_heads = kv;
  m.heads = kv * q;
  m.hidden = m.heads * hd;
  m.layers = 2 + rng() % 4;
  m.ffn = m.hidden * (2 + rng() % 3);
  m.vocab = 1024 * (1 + rng() % 4);
  if (moe) {
    m.experts = 4 << (rng() % 2);
    m.top_k = 1;
    m.expert_ffn = m.hidden * 2;
    m.shared_experts = rng() % 2;
    m.moe_interleave = 1 + rng() % 2;
  }
  return m;
}

}  // namespace rpu::testing
