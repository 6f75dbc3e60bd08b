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

// Lowers one decode step of a transformer onto per-core instruction streams.

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "rpu/archcfg.hpp"
#include "rpu/isa.hpp"

namespace rpu::compiler {

struct ModelSpec {
  std::string name;
  uint32_t layers = 0;
  uint32_t hidden = 0;
  uint32_t heads = 0;
  uint32_t kv_heads = 0;
  uint32_t head_dim = 0;
  uint32_t ffn = 0;  // dense FFN width
  uint32_t vocab = 0;
  uint32_t experts = 0;
  uint32_t top_k = 1;
  uint32_t expert_ffn = 0;
  uint32_t shared_experts = 0;
  uint32_t moe_interleave = 1;  // 1: every layer is MoE, 2: every other layer
  bool tie_embeddings = false;
  double weight_bits = 4;
  uint32_t weight_block = 32;
  double exponent_bits = 8;
  double act_bits = 16;
  double kv_bits = 16;

  bool is_moe() const { return experts > 0; }
  bool is_moe_layer(uint32_t layer) const;
  uint32_t qvecs() const { return heads / kv_heads; }
  double bits_per_weight() const;
  double layer_params(uint32_t layer) const;
  double total_params() const;
  double active_params() const;
};

/// Throws rpu::Error("compiler", ...) naming the violated invariant.
void check_model(const ModelSpec& m);

/// Shared exponent storage as a fraction of the element bits.
double dequant_overhead(const ModelSpec& m);

struct Footprint {
  double weights = 0;  // bytes
  double kv = 0;
  double total() const { return weights + kv; }
};
Footprint footprint(const ModelSpec& m, uint32_t batch, uint32_t seq);

struct Workload {
  uint32_t batch = 1;
  uint32_t seq = 8192;  // tokens already in the KV cache
  uint64_t seed = 1;    // expert routing
};

struct CoreShard {
  uint32_t col_begin = 0;
  uint32_t cols = 0;
  uint32_t rows = 0;
  uint16_t row_groups = 1;
  uint16_t row_group_index = 0;
};

/// Column sharding of one weight matrix over a contiguous range of cores.
struct LinearPlan {
  std::string name;
  arch::KernelKind kind = arch::KernelKind::Linear;
  uint64_t K = 0;
  uint64_t N = 0;
  uint32_t first_core = 0;
  std::vector<CoreShard> shards;
  uint64_t total_cols() const;
};

/// KV heads owned by a contiguous ring segment of CUs.
struct KvGroup {
  uint32_t first_cu = 0;
  uint32_t num_cus = 1;
  uint32_t head_begin = 0;
  uint32_t head_end = 0;
  uint32_t kv_heads() const { return head_end - head_begin; }
};

struct ShardPlan {
  uint32_t num_cus = 0;
  uint32_t cores_per_cu = 0;
  std::vector<KvGroup> groups;
  std::vector<LinearPlan> wqkv;  // one per KV group
  LinearPlan wo, gate_up, down, lm_head;
  LinearPlan router, expert_gate_up, expert_down, shared_gate_up, shared_down;
  double weight_bytes_per_core = 0;  // largest core
  double capacity_per_core = 0;
};

/// Fewest cores per column shard so every shard has at least 8 columns,
/// capped at the cores of one CU.
uint16_t row_groups_for(uint64_t N, uint32_t cores, uint32_t cores_per_cu);

LinearPlan shard_linear(const std::string& name, uint64_t K, uint64_t N, uint32_t first_core,
                        uint32_t cores, uint32_t cores_per_cu);

/// Raises a capacity error when the model and KV cache do not fit.
ShardPlan plan_sharding(const ModelSpec& m, const arch::SystemConfig& sys, const Workload& w = {});

void write_shard_csv(std::ostream& os, const ShardPlan& p);

struct LowerOptions {
  Workload workload;
  uint32_t sim_layers = 0;  // 0 = three layer periods
  uint32_t arm_lookahead = 2;
  uint32_t scratch_bytes = 256 * 1024;
};

/// Expert ids chosen by each token of one MoE layer (seeded, static).
std::vector<std::vector<uint32_t>> route_tokens(const ModelSpec& m, uint32_t layer, const Workload& w);

isa::Program lower(const ModelSpec& m, const ShardPlan& plan, const arch::SystemConfig& sys,
                   const LowerOptions& opt = {});

inline isa::Program compile(const ModelSpec& m, const arch::SystemConfig& sys, const LowerOptions& opt = {}) {
  return lower(m, plan_sharding(m, sys, opt.workload), sys, opt);
}

}  // namespace rpu::compiler
