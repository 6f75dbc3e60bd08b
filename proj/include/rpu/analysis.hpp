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

// Experiment drivers: memory SKU selection, strong scaling, energy per
// inference, system cost, batch sweeps, speculative decoding and baseline
// ratios. Everything here composes the compiler and the simulator.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rpu/archcfg.hpp"
#include "rpu/compiler.hpp"
#include "rpu/config_io.hpp"
#include "rpu/memmodel.hpp"
#include "rpu/simcore.hpp"

namespace rpu::analysis {

/// Pareto frontier of `grid` restricted to one per-device bandwidth.
std::vector<mem::DesignPoint> frontier(const mem::DesignGrid& grid, double device_bandwidth);
/// Frontier of the default grid at the bandwidth of the default device.
std::vector<mem::DesignPoint> default_frontier();

/// Copy of `sys` with every CU carrying the given device.
arch::SystemConfig with_device(arch::SystemConfig sys, const mem::StackGeometry& g);

struct SkuChoice {
  mem::DesignPoint point;
  double required = 0;     // bytes, weights + KV cache
  double capacity = 0;     // bytes, whole system
  double utilization = 0;  // required / capacity
};

/// Smallest frontier device that holds the model on `sys`. A device holds the
/// model when the sharding plan places every core's share within its capacity.
SkuChoice select_sku(const compiler::ModelSpec& m, const arch::SystemConfig& sys, uint32_t batch, uint32_t seq,
                     const std::vector<mem::DesignPoint>& frontier);
bool fits(const compiler::ModelSpec& m, const arch::SystemConfig& sys, uint32_t batch, uint32_t seq);

struct StepResult {
  sim::SimStats stats;
  sim::TokenEstimate token;
  uint32_t instructions = 0;
  double memory_bytes = 0;    // read from memory per token step
  double sustained_bw = 0;    // memory_bytes / latency
};

/// Compiles a few layers, simulates one decode step and extrapolates to the
/// full depth.
StepResult simulate_step(const compiler::ModelSpec& m, const arch::SystemConfig& sys, const compiler::Workload& w,
                         const sim::SimConfig& cfg = {});

struct ScalePoint {
  uint32_t cus = 0;
  bool fits = false;
  SkuChoice sku;
  double latency = 0;       // s per token
  double speedup = 0;       // vs the smallest fitting scale
  double sustained_bw = 0;  // bytes/s
  double broadcast_share = 0;
  bool plateau = false;
  std::string note;
};

/// One point per entry of `cus`, each with its own SKU from `frontier`.
/// Scales that cannot hold the model are reported with fits = false.
std::vector<ScalePoint> strong_scaling(const compiler::ModelSpec& m, const arch::SystemConfig& base,
                                       const std::vector<uint32_t>& cus, const compiler::Workload& w,
                                       const std::vector<mem::DesignPoint>& frontier, unsigned jobs = 1);

struct EnergyResult {
  uint32_t tokens = 0;   // decode steps
  uint32_t samples = 0;  // simulated steps
  sim::EnergyStats dynamic;
  double idle = 0;
  double latency = 0;  // s, all decode steps
  double total() const { return dynamic.dynamic() + idle; }
  double memory_share() const;
};

/// Decode energy of `decode_tokens` steps starting from a KV cache of `seq`
/// tokens. One step is simulated every `stride` tokens and stands for the
/// steps until the next sample.
EnergyResult energy_per_inference(const compiler::ModelSpec& m, const arch::SystemConfig& sys, uint32_t batch,
                                  uint32_t seq, uint32_t decode_tokens, uint32_t stride = 64);

/// Same run with a memory device of a different energy per bit.
EnergyResult rescale_memory(EnergyResult e, double from_pj_per_bit, double to_pj_per_bit);

struct SystemCostParams {
  double silicon_per_cu = 0.08;
  double substrate_per_package = 0.1;
  double pcb_per_cu = 0.01;
};

struct CostBreakdown {
  uint32_t cus = 0;
  double silicon = 0, memory = 0, substrate = 0, pcb = 0;
  double total() const { return silicon + memory + substrate + pcb; }
  CostBreakdown normalized(double reference_total) const;
};

/// Cost in units of one HBM3e stack.
CostBreakdown cost_breakdown(const arch::SystemConfig& sys, const mem::DeviceMetrics& device,
                             const SystemCostParams& p = {});

struct BatchPoint {
  uint32_t batch = 0;
  double latency = 0;
  double tokens_per_s = 0;
  double tokens_per_s_per_query = 0;
  double memory_util = 0;
  double compute_util = 0;
  bool compute_bound = false;
};

std::vector<BatchPoint> batch_scaling(const compiler::ModelSpec& m, const arch::SystemConfig& sys, uint32_t seq,
                                      const std::vector<uint32_t>& batches, unsigned jobs = 1);

struct MapCell {
  uint32_t batch = 0, seq = 0;
  bool fits = false;
  SkuChoice sku;
};

/// SKU choice over a batch x sequence grid.
std::vector<MapCell> batch_seq_map(const compiler::ModelSpec& m, const arch::SystemConfig& sys,
                                   const std::vector<uint32_t>& batches, const std::vector<uint32_t>& seqs,
                                   const std::vector<mem::DesignPoint>& frontier);

struct SpecDecodeModel {
  uint32_t lookahead = 8;
  double accepted = 4.6;  // mean tokens committed per window
  compiler::ModelSpec draft, target;
};

struct SpecDecodeResult {
  double draft_step = 0;   // s
  double verify_step = 0;  // s, target at batch = lookahead
  double target_step = 0;  // s, target at batch 1
  double window = 0;       // s
  double tokens_per_s = 0;
  double baseline_tokens_per_s = 0;
  double speedup = 0;
};

/// Draft and target share the system; both are sharded over all cores.
SpecDecodeResult spec_decode_eval(const SpecDecodeModel& sd, const arch::SystemConfig& sys, uint32_t seq);

struct RpuResult {
  std::string model;
  uint32_t batch = 1, seq = 0;
  uint32_t cus = 0;
  double latency = 0;   // s per token
  double energy = 0;    // J per token
};

struct Comparison {
  std::string key;
  double speedup = 0;
  double energy_ratio = 0;
  double edp_ratio = 0;
};

/// Baseline over RPU for latency, energy and their product.
Comparison compare_baseline(const RpuResult& r, const config::BaselineConstants& b);

/// Runs fn(0..n-1) on up to `jobs` threads. Exceptions propagate from the
/// lowest failing index.
void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn);

}  // namespace rpu::analysis
