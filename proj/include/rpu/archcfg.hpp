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

// Core / CU / package / board hierarchy of the RPU with link, power and
// compute provisioning, plus roofline and ISO-TDP scaling math.

#include <cstdint>
#include <string>
#include <vector>

#include "rpu/memmodel.hpp"

namespace rpu::arch {

struct CoreConfig {
  uint32_t tmacs_per_core = 4;
  uint32_t macs_per_tmac = 64;  // 8x8
  double clock = 2147483648.0;  // Hz
  double pch_bandwidth = 32.0 * (1ULL << 30);  // bytes/s
  uint64_t mem_buffer = 512 * 1024;             // bytes
  uint64_t net_buffer = 128 * 1024;             // bytes
  double decoder_weights_per_cycle = 64;        // one tile per cycle
  double hpvop_lanes = 16;                      // FP32 ops per cycle
  uint32_t accum_regfile = 256;                 // FP32 entries
  uint32_t tree_drain_cycles = 3;               // column-wise tree sum
  uint32_t stripe_reload_cycles = 2;

  double macs_per_cycle() const { return static_cast<double>(tmacs_per_core) * macs_per_tmac; }
  double ops_per_second() const { return macs_per_cycle() * 2.0 * clock; }
  double decoder_rate() const { return decoder_weights_per_cycle * clock; }
  double hpvop_rate() const { return hpvop_lanes * clock; }
};

struct CUConfig {
  uint32_t cores = 16;
  uint32_t shorelines = 2;
  double shoreline_bandwidth = 256.0 * (1ULL << 30);  // bytes/s
  uint32_t devices = 2;  // one memory device per shoreline
  mem::StackGeometry mem_geometry = mem::candidate_device();
};

struct LinkParams {
  double bandwidth = 256.0 * (1ULL << 30);  // bytes/s
  double latency = 10e-9;                   // s per CU-to-CU hop
  double energy_pj_per_bit = 0.5;
};

struct PowerParams {
  double memory_pj_per_bit = 0;  // 0 = derive from the CU memory geometry
  double datapath_pj_per_bit = 0.36628;
  double compute_pj_per_op = 0.27;
  double vop_pj_per_op = 0.27;
  double idle_w_per_cu = 0.5;
};

struct SystemConfig {
  CoreConfig core;
  CUConfig cu;
  uint32_t num_cus = 64;
  uint32_t cus_per_package = 4;
  LinkParams intra_package_link{256.0 * (1ULL << 30), 10e-9, 0.5};
  LinkParams inter_package_link{256.0 * (1ULL << 30), 10e-9, 1.0};
  double intra_cu_latency = 2e-9;
  double intra_cu_bandwidth = 1024.0 * (1ULL << 30);
  double tdp_budget = 0;  // W, 0 = unconstrained
  double target_ops_per_byte = 32;
  double weight_bits_for_provisioning = 4.25;
  PowerParams power;
  std::vector<uint32_t> ring_order;  // empty = identity

  uint32_t total_cores() const { return num_cus * cu.cores; }
  uint32_t packages() const { return (num_cus + cus_per_package - 1) / cus_per_package; }
  /// Link between ring positions a and a+1 (mod num_cus).
  const LinkParams& link_after(uint32_t ring_pos) const;
  uint32_t cu_at(uint32_t ring_pos) const;
};

SystemConfig default_system(uint32_t num_cus = 64);

/// Memory energy per bit of the configured device, in pJ/bit.
double memory_pj_per_bit(const SystemConfig& sys);

double cu_bandwidth(const SystemConfig& sys);
double total_bandwidth(const SystemConfig& sys);
double cu_ops_per_second(const SystemConfig& sys);
double total_ops_per_second(const SystemConfig& sys);
double cu_capacity(const SystemConfig& sys);
double total_capacity(const SystemConfig& sys);
double ops_per_byte(const SystemConfig& sys);

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct ValidationReport {
  std::vector<Check> checks;
  bool ok() const;
  std::string to_string() const;
};

ValidationReport validate(const SystemConfig& sys);

enum class KernelKind { Linear, SDPA, MoE, VOP };
const char* to_string(KernelKind k);

struct KernelShape {
  double ops = 0;  // MAC = 2 ops
  double bytes_from_memory = 0;
  double bytes_on_network = 0;
  KernelKind kind = KernelKind::Linear;
};

/// max(bytes / system bandwidth, ops / system compute) for a kernel mapped
/// over the whole system.
double roofline_time(const KernelShape& k, const SystemConfig& sys);
/// Same bound restricted to `cores` cores of the system.
double roofline_time_on_cores(const KernelShape& k, const SystemConfig& sys, uint32_t cores);

struct Utilization {
  double memory = 0;   // fraction of pCH bandwidth
  double compute = 0;  // fraction of peak TMAC ops
  double network = 0;  // fraction of one outgoing link per CU
};

struct PowerBreakdown {
  double memory = 0, datapath = 0, compute = 0, network = 0, idle = 0;
  double total() const { return memory + datapath + compute + network + idle; }
};

struct ProvisionedPower {
  PowerBreakdown per_cu;
  PowerBreakdown system;
  double memory_share() const { return per_cu.memory / per_cu.total(); }
};

ProvisionedPower provision_power(const SystemConfig& sys, const Utilization& u);
/// Utilization while streaming weights at full bandwidth at batch 1.
Utilization peak_streaming_utilization(const SystemConfig& sys);
double peak_streaming_power_per_cu(const SystemConfig& sys);
/// Largest CU count whose peak-streaming power fits in `tdp` watts.
uint32_t iso_tdp_cus(double tdp, const SystemConfig& sys);

}  // namespace rpu::arch
