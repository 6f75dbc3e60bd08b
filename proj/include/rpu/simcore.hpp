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

// Deterministic discrete-event simulator for RPU programs.

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "rpu/archcfg.hpp"
#include "rpu/isa.hpp"

namespace rpu::sim {

enum class Pipe : uint8_t { Memory = 0, Network = 1, Compute = 2 };
const char* to_string(Pipe p);

enum class Stall : uint8_t { WeightData = 0, Activation, Fragment, BufferFull, Coupling, Link };
inline constexpr int kStallKinds = 6;
const char* to_string(Stall s);

enum class EventKind : uint8_t { Dma = 0, VmmChunk, VmmDone, Vop, Send, Arm, Inject, LinkTx, Arrive, Interrupt };
const char* to_string(EventKind e);

struct SimConfig {
  bool decoupled = true;
  bool keep_trace = false;            // retain records in SimStats::trace
  std::ostream* trace_out = nullptr;  // JSONL stream
  uint64_t max_events = 0;            // 0 = unlimited
};

struct TraceRecord {
  uint64_t time_ps = 0;  // completion time
  uint64_t start_ps = 0;
  uint32_t cu = 0;
  int32_t core = -1;  // -1 for CU-level network events
  Pipe pipe = Pipe::Memory;
  EventKind event = EventKind::Dma;
  uint32_t instr = 0;
  uint16_t layer = 0;
  uint16_t kernel = 0;
  uint64_t bytes = 0;
  uint64_t buffer_bytes = 0;  // memory-buffer occupancy of the core
  double energy_pj = 0;
  double power_w() const;
};

void write_jsonl(std::ostream& os, const TraceRecord& r);

struct KernelStats {
  std::string name;
  uint16_t layer = 0;
  uint8_t kind = 0;
  double start = 0, end = 0;  // s
  double ops = 0, bytes_from_memory = 0;
  uint32_t cores = 0;
  double roofline = 0;  // s
  double duration() const { return end - start; }
};

struct EnergyStats {
  double memory = 0, datapath = 0, compute = 0, network = 0;  // J
  double dynamic() const { return memory + datapath + compute + network; }
};

struct BlockedPipe {
  uint32_t core = 0;
  Pipe pipe = Pipe::Memory;
  std::string instruction;
  std::string reason;
};

struct StallReport {
  std::vector<BlockedPipe> blocked;
  std::vector<std::string> orphaned;  // entries still holding unconsumed data
  std::string to_string() const;
};

struct SimStats {
  double time = 0;                 // s, last interrupt (token step)
  std::vector<double> layer_end;   // s, per simulated layer
  std::vector<EnergyStats> layer_energy;
  EnergyStats energy;
  std::vector<KernelStats> kernels;
  double stall[kStallKinds] = {};  // core-seconds
  double util_memory = 0, util_compute = 0, util_network = 0;
  double buffer_peak = 0, buffer_mean = 0;  // bytes, memory buffer per core
  uint64_t events = 0;
  uint64_t trace_hash = 0;
  uint32_t max_valid_count = 0;
  uint64_t counter_violations = 0;
  std::optional<StallReport> stalled;
  std::vector<TraceRecord> trace;
  bool ok() const { return !stalled && counter_violations == 0; }
};

SimStats simulate(const isa::Program& p, const arch::SystemConfig& sys, const SimConfig& cfg = {});

/// Cycle breakdown of one VMM on a core's TMAC array.
struct TmacTiming {
  double tile = 0, drain = 0, reload = 0, decoder = 0;
  double cycles() const;
};
TmacTiming tmac_kernel_time(const isa::TensorDims& d, isa::VmmMode mode, uint32_t qvecs,
                            const arch::CoreConfig& core);

/// Analytic latency of a ring collective where each of `members` CUs
/// contributes `block_bytes`, over a full ring when `full_ring` is set.
double collective_time(uint32_t members, double block_bytes, bool full_ring, const arch::SystemConfig& sys);

/// Token latency and energy extrapolated from the simulated layers.
struct TokenEstimate {
  double latency = 0;       // s
  double steady_layer = 0;  // s per layer in steady state
  EnergyStats energy;       // J, dynamic
  double idle_energy = 0;   // J
  double total_energy() const { return energy.dynamic() + idle_energy; }
};
TokenEstimate extrapolate(const SimStats& s, const isa::Program& p, const arch::SystemConfig& sys);

/// Per-CU power over fixed windows (W), including the idle floor.
std::vector<double> power_trace(const std::vector<TraceRecord>& trace, const arch::SystemConfig& sys,
                                double window);

}  // namespace rpu::sim
