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

// RPU instruction set: three per-core instruction streams (memory, compute,
// network) synchronized through 2-bit valid counters on SRAM buffer entries.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace rpu::isa {

inline constexpr uint32_t kEntryBytes = 2048;  // one valid counter per entry
inline constexpr uint16_t kFormatVersion = 1;
inline constexpr char kMagic[4] = {'R', 'P', 'U', 'P'};

enum class Opcode : uint8_t { MemDMA = 0, ComputeVMM, ComputeVOP, NetSend, NetForward, Interrupt };
inline constexpr uint8_t kOpcodeCount = 6;

enum class Space : uint8_t { Memory = 0, MemBuffer, NetBuffer, Scratch };
inline constexpr uint8_t kSpaceCount = 4;

enum class VmmMode : uint8_t { Linear = 0, AttnScore, AttnValue };
enum class VopKind : uint8_t { Norm = 0, Rope, Max, Exp, Combine, Silu, Residual, TopK, Argmax };
enum class CollectiveKind : uint8_t { Broadcast = 0, Reduce, Max, ExpSum };

enum class StreamKind : uint8_t { Memory = 0, Compute = 1, Network = 2 };

const char* to_string(Opcode op);
const char* to_string(Space s);
const char* to_string(CollectiveKind k);
const char* to_string(StreamKind s);

/// 2-bit valid counter value; construction above 3 is rejected.
class ValidCount {
 public:
  constexpr ValidCount() = default;
  explicit ValidCount(int v);
  constexpr uint8_t value() const { return v_; }
  bool operator==(const ValidCount&) const = default;

 private:
  uint8_t v_ = 0;
};

struct ArbiterFlags {
  ValidCount valid_count;       // consumers expected for data this instruction writes
  bool check_valid = false;     // reads: stall until valid; writes: stall until free
  bool decrement_on_read = false;
  bool decrement_aux = false;   // separate decrement for the aux read window
  bool operator==(const ArbiterFlags&) const = default;
};

/// A window over an address space. Buffer windows are circular: byte i of
/// the window lives in entry (offset + i) / kEntryBytes modulo the space.
struct Region {
  Space space = Space::Memory;
  uint64_t offset = 0;
  uint64_t length = 0;
  bool operator==(const Region&) const = default;
};

struct Dtype {
  uint8_t format = 0;   // 0 = BF16, 1 = FP32, 2 = MXFP, 3 = BFP, 4 = NxFP
  uint8_t bits = 16;    // element bits (4-8 for block formats)
  uint16_t block = 1;   // elements sharing one 8-bit exponent
  bool operator==(const Dtype&) const = default;
  double bits_per_element() const;
};

struct TensorDims {
  uint32_t rows = 0;   // K (reduction) extent handled by this core
  uint32_t cols = 0;   // N extent handled by this core
  uint32_t batch = 1;
  bool operator==(const TensorDims&) const = default;
};

struct Instruction {
  Opcode op = Opcode::MemDMA;
  uint8_t sub_kind = 0;       // VmmMode or VopKind
  uint32_t id = 0;            // unique per core
  uint16_t layer = 0;
  uint16_t kernel = 0;        // token-step kernel index
  Region src;                 // DMA source / weights / VOP input / sent fragment
  Region aux;                 // activations (VMM) / second VOP input
  Region dst;                 // DMA target / output fragment / receive window
  uint64_t bytes = 0;
  TensorDims dims;
  Dtype dtype;
  ArbiterFlags flags;
  uint32_t loops = 1;         // repeat count of the long-running instruction
  uint32_t collective = 0;    // network collective id (NetSend / NetForward / VMM aux)
  uint16_t row_groups = 1;    // VMM: cores sharing this column shard
  uint16_t row_group_index = 0;
  uint16_t qvecs = 1;         // attention: query vectors per KV head
  uint16_t ops_per_element = 1;  // VOP cost
  uint32_t token = 0;         // interrupt payload

  bool operator==(const Instruction&) const = default;
};

struct CoreProgram {
  uint32_t core_id = 0;
  uint32_t cu_id = 0;
  std::vector<Instruction> memory;
  std::vector<Instruction> compute;
  std::vector<Instruction> network;

  const std::vector<Instruction>& stream(StreamKind k) const;
  std::vector<Instruction>& stream(StreamKind k);
  bool operator==(const CoreProgram&) const = default;
};

/// Ring collective: every member CU contributes one block; blocks reach all
/// members of the contiguous ring segment [first, first + count).
struct CollectiveDesc {
  uint32_t id = 0;
  CollectiveKind kind = CollectiveKind::Broadcast;
  uint32_t first = 0;   // ring position
  uint32_t count = 1;
  bool preloaded = false;  // data present at t = 0 (host-provided input)
  /// Reduce-scatter: member d receives only piece d of every block.
  bool scatter = false;
  std::vector<uint64_t> block_bytes;  // per member, in ring order

  /// Bytes of `src`'s block delivered to member `dst`.
  uint64_t piece(uint32_t src, uint32_t dst) const;
  /// Receive-window size at member `m`.
  uint64_t window_bytes(uint32_t m) const;
  bool operator==(const CollectiveDesc&) const = default;
};

struct KernelInfo {
  std::string name;
  uint8_t kind = 0;  // arch::KernelKind
  uint16_t layer = 0;
  double ops = 0;
  double bytes_from_memory = 0;
  double bytes_on_network = 0;
  uint32_t cores = 0;
  bool operator==(const KernelInfo&) const = default;
};

struct NamedRegion {
  std::string name;
  Region region;
  bool aliased = false;  // circular windows reuse entries over time
  bool operator==(const NamedRegion&) const = default;
};

struct BufferMap {
  uint32_t entry_bytes = kEntryBytes;
  uint32_t mem_entries = 0;
  uint32_t net_entries = 0;
  uint32_t scratch_entries = 0;
  uint64_t channel_bytes = 0;  // per-core memory channel capacity
  std::vector<NamedRegion> regions;

  uint32_t entries(Space s) const;
  bool operator==(const BufferMap&) const = default;
};

struct Program {
  uint32_t num_cus = 0;
  uint32_t cores_per_cu = 0;
  uint32_t model_layers = 0;
  uint32_t simulated_layers = 0;
  uint32_t layer_period = 1;
  BufferMap buffers;
  std::vector<KernelInfo> kernels;
  std::vector<CollectiveDesc> collectives;
  std::vector<CoreProgram> cores;

  std::size_t instruction_count() const;
  bool operator==(const Program&) const = default;
};

std::vector<uint8_t> encode(const Program& p);
/// Throws rpu::Error("isa", ...) naming the byte offset on malformed input.
Program decode(std::span<const uint8_t> bytes);
uint64_t stream_hash(const Program& p);

std::string disassemble(const Instruction& in);
std::string disassemble(const Program& p, std::size_t max_cores = SIZE_MAX);

struct ProgramIssue {
  std::string check;
  std::string detail;
};

struct ProgramReport {
  std::vector<ProgramIssue> issues;
  std::size_t checked_instructions = 0;
  bool ok() const { return issues.empty(); }
  std::string to_string() const;
};

ProgramReport validate_program(const Program& p, const BufferMap& buffers);
inline ProgramReport validate_program(const Program& p) { return validate_program(p, p.buffers); }

}  // namespace rpu::isa
