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

#include "rpu/archcfg.hpp"
#include "rpu/isa.hpp"

namespace rpu::testing {

// Round numbers so every event time below is an exact count of picoseconds:
// 2048 B per 1 us DMA chunk, 1 ns cycles, 64 B sends in 125 ps.
inline arch::SystemConfig golden_system() {
  auto sys = arch::default_system(1);
  sys.cu.cores = 2;
  sys.core.pch_bandwidth = 2.048e9;
  sys.core.clock = 1e9;
  sys.intra_cu_bandwidth = 0.512e12;
  sys.intra_cu_latency = 2e-9;
  return sys;
}

// Each core: DMA 4 KiB of weights, multiply them by a host-provided 128 B
// activation, send 64 B to a CU-wide gather and reduce the 128 B result.
inline isa::Program golden_program() {
  using namespace isa;
  Program p;
  p.num_cus = 1;
  p.cores_per_cu = 2;
  p.model_layers = 1;
  p.simulated_layers = 1;
  p.buffers.mem_entries = 4;
  p.buffers.net_entries = 4;
  p.buffers.scratch_entries = 2;
  p.buffers.channel_bytes = 1 << 20;
  p.kernels.push_back({"linear", 0, 0, 2.0 * 64 * 32 * 2, 8192, 0, 2});
  p.collectives.push_back({0, CollectiveKind::Broadcast, 0, 1, true, false, {128}});
  p.collectives.push_back({1, CollectiveKind::Broadcast, 0, 1, false, false, {128}});
  for (uint32_t k = 0; k < 2; ++k) {
    CoreProgram c;
    c.core_id = k;
    Instruction dma;
    dma.op = Opcode::MemDMA;
    dma.id = 0;
    dma.src = {Space::Memory, 0, 4096};
    dma.dst = {Space::MemBuffer, 0, 4096};
    dma.bytes = 4096;
    dma.flags = {ValidCount(1), true, false, false};
    c.memory.push_back(dma);

    Instruction arm;
    arm.op = Opcode::NetForward;
    arm.id = 1;
    arm.collective = 0;
    arm.dst = {Space::NetBuffer, 0, 128};
    arm.flags = {ValidCount(1), true, false, false};
    c.network.push_back(arm);

    Instruction vmm;
    vmm.op = Opcode::ComputeVMM;
    vmm.id = 2;
    vmm.src = {Space::MemBuffer, 0, 4096};
    vmm.aux = {Space::NetBuffer, 0, 128};
    vmm.dst = {Space::Scratch, 0, 64};
    vmm.dims = {64, 32, 1};
    vmm.flags = {ValidCount(1), true, true, true};
    c.compute.push_back(vmm);

    Instruction send;
    send.op = Opcode::NetSend;
    send.id = 3;
    send.collective = 1;
    send.src = {Space::Scratch, 0, 64};
    send.bytes = 64;
    send.flags = {ValidCount(0), true, true, false};
    c.network.push_back(send);

    Instruction arm2 = arm;
    arm2.id = 4;
    arm2.collective = 1;
    arm2.dst = {Space::NetBuffer, 2048, 128};
    c.network.push_back(arm2);

    Instruction fin;
    fin.op = Opcode::ComputeVOP;
    fin.id = 5;
    fin.src = {Space::NetBuffer, 2048, 128};
    fin.dims = {1, 64, 1};
    fin.flags = {ValidCount(0), true, true, false};
    c.compute.push_back(fin);
    p.cores.push_back(c);
  }
  return p;
}

}  // namespace rpu::testing
