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

#include <random>

#include "doctest.h"
#include "rpu/common.hpp"
#include "rpu/isa.hpp"

using namespace rpu;
using namespace rpu::isa;

namespace {

// One CU with one core: DMA two entries of weights, VMM them, send result.
Program tiny_program() {
  Program p;
  p.num_cus = 1;
  p.cores_per_cu = 1;
  p.model_layers = 1;
  p.simulated_layers = 1;
  p.buffers.mem_entries = 4;
  p.buffers.net_entries = 4;
  p.buffers.scratch_entries = 2;
  p.buffers.channel_bytes = 1 << 20;
  p.kernels.push_back({"linear", 0, 0, 4096, 4096, 0, 1});
  CollectiveDesc in{0, CollectiveKind::Broadcast, 0, 1, true, false, {128}};
  CollectiveDesc out{1, CollectiveKind::Broadcast, 0, 1, false, false, {64}};
  p.collectives = {in, out};

  CoreProgram c;
  Instruction dma;
  dma.op = Opcode::MemDMA;
  dma.id = 0;
  dma.src = {Space::Memory, 0, 4096};
  dma.dst = {Space::MemBuffer, 0, 4096};
  dma.bytes = 4096;
  dma.flags.valid_count = ValidCount(1);
  dma.flags.check_valid = true;
  c.memory.push_back(dma);

  Instruction arm;
  arm.op = Opcode::NetForward;
  arm.id = 1;
  arm.collective = 0;
  arm.dst = {Space::NetBuffer, 0, 128};
  arm.flags.valid_count = ValidCount(1);
  arm.flags.check_valid = true;
  c.network.push_back(arm);

  Instruction vmm;
  vmm.op = Opcode::ComputeVMM;
  vmm.id = 2;
  vmm.src = {Space::MemBuffer, 0, 4096};
  vmm.aux = {Space::NetBuffer, 0, 128};
  vmm.dst = {Space::Scratch, 0, 64};
  vmm.dims = {64, 32, 1};
  vmm.flags = {ValidCount(1), true, true, true};
  vmm.collective = 0;
  c.compute.push_back(vmm);

  Instruction send;
  send.op = Opcode::NetSend;
  send.id = 3;
  send.collective = 1;
  send.src = {Space::Scratch, 0, 64};
  send.bytes = 64;
  send.flags.check_valid = true;
  send.flags.decrement_on_read = true;
  c.network.push_back(send);

  Instruction arm2 = arm;
  arm2.id = 4;
  arm2.collective = 1;
  arm2.dst = {Space::NetBuffer, 2048, 64};
  arm2.flags.decrement_on_read = false;
  c.network.push_back(arm2);

  Instruction fin;
  fin.op = Opcode::ComputeVOP;
  fin.id = 5;
  fin.src = {Space::NetBuffer, 2048, 64};
  fin.dst = {};
  fin.dims = {1, 32, 1};
  fin.flags.check_valid = true;
  fin.flags.decrement_on_read = true;
  c.compute.push_back(fin);
  p.cores.push_back(c);
  return p;
}

}  // namespace

TEST_CASE("valid count is two bits") {
  CHECK(ValidCount(3).value() == 3);
  CHECK_THROWS_AS(ValidCount(4), Error);
  CHECK_THROWS_AS(ValidCount(-1), Error);
}

TEST_CASE("encode and decode round trip") {
  auto p = tiny_program();
  auto bytes = encode(p);
  REQUIRE(bytes.size() > 10);
  CHECK(bytes[0] == 'R');
  CHECK(bytes[3] == 'P');
  CHECK(bytes[4] == 1);  // little-endian version
  auto q = decode(bytes);
  CHECK(q == p);
  CHECK(stream_hash(q) == stream_hash(p));
}

TEST_CASE("decode errors name the offset") {
  auto bytes = encode(tiny_program());
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_WITH_AS(decode(bad), doctest::Contains("offset 0"), Error);
  auto trunc = bytes;
  trunc.resize(trunc.size() - 3);
  CHECK_THROWS_WITH_AS(decode(trunc), doctest::Contains("truncated"), Error);
  auto ver = bytes;
  ver[4] = 9;
  CHECK_THROWS_WITH_AS(decode(ver), doctest::Contains("offset 4"), Error);
  auto extra = bytes;
  extra.push_back(0);
  CHECK_THROWS_AS(decode(extra), Error);
}

TEST_CASE("random mutations never crash the decoder") {
  auto bytes = encode(tiny_program());
  std::mt19937 rng(7);
  for (int i = 0; i < 500; ++i) {
    auto m = bytes;
    int edits = 1 + rng() % 4;
    for (int j = 0; j < edits; ++j) m[rng() % m.size()] = static_cast<uint8_t>(rng());
    try {
      auto q = decode(m);
      (void)q;
    } catch (const Error&) {
    }
  }
}

TEST_CASE("well formed program validates") {
  auto p = tiny_program();
  auto r = validate_program(p);
  INFO(r.to_string());
  CHECK(r.ok());
  CHECK(r.checked_instructions == 6);
}

TEST_CASE("validator flags unproduced reads") {
  auto p = tiny_program();
  p.cores[0].memory.clear();
  auto r = validate_program(p);
  CHECK_FALSE(r.ok());
  bool found = false;
  for (const auto& i : r.issues) found |= i.check == "unproduced";
  CHECK(found);
}

TEST_CASE("validator flags counter imbalance") {
  auto p = tiny_program();
  p.cores[0].memory[0].flags.valid_count = ValidCount(2);
  auto r = validate_program(p);
  CHECK_FALSE(r.ok());
  CHECK(r.issues[0].check == "balance");
}

TEST_CASE("validator flags out of bounds regions") {
  auto p = tiny_program();
  p.cores[0].memory[0].src.offset = (1 << 20) - 100;
  CHECK_FALSE(validate_program(p).ok());
  p = tiny_program();
  p.cores[0].compute[0].dst.offset = 4096 * 8;
  CHECK_FALSE(validate_program(p).ok());
}

TEST_CASE("validator flags loop mismatch and wrong streams") {
  auto p = tiny_program();
  p.cores[0].memory[0].loops = 2;
  auto r = validate_program(p);
  bool loops = false;
  for (const auto& i : r.issues) loops |= i.check == "loops";
  CHECK(loops);
  p = tiny_program();
  std::swap(p.cores[0].memory[0], p.cores[0].network[0]);
  CHECK_FALSE(validate_program(p).ok());
}

TEST_CASE("validator checks collective membership and arming") {
  auto p = tiny_program();
  p.cores[0].network.erase(p.cores[0].network.begin());
  CHECK_FALSE(validate_program(p).ok());
  p = tiny_program();
  p.collectives[1].block_bytes = {32};
  CHECK_FALSE(validate_program(p).ok());
}

TEST_CASE("disassembly lists every instruction") {
  auto p = tiny_program();
  auto s = disassemble(p);
  CHECK(s.find("MemDMA") != std::string::npos);
  CHECK(s.find("ComputeVMM") != std::string::npos);
  CHECK(s.find("NetSend k0 L0 c1") != std::string::npos);
}
