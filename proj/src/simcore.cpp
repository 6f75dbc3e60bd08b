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

#include "rpu/simcore.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <unordered_map>

#include "rpu/common.hpp"
#include "rpu/ring.hpp"

namespace rpu::sim {

const char* to_string(Pipe p) {
  switch (p) {
    case Pipe::Memory: return "memory";
    case Pipe::Network: return "network";
    case Pipe::Compute: return "compute";
  }
  return "?";
}

const char* to_string(Stall s) {
  switch (s) {
    case Stall::WeightData: return "weight_data";
    case Stall::Activation: return "activation";
    case Stall::Fragment: return "fragment";
    case Stall::BufferFull: return "buffer_full";
    case Stall::Coupling: return "coupling";
    case Stall::Link: return "link";
  }
  return "?";
}

const char* to_string(EventKind e) {
  switch (e) {
    case EventKind::Dma: return "dma";
    case EventKind::VmmChunk: return "vmm_chunk";
    case EventKind::VmmDone: return "vmm_done";
    case EventKind::Vop: return "vop";
    case EventKind::Send: return "send";
    case EventKind::Arm: return "arm";
    case EventKind::Inject: return "inject";
    case EventKind::LinkTx: return "link_tx";
    case EventKind::Arrive: return "arrive";
    case EventKind::Interrupt: return "interrupt";
  }
  return "?";
}

double TraceRecord::power_w() const {
  if (time_ps <= start_ps) return 0;
  return energy_pj / double(time_ps - start_ps);
}

void write_jsonl(std::ostream& os, const TraceRecord& r) {
  os << "{\"time_ns\":" << r.time_ps / 1000 << ",\"cu\":" << r.cu << ",\"core\":" << r.core << ",\"pipeline\":\""
     << to_string(r.pipe) << "\",\"event\":\"" << to_string(r.event) << "\",\"instr\":" << r.instr
     << ",\"layer\":" << r.layer << ",\"kernel\":" << r.kernel << ",\"bytes\":" << r.bytes
     << ",\"buffer_bytes\":" << r.buffer_bytes << ",\"power_w\":" << r.power_w() << ",\"energy_pj\":" << r.energy_pj
     << ",\"start_ns\":" << r.start_ps / 1000 << "}\n";
}

std::string StallReport::to_string() const {
  std::string s;
  for (const auto& b : blocked)
    s += "blocked core " + std::to_string(b.core) + " " + sim::to_string(b.pipe) + ": " + b.instruction + " (" +
         b.reason + ")\n";
  for (const auto& o : orphaned) s += "orphaned " + o + "\n";
  return s;
}

double TmacTiming::cycles() const { return std::max(tile + drain + reload, decoder); }

TmacTiming tmac_kernel_time(const isa::TensorDims& d, isa::VmmMode mode, uint32_t qvecs,
                            const arch::CoreConfig& core) {
  TmacTiming t;
  if (d.rows == 0 || d.cols == 0 || d.batch == 0) return t;
  const double tile_rows = std::ceil(d.rows / 8.0);
  const double tile_cols = std::ceil(d.cols / 8.0);
  const double stripes = std::ceil(d.rows / 64.0);
  const double tiles = tile_rows * tile_cols;
  const double tm = core.tmacs_per_core;
  if (mode == isa::VmmMode::Linear) {
    t.tile = tiles * d.batch / tm;
    t.drain = core.tree_drain_cycles * tile_cols * stripes;
    t.reload = core.stripe_reload_cycles * stripes;
    t.decoder = tiles * core.macs_per_tmac / core.decoder_weights_per_cycle;
  } else {
    // Query vectors of a KV head are spread over the TMACs; each KV stream
    // (head x batch element) is processed in turn.
    const double passes = std::ceil(std::max<uint32_t>(qvecs, 1) / tm);
    t.tile = tiles * passes * d.batch;
    t.drain = core.tree_drain_cycles * tile_cols * stripes * d.batch;
    t.reload = core.stripe_reload_cycles * stripes * d.batch;
    t.decoder = tiles * d.batch;
  }
  return t;
}

double collective_time(uint32_t members, double block_bytes, bool full_ring, const arch::SystemConfig& sys) {
  if (members == 0) throw Error("simcore", "collective needs at least one member");
  const auto& link = sys.intra_package_link;
  const double local = sys.intra_cu_latency + block_bytes / sys.intra_cu_bandwidth;
  if (members == 1) return local;
  const bool wrap = full_ring && members > 2;
  const double hops = wrap ? std::floor(members / 2.0) : members - 1;
  const double blocks_per_link = wrap ? std::floor(members / 2.0) : members - 1;
  return local + hops * link.latency + blocks_per_link * block_bytes / link.bandwidth;
}

TokenEstimate extrapolate(const SimStats& s, const isa::Program& p, const arch::SystemConfig& sys) {
  TokenEstimate e;
  const uint32_t S = p.simulated_layers, L = p.model_layers, per = std::max<uint32_t>(1, p.layer_period);
  if (S == 0 || s.layer_end.size() < S) throw Error("simcore", "simulation has no completed layers");
  if (S > per) {
    e.steady_layer = (s.layer_end[S - 1] - s.layer_end[S - 1 - per]) / per;
  } else {
    e.steady_layer = s.layer_end[S - 1] / S;
  }
  const double extra = L > S ? double(L - S) : 0.0;
  e.latency = s.time + extra * e.steady_layer;
  e.energy = s.energy;
  if (extra > 0) {
    EnergyStats per_layer;
    const uint32_t from = S > per ? S - per : 0;
    for (uint32_t l = from; l < S; ++l) {
      per_layer.memory += s.layer_energy[l].memory;
      per_layer.datapath += s.layer_energy[l].datapath;
      per_layer.compute += s.layer_energy[l].compute;
      per_layer.network += s.layer_energy[l].network;
    }
    const double n = S - from;
    e.energy.memory += extra * per_layer.memory / n;
    e.energy.datapath += extra * per_layer.datapath / n;
    e.energy.compute += extra * per_layer.compute / n;
    e.energy.network += extra * per_layer.network / n;
  }
  e.idle_energy = sys.power.idle_w_per_cu * sys.num_cus * e.latency;
  return e;
}

std::vector<double> power_trace(const std::vector<TraceRecord>& trace, const arch::SystemConfig& sys,
                                double window) {
  if (!(window > 0)) throw Error("simcore", "power window must be positive");
  uint64_t end = 0;
  for (const auto& r : trace) end = std::max(end, r.time_ps);
  const double w_ps = window * 1e12;
  const std::size_t n = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(end / w_ps)));
  std::vector<double> joules(n, 0.0);
  for (const auto& r : trace) {
    const double a = double(r.start_ps), b = double(r.time_ps);
    const double ej = r.energy_pj * 1e-12;
    if (b <= a) {
      joules[std::min(n - 1, static_cast<std::size_t>(a / w_ps))] += ej;
      continue;
    }
    for (auto i = static_cast<std::size_t>(a / w_ps); i < n && i * w_ps < b; ++i) {
      const double lo = std::max(a, i * w_ps), hi = std::min(b, (i + 1) * w_ps);
      if (hi > lo) joules[i] += ej * (hi - lo) / (b - a);
    }
  }
  std::vector<double> watts(n);
  for (std::size_t i = 0; i < n; ++i)
    watts[i] = joules[i] / window / sys.num_cus + sys.power.idle_w_per_cu;
  return watts;
}

// ---------------------------------------------------------------------------
// Event engine

namespace {

using isa::Instruction;
using isa::Opcode;
using isa::Region;
using isa::Space;
constexpr uint32_t kEB = isa::kEntryBytes;
constexpr uint32_t kNone = UINT32_MAX;

enum class Ev : uint8_t { Step, ChunkDone, Inject, Arrive };
enum class Wait : uint8_t { Entry, Launch, Collective, Forever };
enum class Progress { Continue, Busy, Blocked };

struct Event {
  uint64_t t;
  uint32_t cu;
  uint32_t core;
  uint8_t pipe;
  uint32_t instr;
  uint64_t seq;
  Ev type;
  uint32_t a = 0, b = 0, c = 0, hops = 0;
  int8_t dir = 0;
};

struct Later {
  bool operator()(const Event& x, const Event& y) const {
    if (x.t != y.t) return x.t > y.t;
    if (x.cu != y.cu) return x.cu > y.cu;
    if (x.core != y.core) return x.core > y.core;
    if (x.pipe != y.pipe) return x.pipe > y.pipe;
    if (x.instr != y.instr) return x.instr > y.instr;
    return x.seq > y.seq;
  }
};

struct NetEntry {
  uint8_t count = 0;
  uint32_t served = 0;
  uint32_t tickets = 0;
  uint32_t filled = 0;
};

struct WindowState {
  Region region;
  uint8_t vc = 1;
  bool fwd_dec = false;
  std::vector<uint32_t> tickets;
};

struct Piece {
  uint32_t coll;
  uint32_t occ;
  uint32_t bytes;
  uint64_t since;
};

struct Held {
  uint64_t offset;
  uint64_t bytes;
  uint64_t since;
};

struct PipeState {
  uint32_t pc = 0;
  uint64_t sub = 0;
  uint64_t aux_valid = 0;
  uint64_t aux_released = 0;
  bool launched = false;
  bool busy = false;
  bool done = false;
  bool waiting = false;
  Wait wait = Wait::Entry;
  Stall reason = Stall::WeightData;
  Space wait_space = Space::Memory;
  uint32_t wait_entry = 0;
  uint64_t since = 0;
  uint64_t chunk_start = 0;
  uint64_t busy_ps = 0;
  double chunk_energy = 0;
  uint64_t chunk_bytes = 0;
};

struct CoreState {
  std::vector<uint8_t> mcount, scount;
  std::vector<NetEntry> net;
  std::vector<std::vector<Piece>> parked;
  std::unordered_map<uint32_t, WindowState> windows;
  std::unordered_map<uint32_t, std::vector<Held>> held;
  PipeState pipe[3];
  int64_t launched_kernel = -1;
  uint32_t mem_occupied = 0;
  uint64_t occ_last = 0;
  double occ_integral = 0;
  uint32_t occ_peak = 0;
};

struct CollState {
  const isa::CollectiveDesc* d = nullptr;
  ring::Segment seg;
  std::vector<uint32_t> sent;
  std::vector<uint64_t> last_send;
  std::vector<uint32_t> arrived;
  std::vector<std::vector<uint64_t>> offsets;
  uint16_t layer = 0;
  bool layer_known = false;
};

class Engine {
 public:
  Engine(const isa::Program& p, const arch::SystemConfig& sys, const SimConfig& cfg)
      : p_(p), sys_(sys), cfg_(cfg), cpc_(p.cores_per_cu) {
    if (p.cores.size() != size_t(p.num_cus) * p.cores_per_cu || p.num_cus == 0)
      throw Error("simcore", "program core count does not match its CU count");
    if (p.num_cus != sys.num_cus || p.cores_per_cu != sys.cu.cores)
      throw Error("simcore", "program was compiled for a different system size");
    mem_pj_ = arch::memory_pj_per_bit(sys);
    pch_ps_per_byte_ = 1e12 / sys.core.pch_bandwidth;
    cycle_ps_ = 1e12 / sys.core.clock;
    cores_.resize(p.cores.size());
    for (auto& c : cores_) {
      c.mcount.assign(p.buffers.mem_entries, 0);
      c.scount.assign(p.buffers.scratch_entries, 0);
      c.net.assign(p.buffers.net_entries, {});
      c.parked.resize(p.buffers.net_entries);
    }
    colls_.resize(p.collectives.size());
    for (std::size_t i = 0; i < p.collectives.size(); ++i) {
      const auto& d = p.collectives[i];
      if (d.id != i) throw Error("simcore", "collective ids must be dense");
      auto& c = colls_[i];
      c.d = &d;
      c.seg = ring::make_segment(d.first, d.count, p.num_cus);
      c.sent.assign(d.count, 0);
      c.last_send.assign(d.count, 0);
      c.arrived.assign(d.count, 0);
      c.offsets.resize(d.count);
    }
    link_free_.assign(size_t(p.num_cus) * 2, 0);
    link_busy_ = 0;
    stats_.kernels.resize(p.kernels.size());
    kstart_.assign(p.kernels.size(), UINT64_MAX);
    kend_.assign(p.kernels.size(), 0);
    stats_.layer_end.assign(p.simulated_layers, 0);
    stats_.layer_energy.assign(p.simulated_layers + 1, {});
    hash_ = 0xcbf29ce484222325ULL;
  }

  SimStats run() {
    for (uint32_t core = 0; core < cores_.size(); ++core)
      for (uint8_t pp = 0; pp < 3; ++pp) push({0, cu_of(core), core, pp, 0, 0, Ev::Step});
    // Preloaded inputs are injected by the host at t = 0.
    for (auto& c : colls_)
      if (c.d->preloaded)
        for (uint32_t m = 0; m < c.d->count; ++m) push({0, c.d->first + m, cpc_, 1, 0, 0, Ev::Inject, c.d->id, m});

    bool limit = false;
    while (!q_.empty()) {
      Event e = q_.top();
      q_.pop();
      now_ = e.t;
      ++stats_.events;
      if (cfg_.max_events && stats_.events > cfg_.max_events) {
        limit = true;
        break;
      }
      switch (e.type) {
        case Ev::Step: step(e.core, e.pipe); break;
        case Ev::ChunkDone: chunk_done(e.core, e.pipe); break;
        case Ev::Inject: inject(e.a, e.b); break;
        case Ev::Arrive: arrive(e.a, e.b, e.c, e.hops, e.dir); break;
      }
    }
    finish(limit);
    return std::move(stats_);
  }

 private:
  // --- helpers -------------------------------------------------------------

  uint32_t cu_of(uint32_t core) const { return core / cpc_; }

  void push(Event e) {
    e.seq = seq_++;
    q_.push(e);
  }

  const std::vector<Instruction>& stream(uint32_t core, uint8_t pipe) const {
    const auto& c = p_.cores[core];
    return pipe == 0 ? c.memory : (pipe == 1 ? c.network : c.compute);
  }

  uint32_t entries(Space s) const { return p_.buffers.entries(s); }

  uint32_t entry_of(const Region& r, uint64_t occ) const {
    return static_cast<uint32_t>((r.offset / kEB + occ) % entries(r.space));
  }

  static uint64_t occurrences(const Region& r) { return ceil_div(r.length, kEB); }

  uint8_t count(uint32_t core, Space s, uint32_t e) const {
    const auto& c = cores_[core];
    switch (s) {
      case Space::MemBuffer: return c.mcount[e];
      case Space::Scratch: return c.scount[e];
      case Space::NetBuffer: return c.net[e].count;
      default: return 0;
    }
  }

  uint8_t& count_ref(uint32_t core, Space s, uint32_t e) {
    auto& c = cores_[core];
    if (s == Space::MemBuffer) return c.mcount[e];
    if (s == Space::Scratch) return c.scount[e];
    return c.net[e].count;
  }

  void note_occupancy(uint32_t core) {
    auto& c = cores_[core];
    c.occ_integral += double(c.mem_occupied) * double(now_ - c.occ_last);
    c.occ_last = now_;
    c.occ_peak = std::max(c.occ_peak, c.mem_occupied);
  }

  void set_count(uint32_t core, Space s, uint32_t e, uint8_t v) {
    if (v > 3) {
      ++stats_.counter_violations;
      v = 3;
    }
    uint8_t& r = count_ref(core, s, e);
    if (s == Space::MemBuffer && (r == 0) != (v == 0)) {
      note_occupancy(core);
      cores_[core].mem_occupied += v ? 1 : -1;
    }
    r = v;
    stats_.max_valid_count = std::max<uint32_t>(stats_.max_valid_count, v);
    wake(core, s, e);
  }

  void decrement(uint32_t core, Space s, uint32_t e) {
    uint8_t& r = count_ref(core, s, e);
    if (r == 0) {
      ++stats_.counter_violations;
      return;
    }
    if (r == 1 && s == Space::MemBuffer) {
      note_occupancy(core);
      --cores_[core].mem_occupied;
    }
    --r;
    if (r == 0) {
      wake(core, s, e);
      if (s == Space::NetBuffer) retry_parked(core, e);
    }
  }

  void block(uint32_t core, uint8_t pipe, Wait w, Stall reason, Space s = Space::Memory, uint32_t e = 0) {
    auto& ps = cores_[core].pipe[pipe];
    ps.waiting = true;
    ps.wait = w;
    ps.reason = reason;
    ps.wait_space = s;
    ps.wait_entry = e;
    ps.since = now_;
  }

  void resume(uint32_t core, uint8_t pipe) {
    auto& ps = cores_[core].pipe[pipe];
    ps.waiting = false;
    stats_.stall[static_cast<int>(ps.reason)] += double(now_ - ps.since) * 1e-12;
    push({now_, cu_of(core), core, pipe, ps.pc, 0, Ev::Step});
  }

  void wake(uint32_t core, Space s, uint32_t e) {
    auto& c = cores_[core];
    for (uint8_t pp = 0; pp < 3; ++pp) {
      const auto& ps = c.pipe[pp];
      if (ps.waiting && ps.wait == Wait::Entry && ps.wait_space == s && ps.wait_entry == e) resume(core, pp);
    }
  }

  void record(TraceRecord r, int category) {
    // category: 0 memory+datapath, 1 compute, 2 network, -1 none
    if (r.kernel < kstart_.size() && r.event != EventKind::Arm && r.core >= 0) {
      kstart_[r.kernel] = std::min(kstart_[r.kernel], r.start_ps);
      kend_[r.kernel] = std::max(kend_[r.kernel], r.time_ps);
    }
    const std::size_t li = std::min<std::size_t>(r.layer, stats_.layer_energy.size() - 1);
    auto& le = stats_.layer_energy[li];
    if (category == 0) {
      const double bits = double(r.bytes) * 8;
      const double m = bits * mem_pj_ * 1e-12, d = bits * sys_.power.datapath_pj_per_bit * 1e-12;
      stats_.energy.memory += m;
      stats_.energy.datapath += d;
      le.memory += m;
      le.datapath += d;
    } else if (category == 1) {
      stats_.energy.compute += r.energy_pj * 1e-12;
      le.compute += r.energy_pj * 1e-12;
    } else if (category == 2) {
      stats_.energy.network += r.energy_pj * 1e-12;
      le.network += r.energy_pj * 1e-12;
    }
    uint64_t packed[6] = {r.time_ps, (uint64_t(r.cu) << 32) | uint32_t(r.core),
                          (uint64_t(r.pipe) << 40) | (uint64_t(r.event) << 32) | r.instr, r.bytes, r.buffer_bytes,
                          static_cast<uint64_t>(std::llround(r.energy_pj * 1000))};
    hash_ = fnv1a(packed, sizeof(packed), hash_);
    if (cfg_.trace_out) write_jsonl(*cfg_.trace_out, r);
    if (cfg_.keep_trace) stats_.trace.push_back(r);
  }

  TraceRecord rec(uint32_t core, uint8_t pipe, EventKind ev, const Instruction& in, uint64_t start, uint64_t bytes,
                  double pj) {
    TraceRecord r;
    r.time_ps = now_;
    r.start_ps = start;
    r.cu = cu_of(core);
    r.core = static_cast<int32_t>(core);
    r.pipe = static_cast<Pipe>(pipe);
    r.event = ev;
    r.instr = in.id;
    r.layer = in.layer;
    r.kernel = in.kernel;
    r.bytes = bytes;
    r.buffer_bytes = uint64_t(cores_[core].mem_occupied) * kEB;
    r.energy_pj = pj;
    return r;
  }

  void start_busy(uint32_t core, uint8_t pipe, double ps) {
    auto& st = cores_[core].pipe[pipe];
    st.busy = true;
    st.chunk_start = now_;
    const uint64_t dur = static_cast<uint64_t>(std::llround(std::max(0.0, ps)));
    push({now_ + dur, cu_of(core), core, pipe, st.pc, 0, Ev::ChunkDone});
  }

  void reset(PipeState& ps) {
    ps.pc++;
    ps.sub = 0;
    ps.aux_valid = 0;
    ps.aux_released = 0;
    ps.launched = false;
  }

  // --- pipelines ----------------------------------------------------------

  void step(uint32_t core, uint8_t pipe) {
    auto& ps = cores_[core].pipe[pipe];
    if (ps.busy || ps.waiting || ps.done) return;
    const auto& s = stream(core, pipe);
    while (true) {
      if (ps.pc >= s.size()) {
        ps.done = true;
        return;
      }
      const Instruction& in = s[ps.pc];
      Progress r = Progress::Continue;
      switch (in.op) {
        case Opcode::MemDMA: r = try_dma(core, pipe, in); break;
        case Opcode::ComputeVMM: r = try_vmm(core, pipe, in); break;
        case Opcode::ComputeVOP: r = try_vop(core, pipe, in); break;
        case Opcode::NetSend: r = try_send(core, pipe, in); break;
        case Opcode::NetForward: r = do_arm(core, pipe, in); break;
        case Opcode::Interrupt: {
          stats_.time = std::max(stats_.time, double(now_) * 1e-12);
          record(rec(core, pipe, EventKind::Interrupt, in, now_, 0, 0), -1);
          break;
        }
      }
      if (r == Progress::Continue) {
        reset(ps);
        continue;
      }
      return;
    }
  }

  void chunk_done(uint32_t core, uint8_t pipe) {
    auto& ps = cores_[core].pipe[pipe];
    ps.busy = false;
    ps.busy_ps += now_ - ps.chunk_start;
    const Instruction& in = stream(core, pipe)[ps.pc];
    bool finished = false;
    switch (in.op) {
      case Opcode::MemDMA: finished = finish_dma(core, pipe, in); break;
      case Opcode::ComputeVMM: finished = finish_vmm_chunk(core, pipe, in); break;
      case Opcode::ComputeVOP: finished = finish_vop(core, pipe, in); break;
      case Opcode::NetSend: finished = finish_send(core, pipe, in); break;
      default: break;
    }
    if (finished) reset(ps);
    step(core, pipe);
  }

  bool all_valid(uint32_t core, const Region& r, uint64_t from, uint64_t upto, uint32_t* blocked_entry,
                 uint64_t* first_missing) {
    for (uint64_t occ = from; occ < upto; ++occ) {
      const uint32_t e = entry_of(r, occ);
      if (count(core, r.space, e) == 0) {
        *blocked_entry = e;
        *first_missing = occ;
        return false;
      }
    }
    *first_missing = upto;
    return true;
  }

  bool all_free(uint32_t core, const Region& r, uint32_t* blocked_entry) {
    for (uint64_t occ = 0; occ < occurrences(r); ++occ) {
      const uint32_t e = entry_of(r, occ);
      if (count(core, r.space, e) != 0) {
        *blocked_entry = e;
        return false;
      }
    }
    return true;
  }

  Stall input_stall(Space s) const { return s == Space::NetBuffer ? Stall::Activation : Stall::Fragment; }

  Progress try_dma(uint32_t core, uint8_t pipe, const Instruction& in) {
    auto& ps = cores_[core].pipe[pipe];
    const uint64_t n = ceil_div(in.bytes, kEB);
    if (ps.sub >= n) return Progress::Continue;
    if (!cfg_.decoupled && cores_[core].launched_kernel < int64_t(in.kernel)) {
      block(core, pipe, Wait::Launch, Stall::Coupling);
      return Progress::Blocked;
    }
    const uint32_t e = entry_of(in.dst, ps.sub);
    if (in.flags.check_valid && cores_[core].mcount[e] != 0) {
      block(core, pipe, Wait::Entry, Stall::BufferFull, Space::MemBuffer, e);
      return Progress::Blocked;
    }
    const uint64_t bytes = std::min<uint64_t>(kEB, in.bytes - ps.sub * kEB);
    ps.chunk_bytes = bytes;
    start_busy(core, pipe, double(bytes) * pch_ps_per_byte_);
    return Progress::Busy;
  }

  bool finish_dma(uint32_t core, uint8_t pipe, const Instruction& in) {
    auto& ps = cores_[core].pipe[pipe];
    const uint32_t e = entry_of(in.dst, ps.sub);
    set_count(core, Space::MemBuffer, e, in.flags.valid_count.value());
    const double bits = double(ps.chunk_bytes) * 8;
    record(rec(core, pipe, EventKind::Dma, in, ps.chunk_start, ps.chunk_bytes,
               bits * (mem_pj_ + sys_.power.datapath_pj_per_bit)),
           0);
    ps.sub++;
    return ps.sub >= ceil_div(in.bytes, kEB);
  }

  bool window_too_small(const Region& r) const { return occurrences(r) > entries(r.space); }

  /// Occurrences of the activation window needed before weight chunk `sub`.
  uint64_t act_needed(const Instruction& in, uint64_t sub, uint64_t chunks) const {
    const uint64_t total = occurrences(in.aux);
    if (static_cast<isa::VmmMode>(in.sub_kind) != isa::VmmMode::Linear || in.dims.rows == 0) return total;
    const double f = std::min(1.0, double((sub + 1) * kEB) / double(in.src.length));
    const uint64_t rows_done = std::max<uint64_t>(1, static_cast<uint64_t>(std::ceil(f * in.dims.rows)));
    const uint64_t stripe = (rows_done - 1) / 64;
    const uint64_t G = std::max<uint16_t>(1, in.row_groups);
    const double k_total = double(in.dims.rows) * G;
    const double row_bytes = double(in.aux.length) / k_total;
    const double rows = std::min(k_total, double((stripe * G + in.row_group_index + 1) * 64));
    (void)chunks;
    return std::min(total, ceil_div(static_cast<uint64_t>(std::ceil(rows * row_bytes)), kEB));
  }

  /// Activation occurrences no longer needed once chunk `sub` starts.
  uint64_t act_releasable(const Instruction& in, uint64_t sub) const {
    if (static_cast<isa::VmmMode>(in.sub_kind) != isa::VmmMode::Linear || in.dims.rows == 0) return 0;
    const double f = double(sub * kEB) / double(in.src.length);
    const uint64_t row_first = static_cast<uint64_t>(std::floor(f * in.dims.rows));
    const uint64_t stripe = row_first / 64;
    const uint64_t G = std::max<uint16_t>(1, in.row_groups);
    const double row_bytes = double(in.aux.length) / (double(in.dims.rows) * G);
    return static_cast<uint64_t>(std::floor(double(stripe * G * 64) * row_bytes)) / kEB;
  }

  void release_aux(uint32_t core, PipeState& ps, const Instruction& in, uint64_t upto) {
    upto = std::min(upto, ps.aux_valid);
    if (in.flags.decrement_aux)
      for (uint64_t occ = ps.aux_released; occ < upto; ++occ) decrement(core, in.aux.space, entry_of(in.aux, occ));
    ps.aux_released = std::max(ps.aux_released, upto);
  }

  bool launch(uint32_t core, uint8_t pipe, const Instruction& in, uint32_t coll) {
    auto& ps = cores_[core].pipe[pipe];
    if (ps.launched) return true;
    if (!cfg_.decoupled && coll != kNone) {
      const auto& c = colls_[coll];
      const uint32_t m = cu_of(core) - c.d->first;
      if (c.arrived[m] < c.d->count) {
        block(core, pipe, Wait::Collective, Stall::Coupling, Space::NetBuffer, coll);
        return false;
      }
    }
    ps.launched = true;
    auto& cs = cores_[core];
    if (int64_t(in.kernel) > cs.launched_kernel) {
      cs.launched_kernel = in.kernel;
      auto& mp = cs.pipe[0];
      if (mp.waiting && mp.wait == Wait::Launch) resume(core, 0);
    }
    return true;
  }

  Progress try_vmm(uint32_t core, uint8_t pipe, const Instruction& in) {
    auto& ps = cores_[core].pipe[pipe];
    const bool net_act = in.aux.space == Space::NetBuffer && in.aux.length > 0;
    const auto mode = static_cast<isa::VmmMode>(in.sub_kind);
    if (!launch(core, pipe, in, net_act && mode == isa::VmmMode::Linear ? in.collective : kNone))
      return Progress::Blocked;
    const uint64_t n = in.src.length ? occurrences(in.src) : 0;
    uint32_t e = 0;
    uint64_t missing = 0;
    if (ps.sub < n) {
      const uint32_t we = entry_of(in.src, ps.sub);
      if (cores_[core].mcount[we] == 0) {
        block(core, pipe, Wait::Entry, Stall::WeightData, Space::MemBuffer, we);
        return Progress::Blocked;
      }
      const uint64_t need = act_needed(in, ps.sub, n);
      if (need > ps.aux_valid) {
        const uint64_t cap = entries(in.aux.space);
        // One weight chunk may span more stripes than the buffer holds: a
        // streaming consumer retires the leading stripes within the chunk.
        while (need - ps.aux_released > cap) {
          if (!in.flags.decrement_aux) {
            block(core, pipe, Wait::Forever, Stall::BufferFull, in.aux.space, 0);
            return Progress::Blocked;
          }
          const uint64_t upto = ps.aux_released + cap;
          if (upto > ps.aux_valid) {
            if (!all_valid(core, in.aux, ps.aux_valid, upto, &e, &missing)) {
              ps.aux_valid = missing;
              block(core, pipe, Wait::Entry, input_stall(in.aux.space), in.aux.space, e);
              return Progress::Blocked;
            }
            ps.aux_valid = upto;
          }
          release_aux(core, ps, in, need - cap);
        }
        if (!all_valid(core, in.aux, ps.aux_valid, need, &e, &missing)) {
          ps.aux_valid = missing;
          block(core, pipe, Wait::Entry, input_stall(in.aux.space), in.aux.space, e);
          return Progress::Blocked;
        }
        ps.aux_valid = need;
      }
      const TmacTiming t = tmac_kernel_time(in.dims, mode, in.qvecs, sys_.core);
      const uint64_t bytes = std::min<uint64_t>(kEB, in.src.length - ps.sub * kEB);
      const double frac = double(bytes) / double(in.src.length);
      ps.chunk_bytes = bytes;
      ps.chunk_energy = vmm_ops(in) * frac * sys_.power.compute_pj_per_op;
      start_busy(core, pipe, t.cycles() * frac * cycle_ps_);
      return Progress::Busy;
    }
    // Drain: consume what remains of the activation window, then publish.
    const uint64_t total = occurrences(in.aux);
    if (total > ps.aux_valid) {
      if (in.flags.decrement_aux && window_too_small(in.aux)) release_aux(core, ps, in, ps.aux_valid);
      while (ps.aux_valid < total) {
        const uint64_t upto = std::min(total, ps.aux_released + entries(in.aux.space));
        if (upto <= ps.aux_valid) {
          block(core, pipe, Wait::Forever, Stall::BufferFull, in.aux.space, 0);
          return Progress::Blocked;
        }
        if (!all_valid(core, in.aux, ps.aux_valid, upto, &e, &missing)) {
          ps.aux_valid = missing;
          if (in.flags.decrement_aux && !window_too_small(in.aux)) {
          } else if (in.flags.decrement_aux) {
            release_aux(core, ps, in, ps.aux_valid);
          }
          block(core, pipe, Wait::Entry, input_stall(in.aux.space), in.aux.space, e);
          return Progress::Blocked;
        }
        ps.aux_valid = upto;
        if (window_too_small(in.aux)) release_aux(core, ps, in, ps.aux_valid);
      }
    }
    if (in.dst.length && !all_free(core, in.dst, &e)) {
      block(core, pipe, Wait::Entry, Stall::BufferFull, in.dst.space, e);
      return Progress::Blocked;
    }
    release_aux(core, ps, in, total);
    for (uint64_t occ = 0; occ < occurrences(in.dst); ++occ)
      set_count(core, in.dst.space, entry_of(in.dst, occ), in.flags.valid_count.value());
    note_layer_end(in);
    record(rec(core, pipe, EventKind::VmmDone, in, now_, in.dst.length, 0), -1);
    return Progress::Continue;
  }

  double vmm_ops(const Instruction& in) const {
    return 2.0 * in.dims.rows * double(in.dims.cols) * in.dims.batch * std::max<uint16_t>(1, in.qvecs);
  }

  bool finish_vmm_chunk(uint32_t core, uint8_t pipe, const Instruction& in) {
    auto& ps = cores_[core].pipe[pipe];
    if (in.flags.decrement_on_read) decrement(core, Space::MemBuffer, entry_of(in.src, ps.sub));
    record(rec(core, pipe, EventKind::VmmChunk, in, ps.chunk_start, ps.chunk_bytes, ps.chunk_energy), 1);
    ps.sub++;
    const uint64_t n = occurrences(in.src);
    if (ps.sub < n) release_aux(core, ps, in, act_releasable(in, ps.sub));
    return false;  // the drain step publishes the result
  }

  Progress try_vop(uint32_t core, uint8_t pipe, const Instruction& in) {
    auto& ps = cores_[core].pipe[pipe];
    if (!launch(core, pipe, in, kNone)) return Progress::Blocked;
    uint32_t e = 0;
    uint64_t missing = 0;
    for (const Region* r : {&in.src, &in.aux}) {
      if (!r->length) continue;
      if (window_too_small(*r)) {
        block(core, pipe, Wait::Forever, Stall::BufferFull, r->space, 0);
        return Progress::Blocked;
      }
      if (!all_valid(core, *r, 0, occurrences(*r), &e, &missing)) {
        block(core, pipe, Wait::Entry, input_stall(r->space), r->space, e);
        return Progress::Blocked;
      }
    }
    if (in.dst.length && !all_free(core, in.dst, &e)) {
      block(core, pipe, Wait::Entry, Stall::BufferFull, in.dst.space, e);
      return Progress::Blocked;
    }
    const double ops = double(in.dims.rows) * in.dims.cols * in.dims.batch * std::max<uint16_t>(1, in.ops_per_element);
    ps.chunk_energy = ops * sys_.power.vop_pj_per_op;
    ps.chunk_bytes = in.dst.length;
    start_busy(core, pipe, ops / sys_.core.hpvop_lanes * cycle_ps_);
    return Progress::Busy;
  }

  bool finish_vop(uint32_t core, uint8_t pipe, const Instruction& in) {
    auto& ps = cores_[core].pipe[pipe];
    if (in.flags.decrement_on_read)
      for (uint64_t occ = 0; occ < occurrences(in.src); ++occ) decrement(core, in.src.space, entry_of(in.src, occ));
    if (in.flags.decrement_aux)
      for (uint64_t occ = 0; occ < occurrences(in.aux); ++occ) decrement(core, in.aux.space, entry_of(in.aux, occ));
    for (uint64_t occ = 0; occ < occurrences(in.dst); ++occ)
      set_count(core, in.dst.space, entry_of(in.dst, occ), in.flags.valid_count.value());
    note_layer_end(in);
    record(rec(core, pipe, EventKind::Vop, in, ps.chunk_start, ps.chunk_bytes, ps.chunk_energy), 1);
    return true;
  }

  void note_layer_end(const Instruction& in) {
    if (in.layer < stats_.layer_end.size())
      stats_.layer_end[in.layer] = std::max(stats_.layer_end[in.layer], double(now_) * 1e-12);
  }

  Progress try_send(uint32_t core, uint8_t pipe, const Instruction& in) {
    auto& ps = cores_[core].pipe[pipe];
    if (in.collective >= colls_.size()) {
      block(core, pipe, Wait::Forever, Stall::Link);
      return Progress::Blocked;
    }
    uint32_t e = 0;
    uint64_t missing = 0;
    if (in.src.length) {
      if (window_too_small(in.src)) {
        block(core, pipe, Wait::Forever, Stall::BufferFull, in.src.space, 0);
        return Progress::Blocked;
      }
      if (!all_valid(core, in.src, 0, occurrences(in.src), &e, &missing)) {
        block(core, pipe, Wait::Entry, Stall::Fragment, in.src.space, e);
        return Progress::Blocked;
      }
    }
    ps.chunk_bytes = in.bytes;
    start_busy(core, pipe, double(in.bytes) / sys_.intra_cu_bandwidth * 1e12);
    return Progress::Busy;
  }

  bool finish_send(uint32_t core, uint8_t pipe, const Instruction& in) {
    auto& ps = cores_[core].pipe[pipe];
    if (in.flags.decrement_on_read)
      for (uint64_t occ = 0; occ < occurrences(in.src); ++occ) decrement(core, in.src.space, entry_of(in.src, occ));
    auto& c = colls_[in.collective];
    if (!c.layer_known) {
      c.layer = in.layer;
      c.layer_known = true;
    }
    record(rec(core, pipe, EventKind::Send, in, ps.chunk_start, in.bytes, 0), -1);
    const uint32_t cu = cu_of(core);
    if (cu >= c.d->first && cu < c.d->first + c.d->count) {
      const uint32_t m = cu - c.d->first;
      c.last_send[m] = std::max(c.last_send[m], now_);
      if (++c.sent[m] == cpc_) {
        const uint64_t lat = static_cast<uint64_t>(std::llround(sys_.intra_cu_latency * 1e12));
        push({now_ + lat, cu, cpc_, 1, 0, 0, Ev::Inject, in.collective, m});
      }
    }
    return true;
  }

  Progress do_arm(uint32_t core, uint8_t pipe, const Instruction& in) {
    if (in.collective >= colls_.size()) {
      block(core, pipe, Wait::Forever, Stall::Link);
      return Progress::Blocked;
    }
    auto& cs = cores_[core];
    WindowState w;
    w.region = in.dst;
    w.vc = in.flags.valid_count.value();
    w.fwd_dec = in.flags.decrement_on_read;
    const uint64_t n = occurrences(in.dst);
    w.tickets.resize(n);
    for (uint64_t occ = 0; occ < n; ++occ) w.tickets[occ] = cs.net[entry_of(in.dst, occ)].tickets++;
    cs.windows[in.collective] = std::move(w);
    record(rec(core, pipe, EventKind::Arm, in, now_, in.dst.length, 0), -1);
    auto it = cs.held.find(in.collective);
    if (it != cs.held.end()) {
      auto blocks = std::move(it->second);
      cs.held.erase(it);
      for (const auto& h : blocks) write_block(core, in.collective, h.offset, h.bytes, h.since);
    }
    return Progress::Continue;
  }

  // --- network --------------------------------------------------------------

  const std::vector<uint64_t>& layout(uint32_t coll, uint32_t member) {
    auto& c = colls_[coll];
    auto& off = c.offsets[member];
    if (off.empty()) {
      off.assign(c.d->count, 0);
      uint64_t acc = 0;
      for (uint32_t src : ring::arrival_order(c.seg, member)) {
        off[src] = acc;
        acc += c.d->piece(src, member);
      }
    }
    return off;
  }

  void inject(uint32_t coll, uint32_t member) {
    auto& c = colls_[coll];
    TraceRecord r;
    r.time_ps = r.start_ps = now_;
    r.cu = c.d->first + member;
    r.pipe = Pipe::Network;
    r.event = EventKind::Inject;
    r.instr = coll;
    r.layer = c.layer;
    r.bytes = c.d->block_bytes[member];
    record(r, -1);
    arrive(coll, member, member, 0, 0);
    for (int dir : {+1, -1}) {
      const uint32_t h = ring::reach(c.seg, member, dir);
      if (h > 0) transmit(coll, member, member, dir, h);
    }
  }

  void transmit(uint32_t coll, uint32_t src, uint32_t node, int dir, uint32_t hops) {
    auto& c = colls_[coll];
    const uint32_t P = p_.num_cus;
    const uint32_t pos = c.d->first + node;
    const uint32_t link_pos = dir > 0 ? pos : (pos + P - 1) % P;
    const auto& link = sys_.link_after(link_pos);
    const std::size_t li = size_t(pos) * 2 + (dir > 0 ? 0 : 1);
    uint32_t next = node;
    if (dir > 0) next = c.seg.wrap ? (node + 1) % c.d->count : node + 1;
    else next = c.seg.wrap ? (node + c.d->count - 1) % c.d->count : node - 1;
    uint64_t bytes = c.d->block_bytes[src];
    if (c.d->scatter) {
      bytes = 0;
      for (uint32_t h = 0, m = next; h < hops; ++h) {
        bytes += c.d->piece(src, m);
        m = dir > 0 ? (m + 1) % c.d->count : (m + c.d->count - 1) % c.d->count;
      }
    }
    const uint64_t start = std::max(now_, link_free_[li]);
    const uint64_t dur = static_cast<uint64_t>(std::llround(double(bytes) / link.bandwidth * 1e12));
    link_free_[li] = start + dur;
    link_busy_ += dur;
    stats_.stall[static_cast<int>(Stall::Link)] += double(start - now_) * 1e-12;
    const uint64_t lat = static_cast<uint64_t>(std::llround(link.latency * 1e12));
    TraceRecord r;
    r.start_ps = start;
    r.time_ps = start + dur;
    r.cu = pos;
    r.pipe = Pipe::Network;
    r.event = EventKind::LinkTx;
    r.instr = coll;
    r.layer = c.layer;
    r.bytes = bytes;
    r.energy_pj = double(bytes) * 8 * link.energy_pj_per_bit;
    record(r, 2);
    Event e{start + dur + lat, c.d->first + next, cpc_, 1, 0, 0, Ev::Arrive, coll, src, next, hops - 1};
    e.dir = static_cast<int8_t>(dir);
    push(e);
  }

  void arrive(uint32_t coll, uint32_t src, uint32_t at, uint32_t hops, int dir) {
    auto& c = colls_[coll];
    if (hops > 0) transmit(coll, src, at, dir, hops);
    const uint32_t cu = c.d->first + at;
    const uint64_t off = layout(coll, at)[src];
    const uint64_t bytes = c.d->piece(src, at);
    for (uint32_t k = 0; k < cpc_; ++k) write_block(cu * cpc_ + k, coll, off, bytes, now_);
    if (++c.arrived[at] == c.d->count) {
      std::vector<uint64_t>().swap(c.offsets[at]);
      for (uint32_t k = 0; k < cpc_; ++k) {
        auto& ps = cores_[cu * cpc_ + k].pipe[2];
        if (ps.waiting && ps.wait == Wait::Collective && ps.wait_entry == coll) resume(cu * cpc_ + k, 2);
      }
    }
  }

  void write_block(uint32_t core, uint32_t coll, uint64_t off, uint64_t bytes, uint64_t since) {
    if (bytes == 0) return;
    auto& cs = cores_[core];
    auto it = cs.windows.find(coll);
    if (it == cs.windows.end()) {
      cs.held[coll].push_back({off, bytes, since});
      return;
    }
    const uint64_t end = std::min(off + bytes, it->second.region.length);
    for (uint64_t occ = off / kEB; occ * kEB < end; ++occ) {
      const uint64_t lo = std::max(off, occ * kEB), hi = std::min(end, (occ + 1) * kEB);
      if (hi > lo) try_piece(core, coll, it->second, {coll, uint32_t(occ), uint32_t(hi - lo), since});
    }
  }

  bool try_piece(uint32_t core, uint32_t coll, WindowState& w, const Piece& pc) {
    auto& cs = cores_[core];
    const uint32_t e = entry_of(w.region, pc.occ);
    NetEntry& ne = cs.net[e];
    if (ne.served != w.tickets[pc.occ] || ne.count != 0) {
      cs.parked[e].push_back(pc);
      return false;
    }
    if (core % cpc_ == 0 && now_ > pc.since) stats_.stall[static_cast<int>(Stall::Link)] += double(now_ - pc.since) * 1e-12;
    ne.filled += pc.bytes;
    const uint64_t expected = std::min<uint64_t>(kEB, w.region.length - uint64_t(pc.occ) * kEB);
    if (ne.filled >= expected) {
      ne.filled = 0;
      ne.served++;
      set_count(core, Space::NetBuffer, e, w.vc);
      if (w.fwd_dec) decrement(core, Space::NetBuffer, e);
    }
    (void)coll;
    return true;
  }

  void retry_parked(uint32_t core, uint32_t e) {
    auto& cs = cores_[core];
    if (cs.parked[e].empty()) return;
    auto pending = std::move(cs.parked[e]);
    cs.parked[e].clear();
    for (const auto& pc : pending) {
      auto it = cs.windows.find(pc.coll);
      try_piece(core, pc.coll, it->second, pc);
    }
  }

  // --- wrap-up --------------------------------------------------------------

  void finish(bool limit) {
    StallReport rep;
    if (limit) rep.blocked.push_back({0, Pipe::Memory, "", "event limit reached"});
    double busy[3] = {0, 0, 0};
    for (uint32_t core = 0; core < cores_.size(); ++core) {
      auto& cs = cores_[core];
      note_occupancy(core);
      for (uint8_t pp = 0; pp < 3; ++pp) {
        const auto& ps = cs.pipe[pp];
        busy[pp] += double(ps.busy_ps);
        if (!ps.done && rep.blocked.size() < 64) {
          const auto& s = stream(core, pp);
          std::string why = ps.waiting ? std::string(to_string(ps.reason)) : "not started";
          if (ps.waiting && ps.wait == Wait::Entry)
            why += " on " + std::string(isa::to_string(ps.wait_space)) + " entry " + std::to_string(ps.wait_entry);
          if (ps.waiting && ps.wait == Wait::Forever) why += " (window larger than buffer)";
          rep.blocked.push_back({core, static_cast<Pipe>(pp), ps.pc < s.size() ? isa::disassemble(s[ps.pc]) : "",
                                 why});
        }
      }
      if (rep.orphaned.size() < 32) {
        auto scan = [&](const char* name, auto get, std::size_t n) {
          for (std::size_t e = 0; e < n && rep.orphaned.size() < 32; ++e)
            if (get(e)) rep.orphaned.push_back("core " + std::to_string(core) + " " + name + " entry " + std::to_string(e));
        };
        scan("mbuf", [&](std::size_t e) { return cs.mcount[e] != 0; }, cs.mcount.size());
        scan("scr", [&](std::size_t e) { return cs.scount[e] != 0; }, cs.scount.size());
        scan("nbuf", [&](std::size_t e) { return cs.net[e].count != 0 || cs.net[e].filled != 0; }, cs.net.size());
      }
      stats_.buffer_peak = std::max(stats_.buffer_peak, double(cs.occ_peak) * kEB);
    }
    if (!rep.blocked.empty() || !rep.orphaned.empty()) stats_.stalled = std::move(rep);

    const double T = double(now_);
    const double n = double(cores_.size());
    if (T > 0) {
      stats_.util_memory = busy[0] / (n * T);
      stats_.util_compute = busy[2] / (n * T);
      stats_.util_network = double(link_busy_) / (2.0 * p_.num_cus * T);
      double integral = 0;
      for (const auto& cs : cores_) integral += cs.occ_integral;
      stats_.buffer_mean = integral / (n * T) * kEB;
    }
    if (stats_.time == 0) stats_.time = T * 1e-12;
    for (std::size_t k = 0; k < p_.kernels.size(); ++k) {
      auto& ks = stats_.kernels[k];
      const auto& ki = p_.kernels[k];
      ks.name = ki.name;
      ks.layer = ki.layer;
      ks.kind = ki.kind;
      ks.ops = ki.ops;
      ks.bytes_from_memory = ki.bytes_from_memory;
      ks.cores = ki.cores;
      if (kstart_[k] != UINT64_MAX) {
        ks.start = double(kstart_[k]) * 1e-12;
        ks.end = double(kend_[k]) * 1e-12;
      }
      arch::KernelShape shape;
      shape.ops = ki.ops;
      shape.bytes_from_memory = ki.bytes_from_memory;
      ks.roofline = ki.cores ? arch::roofline_time_on_cores(shape, sys_, ki.cores) : 0;
    }
    stats_.trace_hash = hash_;
  }

  const isa::Program& p_;
  const arch::SystemConfig& sys_;
  SimConfig cfg_;
  uint32_t cpc_;
  double mem_pj_ = 0, pch_ps_per_byte_ = 0, cycle_ps_ = 0;
  std::vector<CoreState> cores_;
  std::vector<CollState> colls_;
  std::vector<uint64_t> link_free_;
  uint64_t link_busy_ = 0;
  std::priority_queue<Event, std::vector<Event>, Later> q_;
  uint64_t now_ = 0, seq_ = 0, hash_ = 0;
  std::vector<uint64_t> kstart_, kend_;
  SimStats stats_;
};

}  // namespace

SimStats simulate(const isa::Program& p, const arch::SystemConfig& sys, const SimConfig& cfg) {
  return Engine(p, sys, cfg).run();
}

}  // namespace rpu::sim
